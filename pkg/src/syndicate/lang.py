"""
While-language frontend: AST, parser, pretty-printer and loop enumeration.

Concrete syntax (C-like):

    y := n; z := n + 1;
    while (m + y >= 0 && m <= n) {
        m := 2 * m + y;
        y := z;
        z := z + 1;
    }

Statements are `skip;`, `x := e;`, `x++;`, `x--;`, `if (b) { .. } else { .. }`
and `while (b) { .. }`.  `x := nondet();` assigns a fresh unconstrained integer.
Division truncates toward zero.  `//` starts a line comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union


class ParseError(Exception):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column


class ValidationError(ParseError):
    pass


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IntLit:
    value: int


@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Nondet:
    pass


Expr = Union[IntLit, VarRef, Neg, BinOp, Nondet]


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class Cmp:
    op: str  # one of < <= > >= == !=
    left: Expr
    right: Expr


@dataclass(frozen=True)
class And:
    left: "BExpr"
    right: "BExpr"


@dataclass(frozen=True)
class Or:
    left: "BExpr"
    right: "BExpr"


@dataclass(frozen=True)
class Not:
    arg: "BExpr"


BExpr = Union[BoolLit, Cmp, And, Or, Not]


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Assign:
    var: str
    expr: Expr


@dataclass(frozen=True)
class Seq:
    first: "Stmt"
    second: "Stmt"


@dataclass(frozen=True)
class If:
    cond: BExpr
    then: "Stmt"
    orelse: "Stmt"


@dataclass(frozen=True)
class While:
    loop_id: int
    cond: BExpr
    body: "Stmt"


Stmt = Union[Skip, Assign, Seq, If, While]

CMP_OPS = ("<", "<=", ">", ">=", "==", "!=")
KEYWORDS = {"skip", "while", "if", "else", "nondet", "true", "false"}


@dataclass(frozen=True)
class LoopInfo:
    loop_id: int
    depth: int
    parent: Optional[int]


@dataclass(frozen=True)
class Program:
    body: Stmt
    vars: tuple[str, ...]
    _loops: dict = field(default=None, compare=False, repr=False, hash=False)

    def loop(self, loop_id: int) -> While:
        if self._loops is None:
            object.__setattr__(self, "_loops", {w.loop_id: w for w in iter_loops(self.body)})
        try:
            return self._loops[loop_id]
        except KeyError:
            raise KeyError(f"no loop with id {loop_id}") from None

    @property
    def loop_ids(self) -> list[int]:
        return [info.loop_id for info in collect_loops(self)]


def seq(*stmts: Stmt) -> Stmt:
    """Right-nested sequence; the parser's canonical form."""
    if not stmts:
        return Skip()
    out = stmts[-1]
    for s in reversed(stmts[:-1]):
        out = Seq(s, out)
    return out


def iter_loops(stmt: Stmt) -> Iterator[While]:
    """While nodes in preorder."""
    if isinstance(stmt, Seq):
        yield from iter_loops(stmt.first)
        yield from iter_loops(stmt.second)
    elif isinstance(stmt, If):
        yield from iter_loops(stmt.then)
        yield from iter_loops(stmt.orelse)
    elif isinstance(stmt, While):
        yield stmt
        yield from iter_loops(stmt.body)


def expr_vars(e) -> Iterator[str]:
    if isinstance(e, VarRef):
        yield e.name
    elif isinstance(e, (Neg, Not)):
        yield from expr_vars(e.arg)
    elif isinstance(e, (BinOp, Cmp, And, Or)):
        yield from expr_vars(e.left)
        yield from expr_vars(e.right)


def stmt_vars(stmt: Stmt) -> Iterator[str]:
    if isinstance(stmt, Assign):
        yield stmt.var
        yield from expr_vars(stmt.expr)
    elif isinstance(stmt, Seq):
        yield from stmt_vars(stmt.first)
        yield from stmt_vars(stmt.second)
    elif isinstance(stmt, If):
        yield from expr_vars(stmt.cond)
        yield from stmt_vars(stmt.then)
        yield from stmt_vars(stmt.orelse)
    elif isinstance(stmt, While):
        yield from expr_vars(stmt.cond)
        yield from stmt_vars(stmt.body)


def _renumber(stmt: Stmt, counter: list) -> Stmt:
    if isinstance(stmt, Seq):
        first = _renumber(stmt.first, counter)
        return Seq(first, _renumber(stmt.second, counter))
    if isinstance(stmt, If):
        then = _renumber(stmt.then, counter)
        return If(stmt.cond, then, _renumber(stmt.orelse, counter))
    if isinstance(stmt, While):
        loop_id = counter[0]
        counter[0] += 1
        return While(loop_id, stmt.cond, _renumber(stmt.body, counter))
    return stmt


def _check_nondet(e, where: str) -> None:
    if isinstance(e, Nondet):
        raise ValidationError(f"nondet() may only be the whole right-hand side ({where})", 0, 0)
    if isinstance(e, (Neg, Not)):
        _check_nondet(e.arg, where)
    elif isinstance(e, (BinOp, Cmp, And, Or)):
        _check_nondet(e.left, where)
        _check_nondet(e.right, where)


def _validate(stmt: Stmt) -> None:
    if isinstance(stmt, Assign):
        if not isinstance(stmt.expr, Nondet):
            _check_nondet(stmt.expr, f"assignment to {stmt.var}")
    elif isinstance(stmt, Seq):
        _validate(stmt.first)
        _validate(stmt.second)
    elif isinstance(stmt, If):
        _check_nondet(stmt.cond, "if condition")
        _validate(stmt.then)
        _validate(stmt.orelse)
    elif isinstance(stmt, While):
        _check_nondet(stmt.cond, "loop guard")
        _validate(stmt.body)


def make_program(body: Stmt) -> Program:
    """Build a Program, assigning loop ids in preorder and collecting variables."""
    _validate(body)
    body = _renumber(body, [0])
    return Program(body, tuple(dict.fromkeys(stmt_vars(body))))


def collect_loops(p: Program) -> list[LoopInfo]:
    out: list[LoopInfo] = []

    def walk(stmt: Stmt, depth: int, parent: Optional[int]) -> None:
        if isinstance(stmt, Seq):
            walk(stmt.first, depth, parent)
            walk(stmt.second, depth, parent)
        elif isinstance(stmt, If):
            walk(stmt.then, depth, parent)
            walk(stmt.orelse, depth, parent)
        elif isinstance(stmt, While):
            out.append(LoopInfo(stmt.loop_id, depth, parent))
            walk(stmt.body, depth + 1, stmt.loop_id)

    walk(p.body, 0, None)
    return out


def loops_within(stmt: Stmt) -> set[int]:
    return {w.loop_id for w in iter_loops(stmt)}


def child_loops(stmt: Stmt) -> list[While]:
    """Outermost loops of a statement (not descending into loop bodies)."""
    if isinstance(stmt, Seq):
        return child_loops(stmt.first) + child_loops(stmt.second)
    if isinstance(stmt, If):
        return child_loops(stmt.then) + child_loops(stmt.orelse)
    if isinstance(stmt, While):
        return [stmt]
    return []


# ---------------------------------------------------------------------------
# Lexer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|//[^\n]*)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|\+\+|--|<=|>=|==|!=|&&|\|\||[-+*/<>!(){};])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            tokens.append(Token(kind, chunk, line, pos - line_start + 1))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, msg: str, tok: Optional[Token] = None) -> ParseError:
        tok = tok or self.tok
        found = tok.text or "end of input"
        return ParseError(f"{msg} (found {found!r})", tok.line, tok.column)

    def accept(self, text: str) -> bool:
        if self.tok.kind in ("op", "ident") and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        tok = self.tok
        if not self.accept(text):
            raise self.error(f"expected {text!r}")
        return tok

    # statements

    def program(self) -> Stmt:
        stmts = self.stmt_list()
        if self.tok.kind != "eof":
            raise self.error("expected a statement")
        return seq(*stmts)

    def stmt_list(self) -> list[Stmt]:
        stmts = []
        while self.tok.kind != "eof" and self.tok.text != "}":
            stmts.append(self.stmt())
        return stmts

    def block(self) -> Stmt:
        self.expect("{")
        stmts = self.stmt_list()
        self.expect("}")
        return seq(*stmts)

    def stmt(self) -> Stmt:
        tok = self.tok
        if self.accept("skip"):
            self.expect(";")
            return Skip()
        if self.accept("while"):
            self.expect("(")
            cond = self.bexpr()
            self.expect(")")
            return While(-1, cond, self.block())
        if self.accept("if"):
            self.expect("(")
            cond = self.bexpr()
            self.expect(")")
            then = self.block()
            orelse = self.block() if self.accept("else") else Skip()
            return If(cond, then, orelse)
        if tok.kind == "ident" and tok.text not in KEYWORDS:
            self.i += 1
            if self.accept("++"):
                self.expect(";")
                return Assign(tok.text, BinOp("+", VarRef(tok.text), IntLit(1)))
            if self.accept("--"):
                self.expect(";")
                return Assign(tok.text, BinOp("-", VarRef(tok.text), IntLit(1)))
            self.expect(":=")
            if self.tok.text == "nondet":
                rhs: Expr = self.nondet()
                if self.tok.text != ";":
                    raise ValidationError("nondet() may only be the whole right-hand side of an assignment",
                                          self.tok.line, self.tok.column)
            else:
                rhs = self.expr()
            self.expect(";")
            return Assign(tok.text, rhs)
        raise self.error("expected a statement")

    def nondet(self) -> Nondet:
        self.expect("nondet")
        self.expect("(")
        self.expect(")")
        return Nondet()

    # boolean expressions: || < && < ! < comparison

    def bexpr(self) -> BExpr:
        left = self.bconj()
        while self.accept("||"):
            left = Or(left, self.bconj())
        return left

    def bconj(self) -> BExpr:
        left = self.bunary()
        while self.accept("&&"):
            left = And(left, self.bunary())
        return left

    def bunary(self) -> BExpr:
        if self.accept("!"):
            return Not(self.bunary())
        if self.accept("true"):
            return BoolLit(True)
        if self.accept("false"):
            return BoolLit(False)
        if self.tok.text == "(":
            # either a parenthesised boolean or an arithmetic operand of a comparison
            save = self.i
            self.i += 1
            try:
                inner = self.bexpr()
                if self.accept(")") and self.tok.text not in CMP_OPS + ("+", "-", "*", "/"):
                    return inner
            except ParseError:
                pass
            self.i = save
        left = self.expr()
        tok = self.tok
        if tok.text not in CMP_OPS:
            raise self.error("expected a comparison operator")
        self.i += 1
        return Cmp(tok.text, left, self.expr())

    # arithmetic: + - < * / < unary -

    def expr(self) -> Expr:
        left = self.term()
        while self.tok.text in ("+", "-"):
            op = self.tok.text
            self.i += 1
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.factor()
        while self.tok.text in ("*", "/"):
            op = self.tok.text
            self.i += 1
            left = BinOp(op, left, self.factor())
        return left

    def factor(self) -> Expr:
        tok = self.tok
        if self.accept("-"):
            if self.tok.kind == "int":
                value = int(self.tok.text)
                self.i += 1
                return IntLit(-value)
            return Neg(self.factor())
        if tok.kind == "int":
            self.i += 1
            return IntLit(int(tok.text))
        if tok.kind == "ident":
            if tok.text == "nondet":
                raise ValidationError(
                    "nondet() may only be the whole right-hand side of an assignment",
                    tok.line, tok.column,
                )
            if tok.text in KEYWORDS:
                raise self.error("expected an expression")
            self.i += 1
            return VarRef(tok.text)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        raise self.error("expected an expression")


def parse_program(text: str) -> Program:
    return make_program(_Parser(text).program())


def parse_bexpr(text: str) -> BExpr:
    p = _Parser(text)
    b = p.bexpr()
    if p.tok.kind != "eof":
        raise p.error("trailing input")
    return b


# ---------------------------------------------------------------------------
# Pretty printing
# ---------------------------------------------------------------------------

_PREC = {"||": 1, "&&": 2, "+": 5, "-": 5, "*": 6, "/": 6}


def format_expr(e: Expr) -> str:
    return _fmt(e, 0)


def _fmt(e, ctx: int) -> str:
    if isinstance(e, IntLit):
        s = str(e.value)
        return f"({s})" if e.value < 0 and ctx > 5 else s
    if isinstance(e, VarRef):
        return e.name
    if isinstance(e, Nondet):
        return "nondet()"
    if isinstance(e, Neg):
        inner = e.arg.name if isinstance(e.arg, VarRef) else f"({_fmt(e.arg, 0)})"
        s = f"-{inner}"
        return f"({s})" if ctx > 6 else s
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        s = f"{_fmt(e.left, p)} {e.op} {_fmt(e.right, p + 1)}"
        return f"({s})" if p < ctx else s
    raise TypeError(e)


def format_bexpr(b: BExpr) -> str:
    return _bfmt(b, 0)


def _bfmt(b, ctx: int) -> str:
    if isinstance(b, BoolLit):
        return "true" if b.value else "false"
    if isinstance(b, Cmp):
        s = f"{_fmt(b.left, 0)} {b.op} {_fmt(b.right, 0)}"
        return f"({s})" if ctx > 3 else s
    if isinstance(b, Not):
        return f"!{_bfmt(b.arg, 4)}"
    if isinstance(b, (And, Or)):
        op = "&&" if isinstance(b, And) else "||"
        p = _PREC[op]
        s = f"{_bfmt(b.left, p)} {op} {_bfmt(b.right, p + 1)}"
        return f"({s})" if p < ctx else s
    raise TypeError(b)


def _flatten(stmt: Stmt) -> list[Stmt]:
    if isinstance(stmt, Seq):
        return _flatten(stmt.first) + _flatten(stmt.second)
    return [stmt]


def _print_stmt(stmt: Stmt, indent: int, out: list[str]) -> None:
    pad = "    " * indent
    for s in _flatten(stmt):
        if isinstance(s, Skip):
            out.append(f"{pad}skip;")
        elif isinstance(s, Assign):
            out.append(f"{pad}{s.var} := {format_expr(s.expr)};")
        elif isinstance(s, If):
            out.append(f"{pad}if ({format_bexpr(s.cond)}) {{")
            _print_stmt(s.then, indent + 1, out)
            if isinstance(s.orelse, Skip):
                out.append(f"{pad}}}")
            else:
                out.append(f"{pad}}} else {{")
                _print_stmt(s.orelse, indent + 1, out)
                out.append(f"{pad}}}")
        elif isinstance(s, While):
            out.append(f"{pad}while ({format_bexpr(s.cond)}) {{")
            _print_stmt(s.body, indent + 1, out)
            out.append(f"{pad}}}")
        else:
            raise TypeError(s)


def pretty_print(p: Program) -> str:
    out: list[str] = []
    _print_stmt(p.body, 0, out)
    return "\n".join(out) + "\n"
