"""First-order integer arithmetic terms shared by the encoders and the SMT bridge."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Union


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    value: Union[int, bool]


@dataclass(frozen=True)
class App:
    op: str
    args: tuple


@dataclass(frozen=True)
class Quant:
    kind: str  # "exists" | "forall"
    names: tuple[str, ...]
    body: "Term"


Term = Union[Var, Const, App, Quant]

TRUE = Const(True)
FALSE = Const(False)

ARITH_OPS = {"+", "-", "*", "neg"}
CMP_OPS = {"<", "<=", ">", ">=", "="}
BOOL_OPS = {"and", "or", "not", "=>", "ite"}


def num(v: int) -> Const:
    return Const(int(v))


def _as_term(x) -> Term:
    if isinstance(x, bool):
        return Const(x)
    if isinstance(x, int):
        return Const(x)
    return x


def add(*args) -> Term:
    terms = []
    const = 0
    for a in map(_as_term, args):
        if isinstance(a, Const):
            const += a.value
        elif isinstance(a, App) and a.op == "+":
            for b in a.args:
                if isinstance(b, Const):
                    const += b.value
                else:
                    terms.append(b)
        else:
            terms.append(a)
    if const:
        terms.append(Const(const))
    if not terms:
        return Const(0)
    if len(terms) == 1:
        return terms[0]
    return App("+", tuple(terms))


def neg(a) -> Term:
    a = _as_term(a)
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, App) and a.op == "neg":
        return a.args[0]
    return App("neg", (a,))


def sub(a, b) -> Term:
    return add(a, neg(b))


def mul(*args) -> Term:
    const = 1
    terms = []
    for a in map(_as_term, args):
        if isinstance(a, Const):
            const *= a.value
        else:
            terms.append(a)
    if const == 0:
        return Const(0)
    if not terms:
        return Const(const)
    if const != 1:
        terms.insert(0, Const(const))
    if len(terms) == 1:
        return terms[0]
    return App("*", tuple(terms))


def linear(const: int, coeffs: Iterable[tuple[int, Term]]) -> Term:
    return add(const, *(mul(c, t) for c, t in coeffs if c))


def _cmp(op: str, a, b) -> Term:
    a, b = _as_term(a), _as_term(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(_CMP[op](a.value, b.value))
    return App(op, (a, b))


def le(a, b) -> Term:
    return _cmp("<=", a, b)


def lt(a, b) -> Term:
    return _cmp("<", a, b)


def ge(a, b) -> Term:
    return _cmp(">=", a, b)


def gt(a, b) -> Term:
    return _cmp(">", a, b)


def eq(a, b) -> Term:
    return _cmp("=", a, b)


def ne(a, b) -> Term:
    return not_(eq(a, b))


def and_(*args) -> Term:
    out = []
    for a in map(_as_term, args):
        if a == TRUE:
            continue
        if a == FALSE:
            return FALSE
        if isinstance(a, App) and a.op == "and":
            out.extend(a.args)
        else:
            out.append(a)
    if not out:
        return TRUE
    if len(out) == 1:
        return out[0]
    return App("and", tuple(out))


def or_(*args) -> Term:
    out = []
    for a in map(_as_term, args):
        if a == FALSE:
            continue
        if a == TRUE:
            return TRUE
        if isinstance(a, App) and a.op == "or":
            out.extend(a.args)
        else:
            out.append(a)
    if not out:
        return FALSE
    if len(out) == 1:
        return out[0]
    return App("or", tuple(out))


def not_(a) -> Term:
    a = _as_term(a)
    if isinstance(a, Const):
        return Const(not a.value)
    if isinstance(a, App) and a.op == "not":
        return a.args[0]
    return App("not", (a,))


def implies(a, b) -> Term:
    a, b = _as_term(a), _as_term(b)
    if a == TRUE:
        return b
    if a == FALSE or b == TRUE:
        return TRUE
    return App("=>", (a, b))


def ite(c, a, b) -> Term:
    c = _as_term(c)
    if c == TRUE:
        return _as_term(a)
    if c == FALSE:
        return _as_term(b)
    return App("ite", (c, _as_term(a), _as_term(b)))


def max0(a) -> Term:
    """max(a, 0) as an if-then-else term (used only under quantifiers)."""
    return ite(ge(a, 0), a, 0)


def exists(names: Iterable[str], body: Term) -> Term:
    names = tuple(names)
    if not names:
        return body
    return Quant("exists", names, body)


def forall(names: Iterable[str], body: Term) -> Term:
    names = tuple(names)
    if not names:
        return body
    return Quant("forall", names, body)


_CMP = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "=": lambda a, b: a == b,
}


class EvalError(Exception):
    pass


def evaluate(t: Term, env: Mapping[str, int]):
    """Exact evaluation of a quantifier-free term under a total assignment."""
    if isinstance(t, Const):
        return t.value
    if isinstance(t, Var):
        try:
            return env[t.name]
        except KeyError:
            raise EvalError(f"unassigned variable {t.name}") from None
    if isinstance(t, Quant):
        raise EvalError("cannot evaluate quantified terms")
    op, args = t.op, t.args
    if op == "+":
        return sum(evaluate(a, env) for a in args)
    if op == "*":
        out = 1
        for a in args:
            out *= evaluate(a, env)
        return out
    if op == "neg":
        return -evaluate(args[0], env)
    if op == "-":
        return evaluate(args[0], env) - sum(evaluate(a, env) for a in args[1:])
    if op in _CMP:
        return _CMP[op](evaluate(args[0], env), evaluate(args[1], env))
    if op == "and":
        return all(evaluate(a, env) for a in args)
    if op == "or":
        return any(evaluate(a, env) for a in args)
    if op == "not":
        return not evaluate(args[0], env)
    if op == "=>":
        return (not evaluate(args[0], env)) or evaluate(args[1], env)
    if op == "ite":
        return evaluate(args[1], env) if evaluate(args[0], env) else evaluate(args[2], env)
    raise EvalError(f"unknown operator {op}")


def free_vars(t: Term) -> set[str]:
    out: set[str] = set()
    _free(t, frozenset(), out)
    return out


def _free(t: Term, bound: frozenset, out: set) -> None:
    if isinstance(t, Var):
        if t.name not in bound:
            out.add(t.name)
    elif isinstance(t, App):
        for a in t.args:
            _free(a, bound, out)
    elif isinstance(t, Quant):
        _free(t.body, bound | set(t.names), out)


def substitute(t: Term, mapping: Mapping[str, Term]) -> Term:
    if isinstance(t, Var):
        return mapping.get(t.name, t)
    if isinstance(t, App):
        return App(t.op, tuple(substitute(a, mapping) for a in t.args))
    if isinstance(t, Quant):
        inner = {k: v for k, v in mapping.items() if k not in t.names}
        return Quant(t.kind, t.names, substitute(t.body, inner))
    return t


def is_nonlinear(t: Term) -> bool:
    if isinstance(t, App):
        if t.op == "*" and sum(1 for a in t.args if not isinstance(a, Const)) > 1:
            return True
        return any(is_nonlinear(a) for a in t.args)
    if isinstance(t, Quant):
        return is_nonlinear(t.body)
    return False


def has_quantifier(t: Term) -> bool:
    if isinstance(t, Quant):
        return True
    if isinstance(t, App):
        return any(has_quantifier(a) for a in t.args)
    return False


class Fresh:
    """Generator of unique variable names."""

    def __init__(self, prefix: str = ""):
        self.prefix = prefix
        self._counter = itertools.count()

    def __call__(self, stem: str) -> str:
        return f"{self.prefix}{stem}!{next(self._counter)}"
