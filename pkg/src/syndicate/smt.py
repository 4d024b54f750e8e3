"""
SMT-LIB v2 bridge to an external solver process.

Every query is self-contained: the session resets the solver, declares all free
variables as integers, asserts the formula and asks `(check-sat)`; on `sat` the
model is read back with `(get-value ...)`.
"""

from __future__ import annotations

import enum
import os
import shutil
import subprocess
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

from .formula import (
    App, Const, Quant, Term, Var, free_vars, has_quantifier, is_nonlinear, substitute,
)


class SmtError(Exception):
    pass


class UnsupportedTerm(SmtError):
    pass


class ProtocolError(SmtError):
    pass


class SolverCrashed(SmtError):
    pass


class SolverUnknown(SmtError):
    """The solver answered unknown or ran out of time on a query that needed an answer."""


def default_solver() -> str:
    return os.environ.get("SYNDICATE_SOLVER", "z3")


@dataclass
class SolverConfig:
    executable: str = field(default_factory=default_solver)
    timeout_ms: int = 10_000
    logic: Optional[str] = None  # None: pick QF_LIA/QF_NIA per query
    seed: int = 0
    args: Optional[Sequence[str]] = None

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout must be positive")

    @property
    def is_z3(self) -> bool:
        return os.path.basename(self.executable).startswith("z3")

    def command(self) -> list[str]:
        path = shutil.which(self.executable) or self.executable
        if self.args is not None:
            return [path, *self.args]
        return [path, "-in", "-smt2"] if self.is_z3 else [path]


class Status(enum.Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"
    TIMEOUT = "timeout"


@dataclass
class Result:
    status: Status
    model: Optional[dict[str, int]] = None
    reason: str = ""

    @property
    def sat(self) -> bool:
        return self.status is Status.SAT

    @property
    def unsat(self) -> bool:
        return self.status is Status.UNSAT


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_OPS = {"+": "+", "*": "*", "-": "-", "neg": "-", "<": "<", "<=": "<=", ">": ">",
        ">=": ">=", "=": "=", "and": "and", "or": "or", "not": "not", "=>": "=>",
        "ite": "ite"}


def _lit(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v) if v >= 0 else f"(- {-v})"


def term_to_sexpr(t: Term) -> str:
    if isinstance(t, Const):
        return _lit(t.value)
    if isinstance(t, Var):
        return t.name
    if isinstance(t, App):
        try:
            op = _OPS[t.op]
        except KeyError:
            raise UnsupportedTerm(f"operator {t.op}") from None
        return f"({op} {' '.join(term_to_sexpr(a) for a in t.args)})"
    if isinstance(t, Quant):
        binders = " ".join(f"({n} Int)" for n in t.names)
        return f"({t.kind} ({binders}) {term_to_sexpr(t.body)})"
    raise UnsupportedTerm(repr(t))


def lift_existentials(t: Term) -> tuple[Term, list[str]]:
    """Turn existentials in positive positions into free (implicitly existential) variables."""
    used = set(free_vars(t))
    lifted: list[str] = []

    def go(t: Term, positive: bool) -> Term:
        if isinstance(t, Quant) and t.kind == "exists" and positive:
            mapping = {}
            for n in t.names:
                name = n
                k = 0
                while name in used:
                    k += 1
                    name = f"{n}!l{k}"
                used.add(name)
                lifted.append(name)
                if name != n:
                    mapping[n] = Var(name)
            body = substitute(t.body, mapping) if mapping else t.body
            return go(body, positive)
        if isinstance(t, App):
            if t.op in ("and", "or"):
                return App(t.op, tuple(go(a, positive) for a in t.args))
            if t.op == "not":
                return App("not", (go(t.args[0], not positive),))
            if t.op == "=>":
                return App("=>", (go(t.args[0], not positive), go(t.args[1], positive)))
        return t

    return go(t, True), lifted


def select_logic(t: Term, sort: str = "Int") -> str:
    base = ("N" if is_nonlinear(t) else "L") + ("RA" if sort == "Real" else "IA")
    return base if has_quantifier(t) else "QF_" + base


def to_smtlib(f: Term, logic: Optional[str] = None, declare: Iterable[str] = (), sort: str = "Int") -> str:
    """Deterministic SMT-LIB script (without check-sat) for one formula; all constants get `sort`."""
    if sort not in ("Int", "Real"):
        raise UnsupportedTerm(f"sort {sort}")
    body, _ = lift_existentials(f)
    logic = logic or select_logic(body, sort)
    lines = [f"(set-logic {logic})"]
    for name in sorted(free_vars(body) | set(declare)):
        lines.append(f"(declare-const {name} {sort})")
    lines.append(f"(assert {term_to_sexpr(body)})")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Model parsing
# ---------------------------------------------------------------------------


def _sexpr_tokens(text: str) -> list[str]:
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            out.append(c)
            i += 1
        elif c == "|":
            j = text.index("|", i + 1)
            out.append(text[i + 1:j])
            i = j + 1
        elif c == '"':
            j = text.index('"', i + 1)
            out.append(text[i:j + 1])
            i = j + 1
        else:
            j = i
            while j < len(text) and not text[j].isspace() and text[j] not in "()":
                j += 1
            out.append(text[i:j])
            i = j
    return out


def parse_sexpr(text: str):
    tokens = _sexpr_tokens(text)
    pos = 0

    def read():
        nonlocal pos
        if pos >= len(tokens):
            raise ProtocolError("truncated s-expression")
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            items = []
            while pos < len(tokens) and tokens[pos] != ")":
                items.append(read())
            if pos >= len(tokens):
                raise ProtocolError("unbalanced s-expression")
            pos += 1
            return items
        if tok == ")":
            raise ProtocolError("unexpected ')'")
        return tok

    value = read()
    return value


def _int_value(v) -> Union[int, Fraction]:
    """Integer literals become int; decimals and `(/ a b)` become exact Fractions."""
    if isinstance(v, str):
        try:
            return int(v)
        except ValueError:
            pass
        try:
            return Fraction(v)
        except ValueError:
            raise ProtocolError(f"non-numeric value {v!r}") from None
    if isinstance(v, list) and len(v) == 2 and v[0] == "-":
        return -_int_value(v[1])
    if isinstance(v, list) and len(v) == 3 and v[0] == "/":
        return Fraction(_int_value(v[1])) / Fraction(_int_value(v[2]))
    raise ProtocolError(f"unsupported value {v!r}")


def parse_model(text: str, declared: Iterable[str]) -> dict[str, int]:
    """Parse `(get-value ...)` output such as `((m 1) (y (- 1)))`."""
    tree = parse_sexpr(text)
    if not isinstance(tree, list):
        raise ProtocolError(f"expected a value list, got {text!r}")
    model = {}
    for entry in tree:
        if not isinstance(entry, list) or len(entry) != 2 or not isinstance(entry[0], str):
            raise ProtocolError(f"malformed model entry {entry!r}")
        model[entry[0]] = _int_value(entry[1])
    missing = [n for n in declared if n not in model]
    if missing:
        raise ProtocolError(f"model misses {', '.join(sorted(missing))}")
    return model


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------


class Session:
    """One solver child process, used by one thread at a time."""

    def __init__(self, config: Optional[SolverConfig] = None):
        self.config = config or SolverConfig()
        self.proc: Optional[subprocess.Popen] = None
        self.calls = 0
        self._killed = False

    def __enter__(self) -> "Session":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _start(self) -> None:
        try:
            self.proc = subprocess.Popen(
                self.config.command(), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL, text=True, bufsize=1,
            )
        except OSError as e:
            raise SolverCrashed(f"cannot start solver {self.config.executable!r}: {e}") from e

    def close(self) -> None:
        if self.proc is not None:
            try:
                self.proc.stdin.write("(exit)\n")
                self.proc.stdin.flush()
            except (OSError, ValueError):
                pass
            try:
                self.proc.wait(timeout=1)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
            self.proc = None

    def _kill(self) -> None:
        self._killed = True
        if self.proc is not None:
            self.proc.kill()

    def _send(self, text: str) -> None:
        try:
            self.proc.stdin.write(text)
            self.proc.stdin.flush()
        except (OSError, ValueError) as e:
            raise SolverCrashed(str(e)) from e

    def _read_sexpr(self) -> str:
        chunks = []
        depth = 0
        while True:
            line = self.proc.stdout.readline()
            if not line:
                raise SolverCrashed("solver closed its output")
            chunks.append(line)
            depth += line.count("(") - line.count(")")
            if depth <= 0 and "".join(chunks).strip():
                return "".join(chunks)

    def check(self, f: Term, timeout_ms: Optional[int] = None, declare: Iterable[str] = (),
              options: Iterable[tuple[str, object]] = (), sort: str = "Int",
              minimize: Optional[Term] = None) -> Result:
        """Decide `f`; on sat the model covers its free variables and `declare`.

        `timeout_ms` overrides the configured per-query limit for this call.

        `options` are extra z3 parameters for this query only; other solvers ignore them.
        `minimize` asks z3 for a model minimizing that term; it is dropped for other solvers.
        """
        cfg = self.config
        timeout_ms = timeout_ms or cfg.timeout_ms
        timeout_ms = max(int(timeout_ms), 1)
        if self.proc is None or self.proc.poll() is not None:
            self._start()
        self.calls += 1
        body, _ = lift_existentials(f)
        declare = set(declare)
        names = sorted(free_vars(body) | declare)
        script = ["(reset)", "(set-option :produce-models true)",
                  f"(set-option :random-seed {cfg.seed})"]
        if cfg.is_z3:
            script.append(f"(set-option :timeout {timeout_ms})")
            # options persist across (reset), so every query states its own
            opts = {"smt.arith.solver": 6, **dict(options)}
            script += [f"(set-option :{k} {v})" for k, v in opts.items()]
        script.append(to_smtlib(body, cfg.logic, declare, sort).rstrip("\n"))
        if minimize is not None and cfg.is_z3:
            script.append(f"(minimize {term_to_sexpr(minimize)})")
        script.append("(check-sat)")
        self._killed = False
        watchdog = threading.Timer(timeout_ms / 1000 + 2.0, self._kill)
        watchdog.daemon = True
        watchdog.start()
        try:
            self._send("\n".join(script) + "\n")
            answer = self.proc.stdout.readline().strip()
            if not answer:
                raise SolverCrashed("no answer from solver")
            if answer.startswith("(error"):
                raise ProtocolError(answer)
            if answer == "unsat":
                return Result(Status.UNSAT)
            if answer == "unknown":
                self._send("(get-info :reason-unknown)\n")
                reason = self._read_sexpr().strip()
                if "timeout" in reason or "canceled" in reason:
                    return Result(Status.TIMEOUT, reason=reason)
                return Result(Status.UNKNOWN, reason=reason)
            if answer != "sat":
                raise ProtocolError(f"unexpected answer {answer!r}")
            model: dict[str, int] = {}
            if names:
                self._send(f"(get-value ({' '.join(names)}))\n")
                text = self._read_sexpr()
                if text.lstrip().startswith("(error"):
                    raise ProtocolError(text.strip())
                model = parse_model(text, names)
            return Result(Status.SAT, model)
        except SolverCrashed:
            if self._killed:
                self.proc = None
                return Result(Status.TIMEOUT, reason="watchdog")
            raise
        finally:
            watchdog.cancel()


def require_decided(res: Result) -> Result:
    if res.status in (Status.UNKNOWN, Status.TIMEOUT):
        raise SolverUnknown(res.reason or res.status.value)
    return res


def check_sat(f: Term, config: Optional[SolverConfig] = None) -> Result:
    with Session(config) as s:
        return s.check(f)
