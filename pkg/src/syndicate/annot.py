"""
Annotated programs: one linear invariant per loop, the meet / containment
algebra, the symbolic over-approximate semantics of loop bodies and entry
paths, and inductiveness checking.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from . import formula as F
from .formula import Fresh, Term, Var
from .interp import DivisionByZero, eval_bexpr, eval_expr, tdiv
from .lang import (
    And, Assign, BinOp, BoolLit, Cmp, If, IntLit, Neg, Nondet, Not, Or, Program, Seq,
    Skip, Stmt, VarRef, While, child_loops, collect_loops, loops_within, parse_bexpr,
)
from .linear import Affine, affine_of
from .smt import Session, require_decided


class StructureMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# Invariants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Invariant:
    """Conjunction of `a >= 0` constraints; the empty conjunction is all states."""

    conjuncts: tuple[Affine, ...] = ()

    @staticmethod
    def of(*conjuncts: Affine) -> "Invariant":
        return Invariant(tuple(dict.fromkeys(conjuncts)))

    @property
    def is_true(self) -> bool:
        return not self.conjuncts

    def holds(self, s: Mapping[str, int]) -> bool:
        return all(c(s) >= 0 for c in self.conjuncts)

    def term(self, rename: Callable[[str], str] = str) -> Term:
        return F.and_(*(F.ge(c.term(rename), 0) for c in self.conjuncts))

    def meet(self, other: "Invariant") -> "Invariant":
        return Invariant.of(*self.conjuncts, *other.conjuncts)

    def __str__(self) -> str:
        if not self.conjuncts:
            return "true"
        return " && ".join(f"{c} >= 0" for c in self.conjuncts)


TRUE_INV = Invariant()


def parse_invariant(text: str) -> Invariant:
    """Parse a conjunction of linear comparisons, e.g. `1 + 1*y + -1*z >= 0 && y <= z`."""
    b = parse_bexpr(text)
    out: list[Affine] = []

    def walk(b) -> None:
        if isinstance(b, BoolLit):
            if not b.value:
                out.append(Affine(-1))
        elif isinstance(b, And):
            walk(b.left)
            walk(b.right)
        elif isinstance(b, Cmp):
            d = affine_of(b.left) - affine_of(b.right)
            if b.op == ">=":
                out.append(d)
            elif b.op == ">":
                out.append(d + Affine(-1))
            elif b.op == "<=":
                out.append(-d)
            elif b.op == "<":
                out.append(-d + Affine(-1))
            elif b.op == "==":
                out.extend([d, -d])
            else:
                raise ValueError(f"invariants cannot contain {b.op}")
        else:
            raise ValueError("invariants are conjunctions of linear comparisons")

    walk(b)
    return Invariant.of(*out)


# ---------------------------------------------------------------------------
# Annotated programs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnnotatedProgram:
    program: Program
    invariants: tuple[Invariant, ...]  # indexed by loop id

    def __post_init__(self):
        if len(self.invariants) != len(self.program.loop_ids):
            raise StructureMismatch("annotation must cover every loop")

    def __getitem__(self, loop: int) -> Invariant:
        return self.invariants[loop]

    def with_invariant(self, loop: int, inv: Invariant) -> "AnnotatedProgram":
        invs = list(self.invariants)
        invs[loop] = inv
        return AnnotatedProgram(self.program, tuple(invs))

    def strengthen(self, loop: int, conjunct: Affine) -> "AnnotatedProgram":
        return self.with_invariant(loop, self.invariants[loop].meet(Invariant.of(conjunct)))

    @property
    def vars(self) -> tuple[str, ...]:
        return self.program.vars


def trivially_annotate(p: Program) -> AnnotatedProgram:
    return AnnotatedProgram(p, tuple(TRUE_INV for _ in p.loop_ids))


def annotate(p: Program, invariants: Mapping[int, Invariant]) -> AnnotatedProgram:
    a = trivially_annotate(p)
    for k, inv in invariants.items():
        a = a.with_invariant(k, inv)
    return a


def core(a: AnnotatedProgram) -> Program:
    return a.program


def _same_core(a1: AnnotatedProgram, a2: AnnotatedProgram) -> None:
    if a1.program != a2.program:
        raise StructureMismatch("annotated programs have different cores")


def meet(a1: AnnotatedProgram, a2: AnnotatedProgram) -> AnnotatedProgram:
    _same_core(a1, a2)
    return AnnotatedProgram(a1.program, tuple(i.meet(j) for i, j in zip(a1.invariants, a2.invariants)))


def entails(session: Session, inv: Invariant, conjunct: Affine) -> bool:
    """Does every state of `inv` satisfy `conjunct >= 0`?"""
    if conjunct in inv.conjuncts:
        return True
    res = require_decided(session.check(F.and_(inv.term(), F.lt(conjunct.term(), 0))))
    return res.unsat


def inv_leq(session: Session, i1: Invariant, i2: Invariant) -> bool:
    return all(entails(session, i1, c) for c in i2.conjuncts)


def leq(a1: AnnotatedProgram, a2: AnnotatedProgram, session: Session) -> bool:
    """Per-loop containment of invariants, decided by SMT."""
    _same_core(a1, a2)
    return all(inv_leq(session, i, j) for i, j in zip(a1.invariants, a2.invariants))


# ---------------------------------------------------------------------------
# Symbolic encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExitPoint:
    """Fresh variables holding the state right after an inner loop, and when it is reached."""

    loop: int
    names: Mapping[str, str]
    path: Term


@dataclass(frozen=True)
class SymbolicRelation:
    pre: Mapping[str, str]
    post: Mapping[str, str]
    exits: tuple[ExitPoint, ...]
    constraint: Term

    @property
    def aux(self) -> set[str]:
        named = set(self.pre.values()) | set(self.post.values())
        return F.free_vars(self.constraint) - named


Env = dict  # program variable -> Term


class Encoder:
    """Symbolic execution of statements under an annotation.

    Side constraints (division definitions, inner-loop abstractions) are
    appended to the list passed in; they always occur positively.
    """

    def __init__(self, annot: AnnotatedProgram, fresh: Fresh):
        self.annot = annot
        self.fresh = fresh

    def expr(self, e, env: Env, cons: list) -> Term:
        if isinstance(e, IntLit):
            return F.num(e.value)
        if isinstance(e, VarRef):
            return env[e.name]
        if isinstance(e, Neg):
            return F.neg(self.expr(e.arg, env, cons))
        if isinstance(e, BinOp):
            a = self.expr(e.left, env, cons)
            b = self.expr(e.right, env, cons)
            if e.op == "+":
                return F.add(a, b)
            if e.op == "-":
                return F.sub(a, b)
            if e.op == "*":
                return F.mul(a, b)
            return self._div(a, b, cons)
        if isinstance(e, Nondet):
            return Var(self.fresh("nd"))
        raise TypeError(f"not an expression: {e!r}")

    def _div(self, a: Term, b: Term, cons: list) -> Term:
        if isinstance(a, F.Const) and isinstance(b, F.Const):
            if b.value == 0:
                cons.append(F.FALSE)
                return F.num(0)
            return F.num(tdiv(a.value, b.value))
        q = Var(self.fresh("q"))
        r = F.sub(a, F.mul(b, q))
        cons.extend([
            F.not_(F.eq(b, 0)),
            F.implies(F.gt(b, 0), F.and_(F.lt(F.neg(b), r), F.lt(r, b))),
            F.implies(F.lt(b, 0), F.and_(F.lt(b, r), F.lt(r, F.neg(b)))),
            F.implies(F.ge(a, 0), F.ge(r, 0)),
            F.implies(F.lt(a, 0), F.le(r, 0)),
        ])
        return q

    def bexpr(self, b, env: Env, cons: list) -> Term:
        if isinstance(b, BoolLit):
            return F.Const(b.value)
        if isinstance(b, Cmp):
            l = self.expr(b.left, env, cons)
            r = self.expr(b.right, env, cons)
            return {"<": F.lt, "<=": F.le, ">": F.gt, ">=": F.ge, "==": F.eq, "!=": F.ne}[b.op](l, r)
        if isinstance(b, And):
            return F.and_(self.bexpr(b.left, env, cons), self.bexpr(b.right, env, cons))
        if isinstance(b, Or):
            return F.or_(self.bexpr(b.left, env, cons), self.bexpr(b.right, env, cons))
        if isinstance(b, Not):
            return F.not_(self.bexpr(b.arg, env, cons))
        raise TypeError(f"not a boolean expression: {b!r}")

    def fresh_state(self, stem: str) -> Env:
        return {v: Var(self.fresh(f"{stem}.{v}")) for v in self.annot.vars}

    def stmt(self, s: Stmt, env: Env, cons: list, exits: list, path: tuple = ()) -> Env:
        if isinstance(s, Skip):
            return env
        if isinstance(s, Assign):
            t = self.expr(s.expr, env, cons)
            if not isinstance(t, (Var, F.Const)) and _size(t) > 12:
                v = Var(self.fresh(s.var))
                cons.append(F.eq(v, t))
                t = v
            return {**env, s.var: t}
        if isinstance(s, Seq):
            env = self.stmt(s.first, env, cons, exits, path)
            return self.stmt(s.second, env, cons, exits, path)
        if isinstance(s, If):
            c = self.bexpr(s.cond, env, cons)
            cons_t: list = []
            cons_e: list = []
            env_t = self.stmt(s.then, env, cons_t, exits, path + (c,))
            env_e = self.stmt(s.orelse, env, cons_e, exits, path + (F.not_(c),))
            merged = {}
            for v in self.annot.vars:
                if env_t[v] == env_e[v]:
                    merged[v] = env_t[v]
                else:
                    m = Var(self.fresh(f"phi.{v}"))
                    merged[v] = m
                    cons_t.append(F.eq(m, env_t[v]))
                    cons_e.append(F.eq(m, env_e[v]))
            cons.append(F.or_(F.and_(c, *cons_t), F.and_(F.not_(c), *cons_e)))
            return merged
        if isinstance(s, While):
            inv = self.annot[s.loop_id]
            cons.append(_inv_on(inv, env))
            out = self.fresh_state(f"exit{s.loop_id}")
            cons.append(_inv_on(inv, out))
            cons.append(F.not_(self.bexpr(s.cond, out, cons)))
            names = {v: out[v].name for v in self.annot.vars}
            exits.append(ExitPoint(s.loop_id, names, F.and_(*path)))
            return out
        raise TypeError(f"not a statement: {s!r}")


def _size(t: Term) -> int:
    if isinstance(t, F.App):
        return 1 + sum(_size(a) for a in t.args)
    return 1


def _inv_on(inv: Invariant, env: Env) -> Term:
    return F.and_(*(F.ge(F.add(c.const, *(F.mul(k, env[n]) for n, k in c.coeffs)), 0)
                    for c in inv.conjuncts))


def state_env(vars: Iterable[str], stem: str) -> Env:
    return {v: Var(f"{stem}.{v}") for v in vars}


def guard_term(annot: AnnotatedProgram, loop: int, env: Env, cons: list, fresh: Fresh) -> Term:
    return Encoder(annot, fresh).bexpr(annot.program.loop(loop).cond, env, cons)


def body_relation(annot: AnnotatedProgram, loop: int, fresh: Optional[Fresh] = None,
                  tag: str = "") -> SymbolicRelation:
    """One iteration of the body of `loop`, with inner loops abstracted by their invariants."""
    fresh = fresh or Fresh()
    vars = annot.vars
    pre = {v: f"pre{tag}.{v}" for v in vars}
    post = {v: f"post{tag}.{v}" for v in vars}
    env = {v: Var(pre[v]) for v in vars}
    cons: list = []
    exits: list = []
    env = Encoder(annot, fresh).stmt(annot.program.loop(loop).body, env, cons, exits)
    cons.extend(F.eq(Var(post[v]), env[v]) for v in vars)
    return SymbolicRelation(pre, post, tuple(exits), F.and_(*cons))


@dataclass(frozen=True)
class EntryPath:
    constraint: Term  # over `names` plus auxiliary variables
    names: Mapping[str, str]
    exact: bool  # no loop abstraction on the way: every model is a reachable head state

    def formula(self) -> Term:
        aux = F.free_vars(self.constraint) - set(self.names.values())
        return F.exists(sorted(aux), self.constraint)


def entry_path(annot: AnnotatedProgram, loop: int, rename: Callable[[str], str] = str,
               fresh: Optional[Fresh] = None) -> EntryPath:
    """Symbolic description of the states in which `loop` is entered from outside."""
    fresh = fresh or Fresh()
    enc = Encoder(annot, fresh)
    vars = annot.vars
    env = {v: Var(f"init.{v}") for v in vars}
    cons: list = []
    exact = True

    def reach(s: Stmt, env: Env) -> Env:
        nonlocal exact
        if isinstance(s, Seq):
            if loop in loops_within(s.first):
                return reach(s.first, env)
            if loops_within(s.first):
                exact = False
            env = enc.stmt(s.first, env, cons, [])
            return reach(s.second, env)
        if isinstance(s, If):
            c = enc.bexpr(s.cond, env, cons)
            if loop in loops_within(s.then):
                cons.append(c)
                return reach(s.then, env)
            cons.append(F.not_(c))
            return reach(s.orelse, env)
        if isinstance(s, While):
            if s.loop_id == loop:
                return env
            exact = False
            head = enc.fresh_state(f"head{s.loop_id}")
            cons.append(_inv_on(annot[s.loop_id], head))
            cons.append(enc.bexpr(s.cond, head, cons))
            return reach(s.body, head)
        raise AssertionError("loop not found on path")

    env = reach(annot.program.body, env)
    names = {v: rename(v) for v in vars}
    cons.extend(F.eq(Var(names[v]), env[v]) for v in vars)
    return EntryPath(F.and_(*cons), names, exact)


def entry_condition(annot: AnnotatedProgram, loop: int, rename: Callable[[str], str] = str) -> Term:
    return entry_path(annot, loop, rename).formula()


# ---------------------------------------------------------------------------
# Inductiveness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Valid:
    def __bool__(self) -> bool:
        return True


VALID = Valid()


@dataclass(frozen=True)
class Invalid:
    loop: int
    kind: str  # "initiation" or "consecution"
    state: tuple
    post: Optional[tuple] = None

    def __bool__(self) -> bool:
        return False


def model_state(model: Mapping[str, int], names: Mapping[str, str], vars: Sequence[str]) -> tuple:
    return tuple(model.get(names[v], 0) for v in vars)


def initiation_query(annot: AnnotatedProgram, loop: int, inv: Invariant) -> tuple[Term, EntryPath]:
    path = entry_path(annot, loop, lambda v: f"s.{v}")
    return F.and_(path.constraint, F.not_(inv.term(lambda v: f"s.{v}"))), path


def consecution_query(annot: AnnotatedProgram, loop: int, inv: Invariant) -> tuple[Term, SymbolicRelation]:
    fresh = Fresh()
    rel = body_relation(annot, loop, fresh)
    cons: list = []
    g = guard_term(annot, loop, {v: Var(n) for v, n in rel.pre.items()}, cons, fresh)
    f = F.and_(inv.term(rel.pre.get), g, *cons, rel.constraint, F.not_(inv.term(rel.post.get)))
    return f, rel


def check_loop(annot: AnnotatedProgram, loop: int, session: Session) -> Union[Valid, Invalid]:
    inv = annot[loop]
    if inv.is_true:
        return VALID
    vars = annot.vars
    q, path = initiation_query(annot, loop, inv)
    res = require_decided(session.check(q))
    if res.sat:
        return Invalid(loop, "initiation", model_state(res.model, path.names, vars))
    q, rel = consecution_query(annot, loop, inv)
    res = require_decided(session.check(q))
    if res.sat:
        return Invalid(loop, "consecution", model_state(res.model, rel.pre, vars),
                       model_state(res.model, rel.post, vars))
    return VALID


def check_annotations(annot: AnnotatedProgram, session: Session,
                      loops: Optional[Iterable[int]] = None) -> Union[Valid, Invalid]:
    """Initiation and consecution of every (or the given) loop invariant."""
    for k in (annot.program.loop_ids if loops is None else loops):
        out = check_loop(annot, k, session)
        if not out:
            return out
    return VALID


# ---------------------------------------------------------------------------
# Enumerative semantics over a finite box (property-test oracle)
# ---------------------------------------------------------------------------


def box(vars: Sequence[str], lo: int = -3, hi: int = 3) -> list[dict]:
    return [dict(zip(vars, vals)) for vals in itertools.product(range(lo, hi + 1), repeat=len(vars))]


def loop_semantics(annot: AnnotatedProgram, loop: int, states: Sequence[dict]) -> set:
    """I x (I and not guard), restricted to `states`."""
    vars = annot.vars
    inv = annot[loop]
    cond = annot.program.loop(loop).cond
    inside = [tuple(s[v] for v in vars) for s in states if inv.holds(s)]
    exits = [tuple(s[v] for v in vars) for s in states if inv.holds(s) and not _guard(cond, s)]
    return {(a, b) for a in inside for b in exits}


def _guard(cond, s) -> bool:
    try:
        return eval_bexpr(cond, s)
    except DivisionByZero:
        return False


def abstract_post(annot: AnnotatedProgram, stmt: Stmt, s: dict, states: Sequence[dict],
                  lo: int = -3, hi: int = 3) -> list[dict]:
    """Successors of `s` under the over-approximate semantics, loops replaced by I x (I and not guard)."""
    if isinstance(stmt, Skip):
        return [s]
    if isinstance(stmt, Assign):
        if isinstance(stmt.expr, Nondet):
            return [{**s, stmt.var: v} for v in range(lo, hi + 1)]
        try:
            return [{**s, stmt.var: eval_expr(stmt.expr, s)}]
        except DivisionByZero:
            return []
    if isinstance(stmt, Seq):
        out = []
        for mid in abstract_post(annot, stmt.first, s, states, lo, hi):
            out.extend(abstract_post(annot, stmt.second, mid, states, lo, hi))
        return out
    if isinstance(stmt, If):
        try:
            branch = stmt.then if eval_bexpr(stmt.cond, s) else stmt.orelse
        except DivisionByZero:
            return []
        return abstract_post(annot, branch, s, states, lo, hi)
    if isinstance(stmt, While):
        inv = annot[stmt.loop_id]
        if not inv.holds(s):
            return []
        return [dict(e) for e in states if inv.holds(e) and not _guard(stmt.cond, e)]
    raise TypeError(stmt)


def program_semantics(annot: AnnotatedProgram, states: Sequence[dict], lo: int = -3, hi: int = 3) -> set:
    vars = annot.vars
    out = set()
    for s in states:
        for e in abstract_post(annot, annot.program.body, s, states, lo, hi):
            out.add((tuple(s[v] for v in vars), tuple(e[v] for v in vars)))
    return out
