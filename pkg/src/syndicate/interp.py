"""Concrete interpreter and the random trace sampler that seeds the pair sets."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Optional

from .lang import (
    And, Assign, BinOp, BoolLit, Cmp, If, IntLit, Neg, Nondet, Not, Or, Program,
    Seq, Skip, Stmt, VarRef, While,
)

State = dict  # variable -> int, total over Program.vars
Pair = tuple  # (pre-values, post-values), value tuples in Program.vars order


class DivisionByZero(ArithmeticError):
    pass


class FuelExhausted(Exception):
    pass


class GuardFalse(Exception):
    pass


def tdiv(a: int, b: int) -> int:
    """Integer division truncating toward zero."""
    if b == 0:
        raise DivisionByZero("division by zero")
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b > 0) else -q


def eval_expr(e, s: Mapping[str, int], rng: Optional[random.Random] = None,
              value_range: tuple[int, int] = (-10, 10)) -> int:
    if isinstance(e, IntLit):
        return e.value
    if isinstance(e, VarRef):
        return s[e.name]
    if isinstance(e, Neg):
        return -eval_expr(e.arg, s, rng, value_range)
    if isinstance(e, BinOp):
        a = eval_expr(e.left, s, rng, value_range)
        b = eval_expr(e.right, s, rng, value_range)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        return tdiv(a, b)
    if isinstance(e, Nondet):
        if rng is None:
            raise ValueError("nondet() needs a random stream")
        return rng.randint(*value_range)
    raise TypeError(f"not an expression: {e!r}")


_CMP = {
    "<": lambda a, b: a < b, "<=": lambda a, b: a <= b, ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b, "==": lambda a, b: a == b, "!=": lambda a, b: a != b,
}


def eval_bexpr(b, s: Mapping[str, int]) -> bool:
    if isinstance(b, BoolLit):
        return b.value
    if isinstance(b, Cmp):
        return _CMP[b.op](eval_expr(b.left, s), eval_expr(b.right, s))
    if isinstance(b, And):
        return eval_bexpr(b.left, s) and eval_bexpr(b.right, s)
    if isinstance(b, Or):
        return eval_bexpr(b.left, s) or eval_bexpr(b.right, s)
    if isinstance(b, Not):
        return not eval_bexpr(b.arg, s)
    raise TypeError(f"not a boolean expression: {b!r}")


Recorder = Callable[[int, State, State], None]
HeadRecorder = Callable[[int, State], None]


class Machine:
    """Big-step executor with a shared step budget; reports every completed loop iteration."""

    def __init__(self, fuel: int, rng: Optional[random.Random] = None,
                 value_range: tuple[int, int] = (-10, 10), on_iteration: Optional[Recorder] = None,
                 on_head: Optional[HeadRecorder] = None):
        self.fuel = fuel
        self.rng = rng
        self.value_range = value_range
        self.on_iteration = on_iteration
        self.on_head = on_head

    def _tick(self) -> None:
        if self.fuel <= 0:
            raise FuelExhausted()
        self.fuel -= 1

    def run(self, stmt: Stmt, s: State) -> State:
        if isinstance(stmt, Skip):
            self._tick()
        elif isinstance(stmt, Assign):
            self._tick()
            s[stmt.var] = eval_expr(stmt.expr, s, self.rng, self.value_range)
        elif isinstance(stmt, Seq):
            self.run(stmt.first, s)
            self.run(stmt.second, s)
        elif isinstance(stmt, If):
            self._tick()
            self.run(stmt.then if eval_bexpr(stmt.cond, s) else stmt.orelse, s)
        elif isinstance(stmt, While):
            while True:
                self._tick()
                if self.on_head is not None:
                    self.on_head(stmt.loop_id, dict(s))
                if not eval_bexpr(stmt.cond, s):
                    break
                pre = dict(s)
                self.run(stmt.body, s)
                if self.on_iteration is not None:
                    self.on_iteration(stmt.loop_id, pre, dict(s))
        else:
            raise TypeError(f"not a statement: {stmt!r}")
        return s


def run_program(p: Program, s: Mapping[str, int], rng=None, fuel: int = 10_000,
                on_iteration: Optional[Recorder] = None) -> State:
    return Machine(fuel, rng, on_iteration=on_iteration).run(p.body, dict(s))


def run_body_once(p: Program, loop: int, s: Mapping[str, int], rng: Optional[random.Random] = None,
                  fuel: int = 10_000, value_range: tuple[int, int] = (-10, 10)) -> State:
    """Execute one iteration of `loop` from `s`; raises GuardFalse or FuelExhausted."""
    w = p.loop(loop)
    s = dict(s)
    if not eval_bexpr(w.cond, s):
        raise GuardFalse(f"guard of loop {loop} is false")
    return Machine(fuel, rng, value_range).run(w.body, s)


@dataclass
class TraceStore:
    """Per-loop ordered, duplicate-free sets of one-iteration state pairs."""

    vars: tuple[str, ...]
    pairs: dict[int, dict[Pair, None]] = field(default_factory=dict)
    heads: dict[int, dict[tuple, None]] = field(default_factory=dict)  # observed loop-head states

    def add(self, loop: int, pre: tuple, post: tuple) -> bool:
        bucket = self.pairs.setdefault(loop, {})
        if (pre, post) in bucket:
            return False
        bucket[(pre, post)] = None
        return True

    def add_head(self, loop: int, state: tuple) -> None:
        self.heads.setdefault(loop, {})[state] = None

    def head_states(self, loop: int) -> list[tuple]:
        """Every observed head state, including those where the loop exits."""
        return list(dict.fromkeys([*self.entry_states(loop), *self.heads.get(loop, ())]))

    def get(self, loop: int) -> list[Pair]:
        return list(self.pairs.get(loop, ()))

    def entry_states(self, loop: int) -> list[tuple]:
        return list(dict.fromkeys(pre for pre, _ in self.pairs.get(loop, ())))

    def __len__(self) -> int:
        return sum(len(b) for b in self.pairs.values())

    def merge(self, other: "TraceStore") -> "TraceStore":
        out = TraceStore(self.vars)
        for store in (self, other):
            for loop, bucket in store.pairs.items():
                for pre, post in bucket:
                    out.add(loop, pre, post)
            for loop, bucket in store.heads.items():
                for h in bucket:
                    out.add_head(loop, h)
        return out

    def to_jsonl(self) -> Iterator[str]:
        for loop in sorted(self.pairs):
            for pre, post in self.pairs[loop]:
                yield json.dumps({"loop": loop, "pre": dict(zip(self.vars, pre)),
                                  "post": dict(zip(self.vars, post))})


def state_tuple(vars: Iterable[str], s: Mapping[str, int]) -> tuple:
    return tuple(s[v] for v in vars)


def sample_traces(p: Program, count: int = 100, seed: int = 0,
                  value_range: tuple[int, int] = (-10, 10), fuel: int = 10_000,
                  iter_cap: int = 10,
                  initial_states: Optional[Iterable[Mapping[str, int]]] = None) -> TraceStore:
    """Run `p` from `count` random initial states and record loop iterations.

    Each run has its own RNG derived from (seed, run index).  A run that runs
    out of fuel or divides by zero keeps the iterations it completed.  At most
    `iter_cap` iterations per loop are kept from a single run.  Explicit
    `initial_states` are run first, before the random ones.
    """
    store = TraceStore(p.vars)
    fixed = [dict(s) for s in initial_states or ()]
    for i in range(len(fixed) + count):
        rng = random.Random(f"{seed}:{i}")
        if i < len(fixed):
            init = {v: fixed[i].get(v, 0) for v in p.vars}
        else:
            init = {v: rng.randint(*value_range) for v in p.vars}
        taken: dict[int, int] = {}
        seen: dict[int, int] = {}

        def record(loop: int, pre: State, post: State) -> None:
            if taken.get(loop, 0) >= iter_cap:
                return
            taken[loop] = taken.get(loop, 0) + 1
            store.add(loop, state_tuple(p.vars, pre), state_tuple(p.vars, post))

        def head(loop: int, s: State) -> None:
            if seen.get(loop, 0) > iter_cap:
                return
            seen[loop] = seen.get(loop, 0) + 1
            store.add_head(loop, state_tuple(p.vars, s))

        try:
            Machine(fuel, rng, value_range, record, head).run(p.body, init)
        except (FuelExhausted, DivisionByZero):
            pass
    return store
