"""
The bi-directional search: per-loop ranking-function candidates from sampled
pairs, validity checks against the current annotation, and invariant
refinement driven by the check's counterexamples.  Also hosts certificate
verification, the ablation modes, the combined single-query baseline and the
template portfolio.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Union

from . import formula as F
from .annot import (
    AnnotatedProgram, Invalid, Invariant, Valid, annotate, body_relation, check_annotations,
    entry_path, guard_term, model_state, parse_invariant, trivially_annotate,
)
from .formula import Fresh, Term, Var
from .interp import (
    DivisionByZero, FuelExhausted, TraceStore, eval_bexpr, run_body_once, sample_traces,
)
from .lang import Program, collect_loops
from .linear import Affine
from .smt import Result, Session, SolverConfig, SolverCrashed, SolverUnknown, Status
from .templates import (
    InvariantTemplate, RankingFunction, RankingTemplate, decode_invariant, decode_ranking,
    encode_candidate_constraints, encode_invariant_candidate, encode_invariant_relaxation,
    encode_joint_invariant_candidates, integral_direction, parse_ranking, ranking_unknowns,
    ranking_violation_formula, reduces_on, search_invariant_candidate, _budget, _lex_decrease,
)

log = logging.getLogger(__name__)

# Small coefficient budgets are tried first; only the last rung decides emptiness.
RANKING_RUNGS = (10, 100, 1000)
LAZY_BATCH = 8  # violated rows added back per round of a lazy search
ENUMERATION_RADIUS = 4  # separators up to this norm are searched by enumeration, not SMT


def budget_rungs(budget: Optional[int], rungs: Sequence[int]) -> list[Optional[int]]:
    return [b for b in rungs if budget is None or b < budget] + [budget]

MODES = ("syndicate", "no-inv2rf", "no-rf2inv", "combined")
MODE_ALIASES = {"ablate-inv-to-rf-off": "no-inv2rf", "ablate-rf-to-inv-off": "no-rf2inv"}

PROVED = "proved"
NO_PROOF = "no_proof_in_template"
INCONCLUSIVE = "inconclusive"


class UnsupportedProgram(ValueError):
    pass


class EngineTimeout(Exception):
    pass


class Cancelled(Exception):
    pass


@dataclass(frozen=True)
class EngineParams:
    template: RankingTemplate = RankingTemplate(1, 1)
    inv_template: InvariantTemplate = InvariantTemplate()
    p_ref: Optional[int] = 10  # None means unbounded
    p_iter: Optional[int] = 10
    mode: str = "syndicate"
    timeout_s: float = 120.0
    seed: int = 0
    traces: int = 100
    value_range: tuple[int, int] = (-10, 10)
    fuel: int = 10_000
    joint_refine: bool = False
    combined_conjuncts: int = 2
    probe_scales: tuple[int, ...] = (10, 100)
    probe_runs: int = 30
    tighten: bool = True  # strengthen proved annotations with inductive facts seen in traces
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        mode = MODE_ALIASES.get(self.mode, self.mode)
        if mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        for name in ("p_ref", "p_iter"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0")


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CexSequence:
    head: tuple
    exits: tuple[tuple[int, tuple], ...]  # (inner loop id, state right after it)
    end: tuple

    @property
    def pair(self) -> tuple[tuple, tuple]:
        return self.head, self.end


@dataclass
class Stats:
    iterations: int = 0
    refines: int = 0
    smt_calls: int = 0
    wall_ms: int = 0

    def as_dict(self) -> dict:
        return {"iterations": self.iterations, "refines": self.refines,
                "smt_calls": self.smt_calls, "wall_ms": self.wall_ms}


@dataclass
class Step:
    """One check that failed, and what the engine did about it."""

    loop: int
    candidate: RankingFunction
    outcome: str  # "refined" or "pair"
    before: AnnotatedProgram
    after: AnnotatedProgram
    pair: Optional[tuple] = None
    into: Optional[str] = None  # "t" or "t?"
    fresh_pair: bool = False


@dataclass
class LoopResult:
    loop: int
    status: str
    ranking: Optional[RankingFunction] = None
    reason: str = ""


@dataclass
class Certificate:
    status: str
    rankings: dict[int, Optional[RankingFunction]]
    invariants: dict[int, Invariant]
    stats: Stats = field(default_factory=Stats)
    mode: str = "syndicate"
    template: str = ""
    seed: int = 0

    def to_json(self) -> dict:
        loops = []
        for k in sorted(self.invariants):
            f = self.rankings.get(k)
            loops.append({"loopId": k, "ranking": None if f is None else str(f),
                          "invariant": str(self.invariants[k])})
        return {"status": self.status, "loops": loops, "stats": self.stats.as_dict(),
                "mode": self.mode, "template": self.template, "seed": self.seed}

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @staticmethod
    def from_json(data: Union[dict, str]) -> "Certificate":
        if isinstance(data, str):
            data = json.loads(data)
        rankings, invariants = {}, {}
        for entry in data["loops"]:
            k = int(entry["loopId"])
            rankings[k] = None if entry.get("ranking") is None else parse_ranking(entry["ranking"])
            invariants[k] = parse_invariant(entry.get("invariant", "true"))
        st = data.get("stats", {})
        stats = Stats(st.get("iterations", 0), st.get("refines", 0), st.get("smt_calls", 0), st.get("wall_ms", 0))
        return Certificate(data.get("status", PROVED), rankings, invariants, stats,
                           data.get("mode", "syndicate"), data.get("template", ""), data.get("seed", 0))


@dataclass
class ProgramResult:
    status: str
    loops: dict[int, LoopResult]
    annotation: AnnotatedProgram
    stats: Stats
    mode: str
    template: str
    seed: int
    reason: str = ""
    steps: list[Step] = field(default_factory=list)

    @property
    def proved(self) -> bool:
        return self.status == PROVED

    def certificate(self) -> Certificate:
        return Certificate(
            self.status,
            {k: r.ranking for k, r in self.loops.items()},
            dict(enumerate(self.annotation.invariants)),
            self.stats, self.mode, self.template, self.seed,
        )


@dataclass(frozen=True)
class Accepted:
    def __bool__(self) -> bool:
        return True


@dataclass(frozen=True)
class Rejected:
    reason: str
    loop: Optional[int] = None
    witness: Optional[tuple] = None

    def __bool__(self) -> bool:
        return False


# ---------------------------------------------------------------------------
# Shared queries
# ---------------------------------------------------------------------------


def ranking_check_query(annot: AnnotatedProgram, loop: int, f: RankingFunction):
    """Formula satisfiable iff some head state in I and the guard fails to decrease f."""
    fresh = Fresh()
    rel = body_relation(annot, loop, fresh)
    cons: list = []
    g = guard_term(annot, loop, {v: Var(n) for v, n in rel.pre.items()}, cons, fresh)
    q = F.and_(annot[loop].term(rel.pre.get), g, *cons, rel.constraint,
               ranking_violation_formula(f, rel.pre, rel.post, fresh))
    return q, rel


def cex_from_model(model, rel, vars) -> CexSequence:
    exits = []
    for e in rel.exits:
        try:
            reached = F.evaluate(e.path, model)
        except F.EvalError:
            reached = True
        if reached:
            exits.append((e.loop, model_state(model, e.names, vars)))
    return CexSequence(model_state(model, rel.pre, vars), tuple(exits), model_state(model, rel.post, vars))


def postorder(p: Program) -> list[int]:
    """Loop ids with every loop after the loops nested inside it."""
    infos = collect_loops(p)
    children: dict[Optional[int], list[int]] = {}
    for info in infos:
        children.setdefault(info.parent, []).append(info.loop_id)
    out: list[int] = []

    def visit(k: int) -> None:
        for c in children.get(k, []):
            visit(c)
        out.append(k)

    for root in children.get(None, []):
        visit(root)
    return out


def ancestors(p: Program, loop: int) -> list[int]:
    parent = {i.loop_id: i.parent for i in collect_loops(p)}
    out = []
    k = parent[loop]
    while k is not None:
        out.append(k)
        k = parent[k]
    return out


def verify_certificate(p: Program, cert: Certificate, solver: Optional[SolverConfig] = None) -> Union[Accepted, Rejected]:
    """Re-establish the certificate from scratch in a fresh solver process."""
    if sorted(cert.invariants) != p.loop_ids:
        return Rejected("certificate does not match the program's loops")
    annot = annotate(p, cert.invariants)
    try:
        with Session(solver or SolverConfig()) as s:
            out = check_annotations(annot, s)
            if isinstance(out, Invalid):
                witness = out.state if out.post is None else (out.state, out.post)
                return Rejected(f"invariant fails {out.kind}", out.loop, witness)
            for k in p.loop_ids:
                f = cert.rankings.get(k)
                if f is None:
                    return Rejected("missing ranking function", k)
                q, rel = ranking_check_query(annot, k, f)
                res = s.check(q)
                if res.status in (Status.UNKNOWN, Status.TIMEOUT):
                    return Rejected("inconclusive", k)
                if res.sat:
                    cex = cex_from_model(res.model, rel, p.vars)
                    return Rejected("ranking function does not decrease", k, cex.pair)
    except SolverUnknown:
        return Rejected("inconclusive")
    return Accepted()


# ---------------------------------------------------------------------------
# The engine
# ---------------------------------------------------------------------------


class Engine:
    """One run of the search on one program with one ranking template."""

    def __init__(self, program: Program, params: EngineParams = EngineParams(),
                 traces: Optional[TraceStore] = None, cancel: Optional[threading.Event] = None):
        self.p = program
        self.params = params
        self.vars = program.vars
        self.cancel = cancel or threading.Event()
        self.session = Session(params.solver)
        self.annot = trivially_annotate(program)
        self.stats = Stats()
        self.steps: list[Step] = []
        self.rng = random.Random(f"{params.seed}:engine")
        self._traces = traces
        self.t: dict[int, dict] = {k: {} for k in program.loop_ids}
        self.tq: dict[int, dict] = {k: {} for k in program.loop_ids}
        self.inv_c: dict[int, dict] = {k: {} for k in program.loop_ids}
        self.heads: dict[int, dict] = {k: {} for k in program.loop_ids}  # known reachable head states
        self._exact: dict[int, bool] = {}
        self._start = 0.0
        self.deadline = float("inf")

    # -- plumbing ----------------------------------------------------------

    def close(self) -> None:
        self.session.close()

    def _tick(self) -> None:
        if self.cancel.is_set():
            raise Cancelled()
        if time.monotonic() >= self.deadline:
            raise EngineTimeout()

    def _solve(self, q: Term, declare: Iterable[str] = (), options=(), whole_budget: bool = False, **kw) -> Result:
        """Solver call bounded by the per-query timeout and the global deadline.

        With `whole_budget` the query may use all the time left before the deadline.
        """
        self._tick()
        remaining_ms = int((self.deadline - time.monotonic()) * 1000)
        if remaining_ms <= 0:
            raise EngineTimeout()
        limit = remaining_ms if whole_budget else min(self.params.solver.timeout_ms, remaining_ms)
        try:
            res = self.session.check(q, limit, declare, options, **kw)
        except SolverCrashed:
            # a portfolio sibling won and killed our solver between queries
            if self.cancel.is_set():
                raise Cancelled()
            raise
        self._tick()
        return res

    def check_sat(self, q: Term, timeout_ms: Optional[int] = None, declare: Iterable[str] = ()) -> Result:
        # Session-compatible signature, so annotation checks share the deadline.
        return self._solve(q, declare)

    def _decided(self, res: Result) -> Result:
        if res.status in (Status.UNKNOWN, Status.TIMEOUT):
            raise SolverUnknown(res.reason or res.status.value)
        return res

    def env(self, state: tuple) -> dict:
        return dict(zip(self.vars, state))

    def _check_annotations(self, annot: AnnotatedProgram, loops) -> Union[Valid, Invalid]:
        return check_annotations(annot, _Budgeted(self), loops)

    # -- the pair sets -----------------------------------------------------

    def _load_traces(self) -> None:
        traces = self._traces
        if traces is None:
            traces = sample_traces(self.p, self.params.traces, self.params.seed,
                                   self.params.value_range, self.params.fuel)
        for k in self.p.loop_ids:
            for pair in traces.get(k):
                self.t[k][pair] = None
            for h in traces.head_states(k):
                self.heads[k][h] = None
        # Reachable heads from wider initial ranges; they only constrain separators.
        lo, hi = self.params.value_range
        for i, scale in enumerate(self.params.probe_scales):
            probe = sample_traces(self.p, self.params.probe_runs, f"{self.params.seed}:probe{i}",
                                  (lo * scale, hi * scale), self.params.fuel)
            for k in self.p.loop_ids:
                for h in probe.head_states(k):
                    self.heads[k][h] = None

    def add_pair(self, loop: int, pair: tuple, into: str) -> bool:
        if into == "t":
            self.tq[loop].pop(pair, None)
            new = pair not in self.t[loop]
            self.t[loop][pair] = None
            return new
        if pair in self.t[loop] or pair in self.tq[loop]:
            return False
        self.tq[loop][pair] = None
        return True

    def exact_entry(self, loop: int) -> bool:
        if loop not in self._exact:
            self._exact[loop] = entry_path(self.annot, loop).exact
        return self._exact[loop]

    def _initiation_feedback(self, loop: int, c: tuple) -> None:
        """A state entering `loop` outside the candidate: execute one iteration from it."""
        if self.params.mode == "no-inv2rf":
            return
        if self.exact_entry(loop):
            self.heads[loop][c] = None
        s = self.env(c)
        w = self.p.loop(loop)
        try:
            if not eval_bexpr(w.cond, s):
                return
            post = run_body_once(self.p, loop, s, self.rng, self.params.fuel, self.params.value_range)
        except (DivisionByZero, FuelExhausted):
            return
        pair = (c, tuple(post[v] for v in self.vars))
        self.add_pair(loop, pair, "t" if self.exact_entry(loop) else "t?")

    def _readjudicate(self, loop: int) -> None:
        """Drop undecided pairs that the refined annotation proves infeasible."""
        inv = self.annot[loop]
        for pair in list(self.tq[loop]):
            if not inv.holds(self.env(pair[0])):
                del self.tq[loop][pair]
        for a in ancestors(self.p, loop):
            for pair in list(self.tq[a]):
                if not self._pair_feasible(a, pair):
                    del self.tq[a][pair]

    def _pair_feasible(self, loop: int, pair: tuple) -> bool:
        fresh = Fresh()
        rel = body_relation(self.annot, loop, fresh)
        cons: list = []
        g = guard_term(self.annot, loop, {v: Var(n) for v, n in rel.pre.items()}, cons, fresh)
        fix = [F.eq(Var(rel.pre[v]), x) for v, x in zip(self.vars, pair[0])]
        fix += [F.eq(Var(rel.post[v]), x) for v, x in zip(self.vars, pair[1])]
        q = F.and_(self.annot[loop].term(rel.pre.get), g, *cons, rel.constraint, *fix)
        return not self._solve(q).unsat

    # -- getCandidate / check ----------------------------------------------

    def get_candidate(self, loop: int, pairs: Sequence[tuple]) -> Optional[RankingFunction]:
        tpl = self.params.template
        for budget in budget_rungs(tpl.budget, RANKING_RUNGS):
            f = self._lazy_candidate(pairs, replace(tpl, budget=budget))
            if f is not None:
                return f
        return None

    def _lazy_candidate(self, pairs: Sequence[tuple], tpl: RankingTemplate) -> Optional[RankingFunction]:
        """Fit f to a growing subset of `pairs` until it reduces on all of them."""
        declare = [u.name for u in ranking_unknowns(self.vars, tpl)]
        active: dict = dict.fromkeys(pairs[:LAZY_BATCH])
        while True:
            res = self._decided(self._solve(encode_candidate_constraints(active, self.vars, tpl), declare))
            if res.unsat:
                return None
            f = decode_ranking(res.model, self.vars, tpl)
            missed = [pr for pr in pairs if not reduces_on(f, self.env(pr[0]), self.env(pr[1]))]
            if not missed:
                return f
            assert not any(pr in active for pr in missed), "decoded candidate misses an encoded pair"
            active.update(dict.fromkeys(missed[:LAZY_BATCH]))

    def check(self, f: RankingFunction, loop: int) -> Optional[CexSequence]:
        q, rel = ranking_check_query(self.annot, loop, f)
        res = self._decided(self._solve(q))
        if res.unsat:
            return None
        return cex_from_model(res.model, rel, self.vars)

    # -- refine ---------------------------------------------------------------

    def _blind_point(self, loop: int, exit_side: bool, avoid: Iterable[tuple]) -> Optional[tuple]:
        """A state of I (and guard, or its negation) not in `avoid`, chosen without the counterexample."""
        names = {v: f"b.{v}" for v in self.vars}
        fresh = Fresh()
        cons: list = []
        g = guard_term(self.annot, loop, {v: Var(n) for v, n in names.items()}, cons, fresh)
        region = F.not_(g) if exit_side else g
        avoid_rows = [F.not_(F.and_(*(F.eq(Var(names[v]), x) for v, x in zip(self.vars, s)))) for s in avoid]
        res = self._solve(F.and_(self.annot[loop].term(names.get), region, *cons, *avoid_rows),
                          declare=names.values())
        if not res.sat:
            return None
        return model_state(res.model, names, self.vars)

    def refine(self, loop: int, cex: CexSequence, unbounded: bool = False) -> tuple[bool, bool]:
        """Try to exclude a state of the counterexample from some touched loop's invariant.

        Returns (refined, reached_limit).
        """
        self.stats.refines += 1
        targets = [(k, s, True) for k, s in reversed(cex.exits)] + [(loop, cex.head, False)]
        p_iter = None if unbounded else self.params.p_iter
        joint = (self.params.joint_refine or unbounded) and len(targets) > 1
        try:
            if joint:
                return self._refine_targets(targets, p_iter)
            hit_limit = False
            for target in targets:
                refined, lim = self._refine_targets([target], p_iter)
                if refined:
                    return True, False
                hit_limit |= lim
            return False, hit_limit
        except SolverUnknown:
            return False, True

    def _refine_targets(self, targets: list[tuple[int, tuple, bool]], p_iter: Optional[int]) -> tuple[bool, bool]:
        n = len(self.vars)
        must = {k: {**self.heads[k], **dict.fromkeys(pre for pre, _ in self.t[k])} for k, _, _ in targets}
        points = {}
        for k, s, exit_side in targets:
            if self.params.mode == "no-rf2inv":
                s = self._blind_point(k, exit_side, must[k])
                if s is None:
                    continue
            points[k] = s
        if not points:
            return False, False
        loops = list(points)
        prefixes = {k: ("d" if len(loops) == 1 else f"d{i}") for i, k in enumerate(loops)}
        declare = [f"{prefixes[k]}.{j}" for k in loops for j in range(n + 1)]
        search = _SeparatorSearch(loops, prefixes, declare)
        iters = 0
        while True:
            if p_iter is not None and iters >= p_iter:
                return False, True
            iters += 1
            rows = {k: [(c, c2) for c, c2 in self.inv_c[k] if self.annot[k].holds(self.env(c))] for k in loops}
            res = self._separator(search, must, points, rows)
            if res is None:
                return False, False
            if not res.sat:
                return False, True
            cand = self.annot
            touched = []
            for k in loops:
                conj = decode_invariant(res.model, self.vars, prefixes[k])
                if not conj.coeffs and conj.const >= 0:
                    continue  # trivially true conjunct for a loop that keeps its invariant
                cand = cand.strengthen(k, conj)
                touched.append(k)
            out = self._check_annotations(cand, touched)
            if isinstance(out, Valid):
                self._commit(cand, touched)
                return True, False
            if out.kind == "initiation":
                must[out.loop][out.state] = None
                self._initiation_feedback(out.loop, out.state)
            else:
                self.inv_c[out.loop][(out.state, out.post)] = None

    def _separator(self, search: "_SeparatorSearch", must, points, rows) -> Optional[Result]:
        """A model for the separator unknowns, None when none exists, or an undecided result.

        Within one refine call the constraints only grow, so a rung found infeasible is
        never retried and the lazily activated rows carry over.
        """
        loops = search.loops
        if not search.enumeration_failed:
            model = self._enumerate_separator(loops, must, points, rows, search.prefixes)
            if model is not None:
                return Result(Status.SAT, model)
            search.enumeration_failed = True
        if self._enumeration_complete():
            return None
        if not search.relaxation_done:
            res = self._relaxed_separator(search, must, points, rows)
            if res is None or res.sat or res.status in (Status.UNKNOWN, Status.TIMEOUT):
                return res
            search.relaxation_done = True
        return self._lazy_separator(search, must, points, rows, self.params.inv_template)

    def _relaxed_separator(self, search: "_SeparatorSearch", must, points, rows) -> Optional[Result]:
        """Smallest-norm rational separator, scaled to integers.

        None means no separator exists at any budget.  An unsat result means the
        scaled vector exceeds the budget and the integer search must decide.
        """
        loops = search.loops
        active_must, active_rows = search.relaxed_must, search.relaxed_rows
        while True:
            q, norm = encode_invariant_relaxation(
                [(active_must[k], points[k], active_rows[k]) for k in loops], len(self.vars))
            res = self._solve(q, search.declare, sort="Real", minimize=norm)
            if res.unsat:
                return None
            if not res.sat:
                return res
            model, grew = {}, False
            for k in loops:
                names = [f"{search.prefixes[k]}.{j}" for j in range(len(self.vars) + 1)]
                vec = integral_direction([res.model[n] for n in names])
                model.update(zip(names, vec))
                d = Affine.from_vector(self.vars, vec)
                grew |= self._activate(d, must[k], rows[k], active_must[k], active_rows[k])
            if grew:
                continue
            budget = self.params.inv_template.budget
            if budget is not None and any(
                    decode_invariant(model, self.vars, search.prefixes[k]).norm() > budget for k in loops):
                return Result(Status.UNSAT)
            return Result(Status.SAT, model)

    def _activate(self, d: Affine, must, rows, active_must, active_rows) -> bool:
        """Add constraints violated by `d` to the active sets; report whether any were added."""
        bad = [c for c in must if c not in active_must and d(self.env(c)) < 0]
        bad_rows = [r for r in rows if r not in active_rows
                    and d(self.env(r[0])) >= 0 and d(self.env(r[1])) < 0]
        for c in bad[:LAZY_BATCH]:
            active_must[c] = None
        for r in bad_rows[:LAZY_BATCH]:
            active_rows[r] = None
        return bool(bad or bad_rows)

    def _lazy_separator(self, search: "_SeparatorSearch", must, points, rows, tpl) -> Result:
        """Solve with a growing subset of the rows; rows the model violates are added back."""
        n = len(self.vars)
        loops = search.loops
        active_must, active_rows = search.active_must, search.active_rows
        while True:
            if len(loops) == 1:
                k = loops[0]
                q = encode_invariant_candidate(active_must[k], points[k], active_rows[k], n, tpl)
            else:
                q = encode_joint_invariant_candidates(
                    [(active_must[k], points[k], active_rows[k]) for k in loops], n, tpl)
            res = self._solve(q, search.declare)
            if not res.sat:
                return res
            grew = False
            for k in loops:
                d = decode_invariant(res.model, self.vars, search.prefixes[k])
                grew |= self._activate(d, must[k], rows[k], active_must[k], active_rows[k])
            if not grew:
                return res

    def _enumeration_complete(self) -> bool:
        b = self.params.inv_template.budget
        return b is not None and b <= ENUMERATION_RADIUS

    def _enumerate_separator(self, loops, must, points, rows, prefixes) -> Optional[dict]:
        """Cheap first rung: one loop at a time, the others keep their invariant."""
        b = self.params.inv_template.budget
        radius = ENUMERATION_RADIUS if b is None else min(b, ENUMERATION_RADIUS)
        n = len(self.vars)
        for k in loops:
            self._tick()
            d = search_invariant_candidate(must[k], points[k], rows[k], n, radius)
            if d is not None:
                model = {f"{prefixes[j]}.{i}": 0 for j in loops for i in range(n + 1)}
                model.update({f"{prefixes[k]}.{i}": v for i, v in enumerate(d)})
                return model
        return None

    def _commit(self, cand: AnnotatedProgram, touched: Iterable[int]) -> None:
        self.annot = cand
        for k in touched:
            for a in ancestors(self.p, k):
                self.inv_c[a].clear()
        for k in touched:
            self._readjudicate(k)

    # -- per-loop search ---------------------------------------------------------

    def find_ranking(self, loop: int) -> LoopResult:
        fallback = False
        while True:
            pairs = list(self.t[loop]) if fallback else list(self.t[loop]) + list(self.tq[loop])
            f = self.get_candidate(loop, pairs)
            if f is None:
                self.stats.iterations += 1
                if fallback or not self.tq[loop]:
                    return LoopResult(loop, NO_PROOF, reason="no candidate in template")
                log.info("loop %d: no candidate with undecided pairs, retrying without them", loop)
                fallback = True
                continue
            p_ref = None if fallback else self.params.p_ref
            refines = 0
            while True:
                self.stats.iterations += 1
                cex = self.check(f, loop)
                if cex is None:
                    return LoopResult(loop, PROVED, f)
                before = self.annot
                if p_ref is not None and refines >= p_ref:
                    new = self.add_pair(loop, cex.pair, "t?")
                    self.steps.append(Step(loop, f, "pair", before, self.annot, cex.pair, "t?", new))
                    break
                refines += 1
                refined, lim = self.refine(loop, cex, unbounded=fallback)
                if refined:
                    self.steps.append(Step(loop, f, "refined", before, self.annot))
                    continue
                conclusive = (not lim and self.params.mode != "no-rf2inv"
                              and (not cex.exits or fallback or self.params.joint_refine))
                if fallback and not conclusive:
                    return LoopResult(loop, INCONCLUSIVE, reason="refinement inconclusive at unbounded budget")
                into = "t" if conclusive else "t?"
                new = self.add_pair(loop, cex.pair, into)
                self.steps.append(Step(loop, f, "pair", before, self.annot, cex.pair, into, new))
                break

    # -- whole program -------------------------------------------------------------

    def run(self) -> ProgramResult:
        params = self.params
        self._start = time.monotonic()
        self.deadline = self._start + params.timeout_s
        results: dict[int, LoopResult] = {}
        status, reason = PROVED, ""
        try:
            if params.mode == "combined":
                results = self._run_combined()
            else:
                self._load_traces()
                results = self._run_loops(postorder(self.p))
                # Later refinements only shrink the annotation; re-check earlier proofs anyway.
                stale = [k for k, r in results.items() if r.status == PROVED and self.check(r.ranking, k) is not None]
                if stale:
                    results.update(self._run_loops(stale))
            if params.tighten and all(r.status == PROVED for r in results.values()):
                self.tighten()
        except EngineTimeout:
            status, reason = INCONCLUSIVE, "timeout"
        except Cancelled:
            status, reason = INCONCLUSIVE, "cancelled"
        except SolverUnknown as e:
            status, reason = INCONCLUSIVE, f"solver unknown: {e}"
        if status == PROVED:
            statuses = [r.status for r in results.values()]
            if INCONCLUSIVE in statuses:
                status = INCONCLUSIVE
                reason = next(r.reason for r in results.values() if r.status == INCONCLUSIVE)
            elif NO_PROOF in statuses:
                status, reason = NO_PROOF, "no ranking function in template"
        for k in self.p.loop_ids:
            results.setdefault(k, LoopResult(k, INCONCLUSIVE if status != NO_PROOF else NO_PROOF, reason=reason))
        self.stats.wall_ms = int((time.monotonic() - self._start) * 1000)
        self.stats.smt_calls = self.session.calls
        result = ProgramResult(status, results, self.annot, self.stats, params.mode,
                               params.template.name, params.seed, reason, self.steps)
        if result.proved:
            verdict = verify_certificate(self.p, result.certificate(), params.solver)
            if not verdict:
                log.error("certificate rejected: %s", verdict)
                result.status, result.reason = INCONCLUSIVE, f"certificate rejected: {verdict.reason}"
        return result

    def tighten(self) -> None:
        """Houdini-style strengthening of a proved annotation.

        Candidates are octagonal bounds (+-x +-y >= c) that hold on every head state
        seen in the traces.  Candidates refuted by a validity witness are dropped until
        the rest is inductive.  A stronger annotation only shrinks the pairs each
        ranking function has to decrease on, so proofs are preserved.
        """
        cands = {k: self._octagon_candidates(k) for k in self.p.loop_ids}
        while any(cands.values()):
            annot = self.annot
            for k, cs in cands.items():
                annot = annot.with_invariant(k, annot[k].meet(Invariant.of(*cs)))
            out = self._check_annotations(annot, [k for k in self.p.loop_ids])
            if isinstance(out, Valid):
                self.annot = annotate(self.p, {k: _tightest(annot[k]) for k in self.p.loop_ids})
                return
            witness = out.state if out.kind == "initiation" else out.post
            env = self.env(witness)
            kept = [a for a in cands[out.loop] if a(env) >= 0]
            cands[out.loop] = kept if len(kept) < len(cands[out.loop]) else []

    def _octagon_candidates(self, loop: int) -> list[Affine]:
        heads = list(self.heads[loop])
        if not heads:
            return []
        terms = [Affine.make(0, [(v, c)]) for v in self.vars for c in (1, -1)]
        terms += [Affine.make(0, [(v, c), (w, d)]) for i, v in enumerate(self.vars)
                  for w in self.vars[i + 1:] for c in (1, -1) for d in (1, -1)]
        out = []
        for e in terms:
            low = min(e(self.env(h)) for h in heads)
            a = e + Affine(-low)
            if a not in self.annot[loop].conjuncts:
                out.append(a)
        return out

    def _run_loops(self, order: Sequence[int]) -> dict[int, LoopResult]:
        results = {}
        for k in order:
            r = self.find_ranking(k)
            results[k] = r
            log.info("loop %d: %s %s", k, r.status, r.ranking or r.reason)
            if r.status != PROVED:
                break
        return results

    # -- combined baseline ------------------------------------------------------

    def _run_combined(self) -> dict[int, LoopResult]:
        if any(i.depth > 0 for i in collect_loops(self.p)):
            raise UnsupportedProgram("combined mode only handles programs without nested loops")
        results = {}
        for k in self.p.loop_ids:
            self.stats.iterations += 1
            r = self._combined_loop(k)
            results[k] = r
            if r.status != PROVED:
                break
        return results

    def _combined_loop(self, loop: int) -> LoopResult:
        """One exists-forall query for a ranking function and an inductive invariant of `loop`."""
        params = self.params
        vars = self.vars
        n = len(vars)
        tpl = params.template
        d = [[Var(f"d{c}.{j}") for j in range(n + 1)] for c in range(params.combined_conjuncts)]
        a = ranking_unknowns(vars, tpl)

        def inv(names) -> Term:
            return F.and_(*(F.ge(F.add(dc[0], *(F.mul(dc[j + 1], Var(names[v])) for j, v in enumerate(vars))), 0)
                            for dc in d))

        def rank(names) -> list[Term]:
            comps = []
            for k in range(tpl.length):
                summ = []
                for j in range(tpl.summands):
                    base = (k * tpl.summands + j) * (n + 1)
                    arg = F.add(a[base], *(F.mul(a[base + c + 1], Var(names[v])) for c, v in enumerate(vars)))
                    summ.append(F.max0(arg))
                comps.append(F.add(*summ))
            return comps

        path = entry_path(self.annot, loop, lambda v: f"s.{v}")
        fresh = Fresh()
        rel = body_relation(self.annot, loop, fresh)
        cons: list = []
        g = guard_term(self.annot, loop, {v: Var(x) for v, x in rel.pre.items()}, cons, fresh)
        initiation = F.implies(path.constraint, inv(path.names))
        consecution = F.implies(F.and_(inv(rel.pre), g, *cons, rel.constraint),
                                F.and_(inv(rel.post), _lex_decrease(rank(rel.pre), rank(rel.post))))
        body = F.and_(initiation, consecution)
        unknown_names = {u.name for u in a} | {x.name for dc in d for x in dc}
        universal = sorted(F.free_vars(body) - unknown_names)
        q = F.and_(F.forall(universal, body),
                   *_budget(a, tpl.budget, "abs"),
                   *_budget([x for dc in d for x in dc], params.inv_template.budget, "absd"))
        # the monolithic query is the whole search, so it gets the whole budget
        res = self._solve(q, sorted(unknown_names), whole_budget=True)
        if res.status in (Status.UNKNOWN, Status.TIMEOUT):
            return LoopResult(loop, INCONCLUSIVE, reason="timeout" if res.status is Status.TIMEOUT else "solver unknown")
        if res.unsat:
            return LoopResult(loop, NO_PROOF, reason="combined query unsatisfiable")
        f = decode_ranking(res.model, vars, tpl)
        conjs = [decode_invariant(res.model, vars, f"d{c}") for c in range(params.combined_conjuncts)]
        inv_found = Invariant.of(*(c for c in conjs if c.coeffs or c.const < 0))
        self.annot = self.annot.with_invariant(loop, self.annot[loop].meet(inv_found))
        return LoopResult(loop, PROVED, f)


@dataclass
class _SeparatorSearch:
    loops: list[int]
    prefixes: dict[int, str]
    declare: list[str]
    enumeration_failed: bool = False
    relaxation_done: bool = False
    relaxed_must: dict = field(default_factory=lambda: defaultdict(dict))
    relaxed_rows: dict = field(default_factory=lambda: defaultdict(dict))
    active_must: dict = field(default_factory=lambda: defaultdict(dict))
    active_rows: dict = field(default_factory=lambda: defaultdict(dict))


def _tightest(inv: Invariant) -> Invariant:
    """Keep only the strongest constant per coefficient vector."""
    best: dict = {}
    for a in inv.conjuncts:
        if a.coeffs not in best or a.const < best[a.coeffs].const:
            best[a.coeffs] = a
    return Invariant.of(*best.values())


class _Budgeted:
    """Session facade that applies the engine's deadline to every query."""

    def __init__(self, engine: Engine):
        self.check = engine.check_sat


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def prove_program(p: Program, params: EngineParams = EngineParams(),
                  traces: Optional[TraceStore] = None, cancel: Optional[threading.Event] = None) -> ProgramResult:
    engine = Engine(p, params, traces, cancel)
    try:
        return engine.run()
    finally:
        engine.close()


def run_mode(p: Program, mode: str, params: EngineParams = EngineParams(), **kw) -> ProgramResult:
    return prove_program(p, replace(params, mode=mode), **kw)


def portfolio(p: Program, templates: Sequence[RankingTemplate], params: EngineParams = EngineParams()) -> ProgramResult:
    """Run one engine per template in parallel; the first verified proof wins."""
    if not templates:
        raise ValueError("portfolio needs at least one template")
    if params.mode == "combined" and any(i.depth > 0 for i in collect_loops(p)):
        raise UnsupportedProgram("combined mode only handles programs without nested loops")
    traces = None
    if params.mode != "combined":
        traces = sample_traces(p, params.traces, params.seed, params.value_range, params.fuel)
    if len(templates) == 1:
        return prove_program(p, replace(params, template=templates[0]), traces)
    cancel = threading.Event()
    engines = [Engine(p, replace(params, template=t), traces, cancel) for t in templates]
    results: list[ProgramResult] = []
    winner = None
    with ThreadPoolExecutor(max_workers=len(engines)) as pool:
        futures = {pool.submit(e.run): e for e in engines}
        for fut in as_completed(futures):
            res = fut.result()
            results.append(res)
            if res.proved and winner is None:
                winner = res
                cancel.set()
                for e in engines:
                    if e is not futures[fut]:
                        e.session._kill()
    for e in engines:
        e.close()
    if winner is not None:
        return winner
    for status in (INCONCLUSIVE, NO_PROOF):
        for r in results:
            if r.status == status and r.reason != "cancelled":
                return r
    return results[0]
