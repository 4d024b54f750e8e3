"""
Ranking-function and invariant templates.

A ranking template T(i, n) is a lexicographic tuple of n components, each the
sum of i terms max(a0 + a1*x1 + ... , 0).  Candidate generation works on
concrete state pairs, so every constraint is linear in the unknown
coefficients.
"""

from __future__ import annotations

import re
from math import gcd
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from . import formula as F
from .formula import Fresh, Term, Var
from .linear import Affine


class MissingAssignment(KeyError):
    pass


class NonPositiveDelta(ValueError):
    pass


@dataclass(frozen=True)
class RankingTemplate:
    summands: int = 1  # i
    length: int = 1  # n
    budget: Optional[int] = 10_000  # bound on the sum of |coefficients|; None = unbounded

    def __post_init__(self):
        if self.summands < 1 or self.length < 1:
            raise ValueError("T(i,n) needs i, n >= 1")
        if self.budget is not None and self.budget < 1:
            raise ValueError("coefficient budget must be positive")

    @property
    def name(self) -> str:
        return f"T({self.summands},{self.length})"

    def __str__(self) -> str:
        return self.name


_TPL_RE = re.compile(r"\s*T\(\s*(\d+)\s*,\s*(\d+)\s*\)\s*$")


def parse_template(text: str, budget: Optional[int] = 10_000) -> RankingTemplate:
    m = _TPL_RE.match(text)
    if not m:
        raise ValueError(f"bad template {text!r}, expected T(i,n)")
    return RankingTemplate(int(m.group(1)), int(m.group(2)), budget)


def parse_templates(text: str, budget: Optional[int] = 10_000) -> list[RankingTemplate]:
    return [parse_template(t, budget) for t in re.findall(r"T\([^)]*\)", text)]


DEFAULT_PORTFOLIO = ("T(1,1)", "T(1,2)", "T(1,3)", "T(2,1)", "T(2,2)")


def template_ladder(tpl: RankingTemplate, factors: Sequence[int]) -> list[RankingTemplate]:
    if any(b <= a for a, b in zip(factors, factors[1:])):
        raise ValueError("budgets must be strictly increasing")
    return [RankingTemplate(tpl.summands, tpl.length, b) for b in factors]


@dataclass(frozen=True)
class InvariantTemplate:
    budget: Optional[int] = 10_000


# ---------------------------------------------------------------------------
# Ranking functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankingFunction:
    """Lexicographic tuple; each component is a sum of max(affine, 0) terms."""

    components: tuple[tuple[Affine, ...], ...]

    def __call__(self, s: Mapping[str, int]) -> tuple[int, ...]:
        return tuple(sum(max(a(s), 0) for a in comp) for comp in self.components)

    def norm(self) -> int:
        return sum(a.norm() for comp in self.components for a in comp)

    def __str__(self) -> str:
        comps = []
        for comp in self.components:
            terms = [f"max({a}, 0)" for a in comp]
            comps.append(" + ".join(terms) if terms else "0")
        return "lex[ " + " ; ".join(comps) + " ]"


def eval_ranking(f: RankingFunction, s: Mapping[str, int]) -> tuple[int, ...]:
    return f(s)


def lex_decreases(before: Sequence[int], after: Sequence[int]) -> bool:
    """Some component drops by at least 1 while no earlier one grows."""
    for k in range(len(before)):
        if before[k] - after[k] >= 1:
            return True
        if after[k] > before[k]:
            return False
    return False


def reduces_on(f: RankingFunction, pre: Mapping[str, int], post: Mapping[str, int]) -> bool:
    return lex_decreases(f(pre), f(post))


def parse_ranking(text: str) -> RankingFunction:
    """Inverse of `str(RankingFunction)`."""
    from .lang import parse_bexpr
    from .linear import affine_of

    m = re.fullmatch(r"\s*lex\[(.*)\]\s*", text, re.S)
    if not m:
        raise ValueError(f"bad ranking function {text!r}")
    comps = []
    for part in m.group(1).split(";"):
        part = part.strip()
        if part == "0":
            comps.append(())
            continue
        terms = []
        for inner in re.findall(r"max\((.*?),\s*0\s*\)", part):
            cmp = parse_bexpr(f"{inner} >= 0")
            terms.append(affine_of(cmp.left))
        if not terms:
            raise ValueError(f"bad component {part!r}")
        comps.append(tuple(terms))
    return RankingFunction(tuple(comps))


def _coeff_name(k: int, j: int, c: int) -> str:
    return f"a.{k}.{j}.{c}"


def _unknown_affine(vars: Sequence[str], k: int, j: int):
    return [Var(_coeff_name(k, j, c)) for c in range(len(vars) + 1)]


def _budget(unknowns: Sequence[Var], budget: Optional[int], stem: str) -> list[Term]:
    if budget is None:
        return []
    out = []
    abs_terms = []
    for u in unknowns:
        b = Var(f"{stem}.{u.name}")
        out += [F.ge(b, u), F.ge(b, F.neg(u))]
        abs_terms.append(b)
    out.append(F.le(F.add(*abs_terms), budget))
    return out


def _max_def(m: Var, arg: Term) -> list[Term]:
    return [F.ge(m, arg), F.ge(m, 0), F.or_(F.eq(m, arg), F.eq(m, 0))]


def _lex_decrease(pre: Sequence[Term], post: Sequence[Term]) -> Term:
    cases = []
    for k in range(len(pre)):
        cases.append(F.and_(*(F.ge(pre[l], post[l]) for l in range(k)),
                            F.ge(F.sub(pre[k], post[k]), 1)))
    return F.or_(*cases)


def ranking_unknowns(vars: Sequence[str], tpl: RankingTemplate) -> list[Var]:
    return [u for k in range(tpl.length) for j in range(tpl.summands) for u in _unknown_affine(vars, k, j)]


def encode_candidate_constraints(pairs: Iterable[tuple[tuple, tuple]], vars: Sequence[str],
                                 tpl: RankingTemplate) -> Term:
    """Coefficients such that f decreases lexicographically on every concrete pair."""
    unknowns = {(k, j): _unknown_affine(vars, k, j) for k in range(tpl.length) for j in range(tpl.summands)}
    cons: list[Term] = _budget(ranking_unknowns(vars, tpl), tpl.budget, "abs")
    state_ids: dict[tuple, int] = {}
    values: dict[tuple, list[Term]] = {}

    def component_values(s: tuple) -> list[Term]:
        if s in values:
            return values[s]
        sid = state_ids.setdefault(s, len(state_ids))
        comps = []
        for k in range(tpl.length):
            summ = []
            for j in range(tpl.summands):
                a = unknowns[(k, j)]
                arg = F.add(a[0], *(F.mul(v, a[c + 1]) for c, v in enumerate(s)))
                m = Var(f"mx.{sid}.{k}.{j}")
                cons.extend(_max_def(m, arg))
                summ.append(m)
            comps.append(F.add(*summ))
        values[s] = comps
        return comps

    for pre, post in pairs:
        cons.append(_lex_decrease(component_values(pre), component_values(post)))
    return F.and_(*cons)


def decode_ranking(model: Mapping[str, int], vars: Sequence[str], tpl: RankingTemplate) -> RankingFunction:
    comps = []
    for k in range(tpl.length):
        terms = []
        for j in range(tpl.summands):
            vec = []
            for c in range(len(vars) + 1):
                name = _coeff_name(k, j, c)
                if name not in model:
                    raise MissingAssignment(name)
                vec.append(model[name])
            a = Affine.from_vector(vars, vec)
            if a.coeffs or a.const > 0:
                terms.append(a)
        comps.append(tuple(terms))
    return RankingFunction(tuple(comps))


def ranking_terms(f: RankingFunction, rename, fresh: Fresh, cons: list) -> list[Term]:
    """Component values as terms; each max is a fresh variable with its exact definition in `cons`."""
    out = []
    for comp in f.components:
        summ = []
        for a in comp:
            m = Var(fresh("mx"))
            cons.extend(_max_def(m, a.term(rename)))
            summ.append(m)
        out.append(F.add(*summ))
    return out


def ranking_violation_formula(f: RankingFunction, pre: Mapping[str, str], post: Mapping[str, str],
                              fresh: Optional[Fresh] = None) -> Term:
    """Satisfiable iff the state pair named by `pre`/`post` does not decrease f."""
    fresh = fresh or Fresh("rk")
    cons: list = []
    before = ranking_terms(f, pre.get, fresh, cons)
    after = ranking_terms(f, post.get, fresh, cons)
    return F.and_(*cons, F.not_(_lex_decrease(before, after)))


# ---------------------------------------------------------------------------
# Invariant candidates
# ---------------------------------------------------------------------------


def _inv_unknowns(n: int, prefix: str) -> list[Var]:
    return [Var(f"{prefix}.{j}") for j in range(n + 1)]


def _inv_value(d: Sequence[Var], s: Sequence[int]) -> Term:
    return F.add(d[0], *(F.mul(v, d[j + 1]) for j, v in enumerate(s)))


def _candidate_rows(d, must_include, inv_c) -> list[Term]:
    rows = [F.ge(_inv_value(d, s), 0) for s in must_include]
    rows += [F.implies(F.ge(_inv_value(d, c), 0), F.ge(_inv_value(d, c2), 0)) for c, c2 in inv_c]
    return rows


def encode_invariant_candidate(must_include: Iterable[tuple], exclude: tuple,
                               inv_c: Iterable[tuple[tuple, tuple]], nvars: int,
                               tpl: InvariantTemplate = InvariantTemplate(), prefix: str = "d") -> Term:
    """One linear conjunct d0 + d.x >= 0 that drops `exclude` and keeps `must_include`."""
    d = _inv_unknowns(nvars, prefix)
    return F.and_(F.lt(_inv_value(d, exclude), 0), *_candidate_rows(d, must_include, inv_c),
                  *_budget(d, tpl.budget, f"abs{prefix}"))


def encode_joint_invariant_candidates(blocks: Sequence[tuple], nvars: int,
                                      tpl: InvariantTemplate = InvariantTemplate()) -> Term:
    """`blocks` holds (must_include, exclude, inv_c) per loop; at least one loop must drop its state."""
    rows, exclusions = [], []
    for idx, (must, exclude, inv_c) in enumerate(blocks):
        d = _inv_unknowns(nvars, f"d{idx}")
        rows += _candidate_rows(d, must, inv_c) + _budget(d, tpl.budget, f"absd{idx}")
        exclusions.append(F.lt(_inv_value(d, exclude), 0))
    return F.and_(F.or_(*exclusions), *rows)


def encode_invariant_relaxation(blocks: Sequence[tuple], nvars: int) -> tuple[Term, Term]:
    """Rational relaxation of the joint separator problem, plus an L1 objective.

    Strict integer inequalities become `<= -1`, which every integer solution meets, so an
    unsatisfiable relaxation rules out separators at every budget.  `blocks` is as in
    `encode_joint_invariant_candidates`; a single block gives prefix "d".
    """
    rows, exclusions, norms = [], [], []
    for idx, (must, exclude, inv_c) in enumerate(blocks):
        prefix = "d" if len(blocks) == 1 else f"d{idx}"
        d = _inv_unknowns(nvars, prefix)
        rows += [F.ge(_inv_value(d, s), 0) for s in must]
        rows += [F.or_(F.le(_inv_value(d, c), -1), F.ge(_inv_value(d, c2), 0)) for c, c2 in inv_c]
        exclusions.append(F.le(_inv_value(d, exclude), -1))
        for u in d:
            b = Var(f"absd.{u.name}")
            rows += [F.ge(b, u), F.ge(b, F.neg(u))]
            norms.append(b)
    return F.and_(F.or_(*exclusions), *rows), F.add(*norms)


def integral_direction(values: Sequence) -> tuple[int, ...]:
    """Scale a rational vector to the smallest integer vector pointing the same way."""
    fr = [Fraction(v) for v in values]
    lcm = 1
    for v in fr:
        lcm = lcm * v.denominator // gcd(lcm, v.denominator)
    ints = [int(v * lcm) for v in fr]
    g = 0
    for v in ints:
        g = gcd(g, v)
    return tuple(v // g for v in ints) if g > 1 else tuple(ints)


def l1_vectors(dim: int, norm: int) -> Iterator[tuple[int, ...]]:
    """Integer vectors of length `dim` whose absolute values sum to exactly `norm`."""
    if dim == 0:
        if norm == 0:
            yield ()
        return
    for head in range(norm + 1):
        for rest in l1_vectors(dim - 1, norm - head):
            yield (head, *rest)
            if head:
                yield (-head, *rest)


def search_invariant_candidate(must_include: Iterable[tuple], exclude: tuple,
                               inv_c: Iterable[tuple[tuple, tuple]], nvars: int,
                               radius: int) -> Optional[tuple[int, ...]]:
    """Smallest-norm vector (d0, d1, ...) with norm <= radius meeting the constraints of
    `encode_invariant_candidate`, found by enumeration."""
    must = list(must_include)
    rows = list(inv_c)

    def val(d, s):
        return d[0] + sum(a * b for a, b in zip(d[1:], s))

    for norm in range(1, radius + 1):
        for d in l1_vectors(nvars + 1, norm):
            if val(d, exclude) >= 0:
                continue
            if all(val(d, s) >= 0 for s in must) and all(val(d, c) < 0 or val(d, c2) >= 0 for c, c2 in rows):
                return d
    return None


def decode_invariant(model: Mapping[str, int], vars: Sequence[str], prefix: str = "d") -> Affine:
    vec = []
    for j in range(len(vars) + 1):
        name = f"{prefix}.{j}"
        if name not in model:
            raise MissingAssignment(name)
        vec.append(model[name])
    return Affine.from_vector(vars, vec)


# ---------------------------------------------------------------------------
# Normalization of bounded/decreasing measures
# ---------------------------------------------------------------------------


def normalize_ranking(pairs: Iterable[tuple[int, int]], theta, delta) -> list[tuple[Fraction, Fraction]]:
    """Map g to f = (g - theta) / delta, exactly."""
    delta = Fraction(delta)
    if delta <= 0:
        raise NonPositiveDelta(f"delta must be positive, got {delta}")
    theta = Fraction(theta)
    return [((Fraction(g) - theta) / delta, (Fraction(g2) - theta) / delta) for g, g2 in pairs]
