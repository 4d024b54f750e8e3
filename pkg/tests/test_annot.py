import random

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from syndicate import formula as F
from syndicate.annot import (
    Invalid, Invariant, StructureMismatch, TRUE_INV, Valid, annotate, body_relation, check_annotations,
    check_loop, entry_path, inv_leq, leq, meet, parse_invariant, trivially_annotate,
)
from syndicate.formula import Var
from syndicate.interp import FuelExhausted, GuardFalse, eval_bexpr, run_body_once
from syndicate.lang import parse_program
from syndicate.linear import Affine
from syndicate.smt import Session

from conftest import corpus_program
from strategies import programs


def aff(const, **coeffs):
    return Affine.make(const, coeffs)


def test_parse_invariant_normal_forms():
    inv = parse_invariant("x >= 1 && y < z && x == 2*y")
    assert set(inv.conjuncts) == {aff(-1, x=1), aff(-1, z=1, y=-1), aff(0, x=1, y=-2), aff(0, x=-1, y=2)}
    assert parse_invariant("true").is_true
    assert str(parse_invariant(str(inv))) == str(inv)
    with pytest.raises(ValueError):
        parse_invariant("x >= 0 || y >= 0")


def test_meet_deduplicates():
    a = Invariant.of(aff(0, x=1), aff(1, y=1))
    assert a.meet(a) == a
    assert a.meet(TRUE_INV) == a


def test_annotation_must_cover_every_loop():
    p = corpus_program("nested_doubling")
    a = trivially_annotate(p)
    assert len(a.invariants) == 2
    with pytest.raises(StructureMismatch):
        meet(a, trivially_annotate(corpus_program("doubling")))


@pytest.mark.solver
def test_leq_is_semantic():
    p = corpus_program("doubling")
    with Session() as s:
        strong = annotate(p, {0: parse_invariant("y >= 2 && n >= 0")})
        weak = annotate(p, {0: parse_invariant("y + n >= 1")})
        assert leq(strong, weak, s)
        assert not leq(weak, strong, s)
        assert inv_leq(s, parse_invariant("y == 3"), parse_invariant("y <= 5 && y >= -1"))


@pytest.mark.solver
def test_doubling_invariant_is_inductive():
    p = corpus_program("doubling")
    a = annotate(p, {0: parse_invariant("z == y + 1")})
    with Session() as s:
        assert isinstance(check_annotations(a, s), Valid)


@pytest.mark.solver
def test_initiation_witness_is_an_entry_state():
    p = corpus_program("doubling")
    a = annotate(p, {0: parse_invariant("m >= 0")})
    with Session() as s:
        out = check_loop(a, 0, s)
    assert isinstance(out, Invalid) and out.kind == "initiation"
    y, n, z, m = out.state
    assert m < 0 and y == n and z == n + 1


@pytest.mark.solver
def test_consecution_witness_is_an_iteration():
    p = parse_program("while (x < 10) { x := x + 2; y := y - x; }")
    a = annotate(p, {0: parse_invariant("y >= 0")})
    with Session() as s:
        out = check_loop(a, 0, s)
    # initiation fails first since entry is unconstrained
    assert out.kind == "initiation"
    p = parse_program("y := 5; while (x < 10) { x := x + 2; y := y - x; }")
    a = annotate(p, {0: parse_invariant("y >= 0")})
    with Session() as s:
        out = check_loop(a, 0, s)
    assert out.kind == "consecution"
    pre = dict(zip(p.vars, out.state))
    assert run_body_once(p, 0, pre) == dict(zip(p.vars, out.post))
    assert pre["y"] >= 0 and dict(zip(p.vars, out.post))["y"] < 0


def test_entry_path_exactness():
    p = corpus_program("sequential")
    a = trivially_annotate(p)
    assert entry_path(a, 0).exact
    assert not entry_path(a, 1).exact
    q = corpus_program("nested_drain")
    assert not entry_path(trivially_annotate(q), 1).exact


@pytest.mark.solver
def test_inner_loop_exit_is_abstracted_by_its_invariant():
    p = corpus_program("nested_drain")
    a = annotate(p, {1: parse_invariant("x <= y")})
    rel = body_relation(a, 0)
    (exit_point,) = rel.exits
    assert exit_point.loop == 1
    # after the inner loop, x <= y <= 0 must hold for every post state
    q = F.and_(rel.constraint, F.gt(Var(rel.post["x"]), 0))
    with Session() as s:
        assert s.check(q).unsat
        # without the invariant the exit state is unconstrained apart from the guard
        rel0 = body_relation(trivially_annotate(p), 0)
        assert s.check(F.and_(rel0.constraint, F.gt(Var(rel0.post["x"]), 0))).sat


@pytest.mark.solver
@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much])
@given(programs(), st.integers(0, 10_000))
def test_body_relation_contains_concrete_iterations(p, seed):
    """Every concrete iteration is a model of the symbolic body relation."""
    rng = random.Random(seed)
    a = trivially_annotate(p)
    with Session() as s:
        for k in p.loop_ids:
            state = {v: rng.randint(-3, 3) for v in p.vars}
            if not eval_bexpr(p.loop(k).cond, state):
                continue
            try:
                post = run_body_once(p, k, state, fuel=500)
            except (FuelExhausted, GuardFalse):
                continue
            rel = body_relation(a, k)
            fix = [F.eq(Var(rel.pre[v]), state[v]) for v in p.vars]
            fix += [F.eq(Var(rel.post[v]), post[v]) for v in p.vars]
            assert s.check(F.and_(rel.constraint, *fix)).sat
