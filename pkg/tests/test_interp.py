import json
import random

import pytest
from hypothesis import given, strategies as st

from syndicate.interp import (
    DivisionByZero, FuelExhausted, GuardFalse, run_body_once, run_program, sample_traces, tdiv,
)
from syndicate.lang import parse_program

from conftest import corpus_program


@given(st.integers(-50, 50), st.integers(-50, 50).filter(bool))
def test_tdiv_truncates_toward_zero(a, b):
    q = tdiv(a, b)
    assert abs(q) == abs(a) // abs(b)
    assert q * b + (a - q * b) == a
    assert abs(a - q * b) < abs(b)
    assert q == 0 or (q > 0) == ((a > 0) == (b > 0))


def test_division_by_zero():
    with pytest.raises(DivisionByZero):
        tdiv(3, 0)


def test_run_program_doubling():
    p = corpus_program("doubling")
    out = run_program(p, {"y": 0, "n": 3, "z": 0, "m": 1})
    # y, z := 3, 4; one iteration takes m to 2*1 + 3 = 5 > n
    assert out == {"y": 4, "n": 3, "z": 5, "m": 5}


def test_fuel_bounds_divergent_runs():
    p = parse_program("while (x > 0) { x := x; }")
    with pytest.raises(FuelExhausted):
        run_program(p, {"x": 1}, fuel=100)


def test_run_body_once():
    p = corpus_program("doubling")
    assert run_body_once(p, 0, {"y": 2, "n": 4, "z": 3, "m": 1}) == {"y": 3, "n": 4, "z": 4, "m": 4}
    with pytest.raises(GuardFalse):
        run_body_once(p, 0, {"y": 2, "n": 0, "z": 3, "m": 1})


def test_run_body_once_runs_inner_loops_to_completion():
    p = parse_program("while (i > 0) { j := i; while (j > 0) { j--; s++; } i--; }")
    assert run_body_once(p, 0, {"i": 3, "j": 0, "s": 0}) == {"i": 2, "j": 0, "s": 3}


def test_sampling_is_deterministic():
    p = corpus_program("doubling")
    a = sample_traces(p, 30, seed=7)
    b = sample_traces(p, 30, seed=7)
    assert a.get(0) == b.get(0)
    assert a.heads == b.heads
    assert a.get(0) != sample_traces(p, 30, seed=8).get(0)


def test_sampled_pairs_are_single_iterations():
    for name in ("doubling", "sequential", "nested_drain", "subtraction_gcd"):
        p = corpus_program(name)
        store = sample_traces(p, 40, seed=1)
        for k in p.loop_ids:
            for pre, post in store.get(k):
                assert run_body_once(p, k, dict(zip(p.vars, pre))) == dict(zip(p.vars, post))


def test_pairs_are_duplicate_free_and_capped():
    p = parse_program("while (x > 0) { x--; }")
    store = sample_traces(p, 100, seed=0, value_range=(-100, 100), iter_cap=3)
    pairs = store.get(0)
    assert len(pairs) == len(set(pairs))
    # each run contributes at most three iterations, starting from its initial value
    assert all(pre[0] - post[0] == 1 for pre, post in pairs)
    assert len(pairs) <= 300


def test_heads_include_exit_states():
    p = parse_program("while (x > 0) { x--; }")
    store = sample_traces(p, 20, seed=0)
    heads = store.head_states(0)
    assert any(h[0] <= 0 for h in heads)
    assert set(store.entry_states(0)) <= set(heads)


def test_nondet_values_stay_in_range():
    p = parse_program("while (x > 0) { y := nondet(); x--; }")
    store = sample_traces(p, 50, seed=3, value_range=(-4, 4))
    assert all(-4 <= post[1] <= 4 for _, post in store.get(0))


def test_fuel_exhaustion_keeps_completed_iterations():
    p = parse_program("while (x > 0) { x := x; }")
    store = sample_traces(p, 20, seed=0, fuel=200)
    assert store.get(0)
    assert all(pre == post for pre, post in store.get(0))


def test_explicit_initial_states_run_first():
    p = corpus_program("doubling")
    store = sample_traces(p, 0, initial_states=[{"y": 1, "n": 2, "z": 7, "m": 0}])
    # the prefix sets y := n, z := n + 1 before the loop
    assert store.get(0)[0] == ((2, 2, 3, 0), (3, 2, 4, 2))


def test_jsonl_dump():
    p = parse_program("while (x > 0) { x--; }")
    store = sample_traces(p, 5, seed=0)
    rows = [json.loads(line) for line in store.to_jsonl()]
    assert len(rows) == len(store)
    assert all(r["pre"]["x"] - r["post"]["x"] == 1 for r in rows)


def test_merge_unions_pairs():
    p = parse_program("while (x > 0) { x--; }")
    a = sample_traces(p, 5, seed=0)
    b = sample_traces(p, 5, seed=1)
    merged = a.merge(b)
    assert set(merged.get(0)) == set(a.get(0)) | set(b.get(0))


def test_nondet_needs_a_random_stream():
    p = parse_program("x := nondet();")
    with pytest.raises(ValueError):
        run_program(p, {"x": 0})
    assert -10 <= run_program(p, {"x": 0}, rng=random.Random(0))["x"] <= 10
