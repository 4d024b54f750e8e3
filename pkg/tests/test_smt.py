import sys
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from syndicate import formula as F
from syndicate.formula import Var
from syndicate.smt import (
    ProtocolError, Session, SolverConfig, SolverCrashed, Status, check_sat, parse_model,
    select_logic, to_smtlib,
)

x, y, z = Var("x"), Var("y"), Var("z")


def test_script_is_deterministic_and_declares_everything():
    f = F.and_(F.ge(F.add(x, y), 1), F.lt(z, 0))
    a = to_smtlib(f, declare=["w"])
    assert a == to_smtlib(f, declare=["w"])
    assert a.startswith("(set-logic QF_LIA)")
    for name in "wxyz":
        assert f"(declare-const {name} Int)" in a


def test_negative_literals_are_prefix_minus():
    assert "(- 3)" in to_smtlib(F.ge(x, -3))


def test_logic_selection():
    assert select_logic(F.ge(F.mul(2, x), y)) == "QF_LIA"
    assert select_logic(F.ge(F.mul(x, y), 0)) == "QF_NIA"
    assert select_logic(F.forall(["x"], F.ge(F.mul(x, x), 0))) == "NIA"
    assert select_logic(F.ge(x, 0), "Real") == "QF_LRA"


def test_positive_existentials_are_lifted():
    text = to_smtlib(F.exists(["x"], F.ge(x, 0)))
    assert "exists" not in text
    assert "forall" in to_smtlib(F.forall(["x"], F.ge(x, y)))


def test_parse_model_values():
    model = parse_model("((a 3) (b (- 2)) (c (/ 1 2)) (|d.0| 0.5))", ["a", "b", "c", "d.0"])
    assert model == {"a": 3, "b": -2, "c": Fraction(1, 2), "d.0": Fraction(1, 2)}


@pytest.mark.parametrize("text", ["((a 1)", "(a 1)", "((a))", "((a foo))"])
def test_parse_model_rejects_garbage(text):
    with pytest.raises(ProtocolError):
        parse_model(text, ["a"])


def test_parse_model_requires_declared_names():
    with pytest.raises(ProtocolError):
        parse_model("((a 1))", ["a", "b"])


@pytest.mark.solver
def test_sat_unsat_and_models():
    res = check_sat(F.and_(F.ge(x, 3), F.le(F.add(x, y), 0), F.eq(z, F.mul(2, y))))
    assert res.sat
    m = res.model
    assert m["x"] >= 3 and m["x"] + m["y"] <= 0 and m["z"] == 2 * m["y"]
    assert check_sat(F.and_(F.gt(x, 0), F.lt(x, 1))).unsat


@pytest.mark.solver
def test_real_sort_and_minimize():
    with Session() as s:
        res = s.check(F.and_(F.ge(F.mul(2, x), 1), F.ge(y, x)), sort="Real", minimize=F.add(x, y))
        assert res.sat
        assert res.model["x"] == Fraction(1, 2) and res.model["y"] == Fraction(1, 2)


@pytest.mark.solver
def test_nonlinear_path():
    assert check_sat(F.and_(F.eq(F.mul(x, y), 12), F.gt(x, 3), F.gt(y, 2))).sat


@pytest.mark.solver
def test_timeout_is_reported_not_raised():
    # factoring a 60-bit semiprime is well out of reach in a few milliseconds
    n = 1000000007 * 998244353
    f = F.and_(F.eq(F.mul(x, y), n), F.gt(x, 1), F.gt(y, 1))
    with Session(SolverConfig(timeout_ms=50)) as s:
        res = s.check(f)
        assert res.status in (Status.TIMEOUT, Status.UNKNOWN)
        # the session stays usable
        assert s.check(F.ge(x, 0)).sat


@pytest.mark.solver
def test_session_reuses_one_process():
    with Session() as s:
        for k in range(5):
            assert s.check(F.eq(x, k)).model["x"] == k
        assert s.calls == 5


def test_missing_solver():
    with pytest.raises(SolverCrashed):
        Session(SolverConfig(executable="/nonexistent/solver")).check(F.ge(x, 0))


def test_protocol_error_from_misbehaving_solver(tmp_path):
    fake = tmp_path / "fake.py"
    fake.write_text("import sys\nfor line in sys.stdin:\n    if 'check-sat' in line:\n        print('maybe', flush=True)\n")
    cfg = SolverConfig(executable=sys.executable, args=[str(fake)])
    with Session(cfg) as s, pytest.raises(ProtocolError):
        s.check(F.ge(x, 0))


@pytest.mark.solver
@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3), st.integers(-5, 5)), min_size=1, max_size=4))
def test_models_satisfy_linear_systems(rows):
    f = F.and_(*(F.ge(F.add(F.mul(a, x), F.mul(b, y), c), 0) for a, b, c in rows))
    res = check_sat(f)
    if res.sat:
        assert F.evaluate(f, res.model) is True
    else:
        # unsat claims are cross-checked on a box that contains a witness when one exists
        assert res.unsat
        assert not any(all(a * i + b * j + c >= 0 for a, b, c in rows)
                       for i in range(-12, 13) for j in range(-12, 13))
