import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from syndicate.linear import Affine
from syndicate.smt import Session
from syndicate.templates import (
    DEFAULT_PORTFOLIO, InvariantTemplate, NonPositiveDelta, RankingFunction, RankingTemplate,
    decode_invariant, decode_ranking, encode_candidate_constraints, encode_invariant_candidate,
    integral_direction, l1_vectors, lex_decreases, normalize_ranking, parse_ranking, parse_template,
    parse_templates, ranking_unknowns, reduces_on, search_invariant_candidate, template_ladder,
)

VARS = ("x", "y")


def test_parse_templates():
    assert parse_template("T(2,1)") == RankingTemplate(2, 1)
    assert [t.name for t in parse_templates(",".join(DEFAULT_PORTFOLIO))] == list(DEFAULT_PORTFOLIO)
    assert parse_template("T(1,2)", None).budget is None
    with pytest.raises(ValueError):
        parse_template("T(0,1)")
    with pytest.raises(ValueError):
        parse_template("lex")


def test_template_ladder_is_increasing():
    ladder = template_ladder(RankingTemplate(1, 2), [10, 100, 1000])
    assert [t.budget for t in ladder] == [10, 100, 1000]
    with pytest.raises(ValueError):
        template_ladder(RankingTemplate(1, 1), [10, 10])


def test_lex_decreases():
    assert lex_decreases((3, 0), (2, 9))
    assert lex_decreases((3, 5), (3, 4))
    assert not lex_decreases((3, 5), (4, 0))
    assert not lex_decreases((3, 5), (3, 5))


def test_ranking_function_evaluation_and_text():
    f = RankingFunction(((Affine.make(-1, {"x": 2}),), ()))
    assert f({"x": 3, "y": 0}) == (5, 0)
    assert f({"x": 0, "y": 0}) == (0, 0)
    assert parse_ranking(str(f)) == f
    assert reduces_on(f, {"x": 3, "y": 0}, {"x": 2, "y": 0})


def test_unknown_count():
    assert len(ranking_unknowns(VARS, RankingTemplate(2, 3))) == 2 * 3 * 3


pairs_strategy = st.lists(
    st.tuples(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), st.tuples(st.integers(-5, 5), st.integers(-5, 5))),
    min_size=1, max_size=5,
)


@pytest.mark.solver
@settings(max_examples=40, deadline=None)
@given(pairs_strategy, st.sampled_from(["T(1,1)", "T(2,1)", "T(1,2)"]))
def test_decoded_candidate_reduces_on_every_pair(pairs, tpl_text):
    tpl = parse_template(tpl_text, 20)
    names = [u.name for u in ranking_unknowns(VARS, tpl)]
    with Session() as s:
        res = s.check(encode_candidate_constraints(pairs, VARS, tpl), declare=names)
    if res.sat:
        f = decode_ranking(res.model, VARS, tpl)
        assert f.norm() <= 20
        for pre, post in pairs:
            assert reduces_on(f, dict(zip(VARS, pre)), dict(zip(VARS, post)))
    else:
        assert res.unsat


@pytest.mark.solver
def test_reflexive_pair_has_no_candidate():
    with Session() as s:
        for text in DEFAULT_PORTFOLIO:
            tpl = parse_template(text)
            q = encode_candidate_constraints([((1, 2), (1, 2))], VARS, tpl)
            assert s.check(q).unsat


@pytest.mark.solver
def test_invariant_candidate_separates():
    must = [(0, 0), (1, 0), (2, 1)]
    with Session() as s:
        res = s.check(encode_invariant_candidate(must, (-1, 0), [], 2, InvariantTemplate(10)),
                      declare=["d.0", "d.1", "d.2"])
    d = decode_invariant(res.model, VARS)
    assert d({"x": -1, "y": 0}) < 0
    assert all(d(dict(zip(VARS, s))) >= 0 for s in must)
    assert d.norm() <= 10


def test_integral_direction():
    assert integral_direction([Fraction(1, 2), Fraction(-3, 4), 0]) == (2, -3, 0)
    assert integral_direction([4, -6]) == (2, -3)
    assert integral_direction([0, 0]) == (0, 0)


@given(st.integers(1, 4), st.integers(0, 4))
def test_l1_vectors_are_exactly_the_sphere(dim, norm):
    got = list(l1_vectors(dim, norm))
    assert len(got) == len(set(got))
    expected = {v for v in itertools.product(range(-norm, norm + 1), repeat=dim) if sum(map(abs, v)) == norm}
    assert set(got) == expected


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3)), max_size=5),
       st.tuples(st.integers(-3, 3), st.integers(-3, 3)),
       st.lists(st.tuples(st.tuples(st.integers(-3, 3), st.integers(-3, 3)),
                          st.tuples(st.integers(-3, 3), st.integers(-3, 3))), max_size=3))
def test_enumeration_finds_smallest_separator(must, exclude, rows):
    def ok(d):
        val = lambda s: d[0] + d[1] * s[0] + d[2] * s[1]
        return (val(exclude) < 0 and all(val(s) >= 0 for s in must)
                and all(val(c) < 0 or val(c2) >= 0 for c, c2 in rows))

    found = search_invariant_candidate(must, exclude, rows, 2, 3)
    brute = [d for d in itertools.product(range(-3, 4), repeat=3) if 0 < sum(map(abs, d)) <= 3 and ok(d)]
    if found is None:
        assert not brute
    else:
        assert ok(found)
        assert sum(map(abs, found)) == min(sum(map(abs, d)) for d in brute)


def test_normalization_rejects_bad_delta():
    with pytest.raises(NonPositiveDelta):
        normalize_ranking([(1, 0)], 0, 0)
    assert normalize_ranking([(5, 3)], 1, 2) == [(Fraction(2), Fraction(1))]
