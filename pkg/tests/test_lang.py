import pytest
from hypothesis import given, settings

from syndicate.lang import (
    Assign, BinOp, Cmp, IntLit, Nondet, ParseError, ValidationError, VarRef, While,
    collect_loops, parse_bexpr, parse_program, pretty_print,
)

from conftest import corpus_program
from strategies import programs


def test_variables_in_order_of_first_appearance():
    p = corpus_program("doubling")
    assert p.vars == ("y", "n", "z", "m")


def test_loop_ids_are_preorder():
    p = parse_program("while (a > 0) { while (b > 0) { b--; } a--; } while (c > 0) { c--; }")
    infos = collect_loops(p)
    assert [(i.loop_id, i.depth, i.parent) for i in infos] == [(0, 0, None), (1, 1, 0), (2, 0, None)]
    assert p.loop(1).cond == Cmp(">", VarRef("b"), IntLit(0))


def test_increment_sugar():
    p = parse_program("x++; y--;")
    assert p.body.first == Assign("x", BinOp("+", VarRef("x"), IntLit(1)))
    assert p.body.second == Assign("y", BinOp("-", VarRef("y"), IntLit(1)))


def test_precedence():
    b = parse_bexpr("a + b * c > 1 || !(x == y) && true")
    assert b.left.left.right == BinOp("*", VarRef("b"), VarRef("c"))


def test_parenthesised_arithmetic_in_comparison():
    b = parse_bexpr("(a + b) * 2 <= c")
    assert b == Cmp("<=", BinOp("*", BinOp("+", VarRef("a"), VarRef("b")), IntLit(2)), VarRef("c"))


def test_nondet_only_as_whole_rhs():
    p = parse_program("x := nondet();")
    assert p.body == Assign("x", Nondet())
    with pytest.raises(ValidationError):
        parse_program("x := nondet() + 1;")
    with pytest.raises(ValidationError):
        parse_program("while (nondet() > 0) { skip; }")


@pytest.mark.parametrize("text", [
    "x := ;", "while (x > 0) { x--; ", "if x > 0 { skip; }", "x := 1", "x = 1;", "while := 3;", "x := 1 $ 2;",
])
def test_syntax_errors_carry_positions(text):
    with pytest.raises(ParseError) as info:
        parse_program(text)
    assert info.value.line >= 1 and info.value.column >= 1


def test_error_position_is_accurate():
    with pytest.raises(ParseError) as info:
        parse_program("x := 1;\ny := 2 +;\n")
    assert (info.value.line, info.value.column) == (2, 9)


def test_comments_are_skipped():
    p = parse_program("// header\nx := 1; // trailing\n")
    assert p.vars == ("x",)


def test_empty_else_and_skip():
    p = parse_program("if (x > 0) { skip; }")
    assert "if (x > 0) {" in pretty_print(p)


@settings(max_examples=200, deadline=None)
@given(programs())
def test_pretty_print_round_trips(p):
    again = parse_program(pretty_print(p))
    assert again == p
    assert [w.loop_id for w in [again.loop(k) for k in again.loop_ids]] == p.loop_ids


def test_corpus_parses_and_round_trips():
    from conftest import CORPUS
    files = list(CORPUS.glob("*.while")) + list(CORPUS.glob("negative/*.while"))
    assert len(files) >= 20
    for path in files:
        p = parse_program(path.read_text())
        assert parse_program(pretty_print(p)) == p
        assert isinstance(p.loop(0), While)
