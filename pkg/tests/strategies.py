"""Hypothesis strategies for small while programs and annotations."""

from hypothesis import strategies as st

from syndicate.lang import (
    And, Assign, BinOp, Cmp, If, IntLit, Neg, Not, Or, VarRef, While, make_program, seq,
)
from syndicate.linear import Affine

VARS = ("x", "y", "z")


def exprs(vars=VARS, depth: int = 2):
    leaf = st.one_of(st.builds(IntLit, st.integers(-3, 3)), st.sampled_from(vars).map(VarRef))
    if depth == 0:
        return leaf
    sub = exprs(vars, depth - 1)
    return st.one_of(
        leaf,
        st.builds(BinOp, st.sampled_from(["+", "-"]), sub, sub),
        st.builds(lambda e: BinOp("*", IntLit(2), e), sub),
        st.builds(Neg, sub),
    )


def bexprs(vars=VARS, depth: int = 1):
    atom = st.builds(Cmp, st.sampled_from(["<", "<=", ">", ">=", "==", "!="]), exprs(vars, 1), exprs(vars, 1))
    if depth == 0:
        return atom
    sub = bexprs(vars, depth - 1)
    return st.one_of(atom, st.builds(And, sub, sub), st.builds(Or, sub, sub), st.builds(Not, sub))


def stmts(vars=VARS, depth: int = 2, loops: bool = True):
    assign = st.builds(Assign, st.sampled_from(vars), exprs(vars, 1))
    if depth == 0:
        return assign
    sub = stmts(vars, depth - 1, loops)
    block = st.lists(sub, min_size=1, max_size=3).map(lambda xs: seq(*xs))
    options = [assign, st.builds(If, bexprs(vars, 0), block, block)]
    if loops:
        options.append(st.builds(lambda c, b: While(-1, c, b), bexprs(vars, 0), block))
    return st.one_of(*options)


def programs(vars=VARS, depth: int = 2):
    """Programs with at least one loop."""
    loop = st.builds(lambda c, b: While(-1, c, b), bexprs(vars, 0),
                     st.lists(stmts(vars, depth - 1), min_size=1, max_size=3).map(lambda xs: seq(*xs)))
    return st.tuples(st.lists(stmts(vars, 1, False), max_size=2), loop,
                     st.lists(stmts(vars, depth), max_size=2)).map(
        lambda t: make_program(seq(*t[0], t[1], *t[2])))


def affines(vars=VARS, bound: int = 2):
    return st.builds(lambda c, cs: Affine.make(c, zip(vars, cs)),
                     st.integers(-bound, bound), st.lists(st.integers(-bound, bound), min_size=len(vars),
                                                          max_size=len(vars)))
