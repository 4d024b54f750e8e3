"""Integer affine expressions over program variables."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Union

from . import formula as F
from .lang import BinOp, IntLit, Neg, VarRef


@dataclass(frozen=True)
class Affine:
    """const + sum(c * x); coefficients sorted by variable name, zeros dropped."""

    const: int
    coeffs: tuple[tuple[str, int], ...] = ()

    @staticmethod
    def make(const: int, coeffs: Union[Mapping[str, int], Iterable[tuple[str, int]]] = ()) -> "Affine":
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        acc: dict[str, int] = {}
        for name, c in items:
            acc[name] = acc.get(name, 0) + int(c)
        return Affine(int(const), tuple(sorted((n, c) for n, c in acc.items() if c)))

    @staticmethod
    def from_vector(vars: Iterable[str], vector: Iterable[int]) -> "Affine":
        """Build from (d0, d1, ..., dn) aligned with `vars`."""
        vector = list(vector)
        return Affine.make(vector[0], zip(vars, vector[1:]))

    def vector(self, vars: Iterable[str]) -> tuple[int, ...]:
        c = dict(self.coeffs)
        return (self.const, *(c.get(v, 0) for v in vars))

    def __call__(self, s: Mapping[str, int]) -> int:
        return self.const + sum(c * s[n] for n, c in self.coeffs)

    def term(self, rename: Callable[[str], str] = str) -> F.Term:
        return F.linear(self.const, [(c, F.Var(rename(n))) for n, c in self.coeffs])

    def norm(self) -> int:
        return abs(self.const) + sum(abs(c) for _, c in self.coeffs)

    def __add__(self, other: "Affine") -> "Affine":
        return Affine.make(self.const + other.const, self.coeffs + other.coeffs)

    def scale(self, k: int) -> "Affine":
        return Affine.make(self.const * k, [(n, c * k) for n, c in self.coeffs])

    def __neg__(self) -> "Affine":
        return self.scale(-1)

    def __sub__(self, other: "Affine") -> "Affine":
        return self + (-other)

    def __str__(self) -> str:
        parts = [str(self.const)] + [f"{c}*{n}" for n, c in self.coeffs]
        return " + ".join(parts)


class NonlinearError(ValueError):
    pass


def affine_of(e) -> Affine:
    """Convert a frontend expression to an affine form, rejecting non-linear terms."""
    if isinstance(e, IntLit):
        return Affine(e.value)
    if isinstance(e, VarRef):
        return Affine.make(0, [(e.name, 1)])
    if isinstance(e, Neg):
        return -affine_of(e.arg)
    if isinstance(e, BinOp):
        a, b = affine_of(e.left), affine_of(e.right)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            if not a.coeffs:
                return b.scale(a.const)
            if not b.coeffs:
                return a.scale(b.const)
        raise NonlinearError(f"not linear: {e!r}")
    raise NonlinearError(f"not linear: {e!r}")
