"""Algebraic obstructions to metrisability of a projective structure.

Three tensors built from the curvature package enter a stacked linear system
for the unknown inverse-metric candidate g^{ab} (symmetric) and the vector
mu^a:

* the g-only block, whose endomorphism determinants per antisymmetric index
  pair must all vanish for a metric to exist;
* the block coupling grad-Weyl and Cotton terms to (g, mu);
* the block coupling grad-Cotton and Weyl-Schouten terms to (g, mu).

Symmetrisation brackets carry 1/k! weights throughout.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .expr import Chart, Expression, dot_sum
from .linalg import KernelResult, determinant, kernel_symbolic
from .tensors import CurvaturePackage, Tensor, covariant_derivative

__all__ = [
    "ObstructionTensors",
    "obstruction_t",
    "obstruction_s",
    "obstruction_u",
    "obstruction_tensors",
    "endomorphism_matrix",
    "endomorphism_determinants",
    "weyl_symmetry_residual",
    "LinearSystem",
    "assemble_linear_system",
    "symmetric_pairs",
]


def symmetric_pairs(n: int) -> list[tuple[int, int]]:
    """Basis order of the symmetric-2-tensor components: (i, j) with i <= j."""
    return [(i, j) for i in range(n) for j in range(i, n)]


def obstruction_t(pkg: CurvaturePackage) -> Tensor:
    """Rank-6 tensor of the purely algebraic g-equation; slots (e,d,c,b,a,f).

    Antisymmetric in (e,d), symmetric in (c,b) and in (a,f).
    """
    chart = pkg.chart
    n = chart.dimension
    W = pkg.weyl
    quarter = chart.constant(Fraction(1, 4))
    inv4n = chart.constant(Fraction(1, 4 * n))
    minv4n = chart.constant(Fraction(-1, 4 * n))

    def fn(e, d, c, b, a, f):
        pairs = []
        if c == a:
            pairs.append((quarter, W[b, f, e, d]))
        if c == f:
            pairs.append((quarter, W[b, a, e, d]))
        if b == a:
            pairs.append((quarter, W[c, f, e, d]))
        if b == f:
            pairs.append((quarter, W[c, a, e, d]))
        if b == d:
            pairs.append((inv4n, W[c, a, f, e]))
            pairs.append((inv4n, W[c, f, a, e]))
        if b == e:
            pairs.append((minv4n, W[c, a, f, d]))
            pairs.append((minv4n, W[c, f, a, d]))
        if c == d:
            pairs.append((inv4n, W[b, a, f, e]))
            pairs.append((inv4n, W[b, f, a, e]))
        if c == e:
            pairs.append((minv4n, W[b, a, f, d]))
            pairs.append((minv4n, W[b, f, a, d]))
        return dot_sum(pairs, chart)

    return Tensor.build(chart, "dduudd", fn)


def obstruction_s(pkg: CurvaturePackage, grad_weyl: Optional[Tensor] = None) -> Tensor:
    """Rank-5 tensor coupling grad-Weyl and Cotton; slots (a,e,b,c,d).

    Antisymmetric in (a,e), symmetric in (c,d); the covariant-derivative
    index of the Weyl gradient is its last slot.
    """
    chart = pkg.chart
    n = chart.dimension
    Y = pkg.cotton
    gw = grad_weyl if grad_weyl is not None else covariant_derivative(pkg.weyl, pkg.connection)
    w_y = chart.constant(Fraction(n - 2, 4))
    half = chart.constant(Fraction(1, 2))
    quarter = chart.constant(Fraction(1, 4))
    mquarter = chart.constant(Fraction(-1, 4))

    def fn(a, e, b, c, d):
        pairs = []
        if b == d:
            pairs.append((w_y, Y[e, a, c]))
        if b == c:
            pairs.append((w_y, Y[e, a, d]))
        pairs.append((half, gw[b, d, e, a, c]))
        pairs.append((half, gw[b, c, e, a, d]))
        pairs.append((quarter, gw[b, c, d, e, a]))
        pairs.append((quarter, gw[b, d, c, e, a]))
        pairs.append((mquarter, gw[b, c, d, a, e]))
        pairs.append((mquarter, gw[b, d, c, a, e]))
        return dot_sum(pairs, chart)

    return Tensor.build(chart, "ddudd", fn)


def obstruction_u(pkg: CurvaturePackage, grad_cotton: Optional[Tensor] = None) -> Tensor:
    """Rank-4 tensor coupling grad-Cotton and Weyl-Schouten; slots (a,b,c,d).

    Antisymmetric in (a,b), symmetric in (c,d).
    """
    chart = pkg.chart
    n = chart.dimension
    P = pkg.schouten
    W = pkg.weyl
    gy = grad_cotton if grad_cotton is not None else covariant_derivative(pkg.cotton, pkg.connection)
    quarter = chart.constant(Fraction(1, 4))
    mquarter = chart.constant(Fraction(-1, 4))

    def fn(a, b, c, d):
        pairs = [
            (quarter, gy[b, c, d, a]),
            (quarter, gy[b, d, c, a]),
            (mquarter, gy[a, c, d, b]),
            (mquarter, gy[a, d, c, b]),
        ]
        for e in range(n):
            pairs.append((quarter, W[e, c, d, a], P[b, e]))
            pairs.append((quarter, W[e, d, c, a], P[b, e]))
            pairs.append((mquarter, W[e, c, d, b], P[a, e]))
            pairs.append((mquarter, W[e, d, c, b], P[a, e]))
        return dot_sum(pairs, chart)

    return Tensor.build(chart, "dddd", fn)


@dataclass(frozen=True)
class ObstructionTensors:
    t: Tensor
    s: Tensor
    u: Tensor

    def __post_init__(self):
        if not (
            self.t.check_symmetric(0, 1, anti=True)
            and self.t.check_symmetric(2, 3)
            and self.t.check_symmetric(4, 5)
        ):
            raise AssertionError("g-block obstruction lacks its index symmetries")
        if not (self.s.check_symmetric(0, 1, anti=True) and self.s.check_symmetric(3, 4)):
            raise AssertionError("mu-block obstruction lacks its index symmetries")
        if not (self.u.check_symmetric(0, 1, anti=True) and self.u.check_symmetric(2, 3)):
            raise AssertionError("scalar-block obstruction lacks its index symmetries")


def obstruction_tensors(pkg: CurvaturePackage) -> ObstructionTensors:
    grad_weyl = covariant_derivative(pkg.weyl, pkg.connection)
    grad_cotton = covariant_derivative(pkg.cotton, pkg.connection)
    return ObstructionTensors(
        obstruction_t(pkg),
        obstruction_s(pkg, grad_weyl),
        obstruction_u(pkg, grad_cotton),
    )


def endomorphism_matrix(t: Tensor, e: int, d: int) -> list[list[Expression]]:
    """Matrix of kappa^{af} -> T_[ed]^{cb}_{af} kappa^{af} on symmetric
    2-tensors, in the basis of unit symmetric pairs (i <= j)."""
    n = t.chart.dimension
    pairs = symmetric_pairs(n)
    rows = []
    for (c, b) in pairs:
        row = []
        for (i, j) in pairs:
            entry = t[e, d, c, b, i, j]
            if i != j:
                entry = entry + t[e, d, c, b, j, i]
            row.append(entry)
        rows.append(row)
    return rows


def endomorphism_determinants(t: Tensor) -> list[tuple[tuple[int, int], Expression]]:
    """Determinant of the symmetric-2-tensor endomorphism for each index pair
    e < d; every determinant must vanish for the structure to be metrisable."""
    chart = t.chart
    n = chart.dimension
    out = []
    for e in range(n):
        for d in range(e + 1, n):
            rows = endomorphism_matrix(t, e, d)
            out.append(((e, d), determinant(rows, chart)))
    return out


def weyl_symmetry_residual(weyl: Tensor, g_upper: Tensor, g_lower: Optional[Tensor] = None) -> Tensor:
    """Residual of the metric compatibility condition on the Weyl tensor:
    g_ae g^{bc} W^e_bcd - g_de g^{bc} W^e_bca; zero is necessary for a metric
    conformal to the inverse of g_upper."""
    chart = weyl.chart
    n = chart.dimension
    if g_lower is None:
        from .metric import inverse_symmetric  # local import to avoid a cycle

        g_lower = inverse_symmetric(g_upper)

    def contracted(a, d):
        pairs = []
        for e in range(n):
            ge = g_lower[a, e]
            if ge.is_zero:
                continue
            for b in range(n):
                for c in range(n):
                    w = weyl[e, b, c, d]
                    if w.is_zero:
                        continue
                    gb = g_upper[b, c]
                    if not gb.is_zero:
                        pairs.append((ge, gb, w))
        return dot_sum(pairs, chart)

    lhs = Tensor.build(chart, "dd", contracted)
    return Tensor.build(chart, "dd", lambda a, d: lhs[a, d] - lhs[d, a])


@dataclass
class LinearSystem:
    """Stacked pointwise-linear system in the unknowns (g^{(ij)}, mu^a).

    Unknown order: symmetric pairs (i <= j) lexicographic, then mu components.
    Rows carry a tag naming the equation block they came from.
    """

    chart: Chart
    rows: list[tuple[str, list[Expression]]]

    @property
    def n_unknowns(self) -> int:
        n = self.chart.dimension
        return len(symmetric_pairs(n)) + n

    def kernel(self) -> KernelResult:
        return kernel_symbolic(self.rows, self.n_unknowns, self.chart)

    def kernel_through(self, tags: Sequence[str]) -> KernelResult:
        selected = [row for row in self.rows if row[0] in tags]
        return kernel_symbolic(selected, self.n_unknowns, self.chart)

    def numeric_matrix(self, point, impls=None) -> np.ndarray:
        data = [
            [c.evaluate(point, impls) for c in coeffs]
            for _, coeffs in self.rows
        ]
        return np.asarray(data, dtype=float)


def assemble_linear_system(obs: ObstructionTensors, pkg: CurvaturePackage) -> LinearSystem:
    """Rows of the stacked system: the g-only block, then the two blocks
    coupling g with mu."""
    chart = pkg.chart
    n = chart.dimension
    W, Y = pkg.weyl, pkg.cotton
    pairs = symmetric_pairs(n)
    m = len(pairs)
    zero = chart.zero()

    def g_coeff(tensor: Tensor, prefix: tuple[int, ...], i: int, j: int) -> Expression:
        entry = tensor[prefix + (i, j)]
        if i != j:
            entry = entry + tensor[prefix + (j, i)]
        return entry

    rows: list[tuple[str, list[Expression]]] = []
    for e in range(n):
        for d in range(e + 1, n):
            for (c, b) in pairs:
                coeffs = [g_coeff(obs.t, (e, d, c, b), i, j) for (i, j) in pairs]
                coeffs.extend([zero] * n)
                rows.append(("equi", coeffs))

    half = Fraction(1, 2)
    npl4 = Fraction(n + 4, 2)
    for a in range(n):
        for e in range(a + 1, n):
            for b in range(n):
                coeffs = [g_coeff(obs.s, (a, e, b), i, j) for (i, j) in pairs]
                for c in range(n):
                    rhs = npl4 * W[b, c, a, e] + (W[b, a, e, c] - W[b, e, a, c]) * half
                    coeffs.append(-rhs)
                rows.append(("ic1", coeffs))

    npl3 = Fraction(n + 3, 2)
    for a in range(n):
        for b in range(a + 1, n):
            coeffs = [g_coeff(obs.u, (a, b), i, j) for (i, j) in pairs]
            for c in range(n):
                coeffs.append(npl3 * Y[b, a, c])
            rows.append(("i2", coeffs))

    return LinearSystem(chart, rows)
