"""(Pseudo)Riemannian side: Levi-Civita connections, the metric curvature
decomposition, comparison of projective and metric tensors, and the
constant-curvature family used as a conformally flat test bed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from .expr import Chart, Expression
from .linalg import determinant
from .tensors import (
    Connection,
    CurvaturePackage,
    Tensor,
    covariant_derivative,
    curvature,
    decompose,
)

__all__ = [
    "Metric",
    "SingularMetricError",
    "inverse_symmetric",
    "levi_civita",
    "MetricCurvature",
    "metric_decomposition",
    "ProjectiveMetricReport",
    "projective_vs_metric_report",
    "weyl_equality_residual",
    "desitter_metric",
]


class SingularMetricError(Exception):
    pass


def inverse_symmetric(g: Tensor) -> Tensor:
    """Exact inverse of a symmetric 2-tensor via adjugate over determinant."""
    chart = g.chart
    n = chart.dimension
    rows = [[g[i, j] for j in range(n)] for i in range(n)]
    det = determinant(rows, chart)
    if det.is_zero:
        raise SingularMetricError("symmetric tensor is degenerate")

    def cofactor(i, j):
        minor = [
            [rows[r][c] for c in range(n) if c != j] for r in range(n) if r != i
        ]
        sub = determinant(minor, chart)
        return sub if (i + j) % 2 == 0 else -sub

    return Tensor.build(chart, "uu", lambda a, b: cofactor(b, a) / det)


@dataclass(frozen=True)
class Metric:
    """Symmetric nondegenerate metric g_ab with exact components."""

    chart: Chart
    g: Tensor
    signature: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if self.g.variance != "dd":
            raise ValueError("metric components must be twice covariant")
        if not self.g.check_symmetric(0, 1):
            raise ValueError("metric is not symmetric")
        if self.determinant().is_zero:
            raise SingularMetricError("metric determinant vanishes identically")

    def determinant(self) -> Expression:
        n = self.chart.dimension
        rows = [[self.g[i, j] for j in range(n)] for i in range(n)]
        return determinant(rows, self.chart)

    def inverse(self) -> Tensor:
        return inverse_symmetric(self.g)


def levi_civita(metric: Metric, verify: bool = True) -> Connection:
    """Levi-Civita connection of the metric; metric compatibility is checked
    exactly unless ``verify`` is disabled."""
    chart = metric.chart
    n = chart.dimension
    g = metric.g
    ginv = metric.inverse()
    dg = {}
    for a in range(n):
        for b in range(a, n):
            e = g[a, b]
            for c in range(n):
                d = e.differentiate(c)
                dg[(a, b, c)] = d
                dg[(b, a, c)] = d

    half = Fraction(1, 2)

    def fn(a, b, c):
        total = chart.zero()
        for d in range(n):
            gi = ginv[a, d]
            if gi.is_zero:
                continue
            total = total + gi * (dg[(d, c, b)] + dg[(d, b, c)] - dg[(b, c, d)])
        return total * half

    conn = Connection(chart, Tensor.build(chart, "udd", fn))
    if verify:
        grad = covariant_derivative(g, conn)
        if not grad.is_zero:
            raise AssertionError("Levi-Civita construction failed metric compatibility")
    return conn


@dataclass(frozen=True)
class MetricCurvature:
    """Metric-side decomposition of the Levi-Civita curvature."""

    metric: Metric
    connection: Connection
    riemann: Tensor
    ricci: Tensor
    scalar: Expression
    weyl: Tensor  # metric Weyl tensor
    schouten: Tensor  # metric Schouten tensor


def metric_decomposition(metric: Metric, verify: bool = True) -> MetricCurvature:
    """Metric Weyl/Schouten split of the curvature (dimension >= 3)."""
    chart = metric.chart
    n = chart.dimension
    if n < 3:
        raise ValueError("metric decomposition requires dimension >= 3")
    conn = levi_civita(metric, verify=False)
    riemann = curvature(conn)
    ricci = Tensor.build(
        chart,
        "dd",
        lambda a, b: _sum(chart, (riemann[c, a, c, b] for c in range(n))),
    )
    ginv = metric.inverse()
    scalar = _sum(
        chart,
        (
            ginv[a, b] * ricci[a, b]
            for a in range(n)
            for b in range(n)
            if not (ginv[a, b].is_zero or ricci[a, b].is_zero)
        ),
    )
    denom = Fraction(1, n - 2)
    trace_w = Fraction(1, 2 * (n - 1))

    def schouten_fn(a, b):
        return (ricci[a, b] - metric.g[a, b] * scalar * trace_w) * denom

    schouten = Tensor.build(chart, "dd", schouten_fn)

    g = metric.g

    def weyl_fn(a, b, c, d):
        total = riemann[a, b, c, d]
        if a == c:
            total = total - schouten[d, b]
        if a == d:
            total = total + schouten[c, b]
        for e in range(n):
            ge = ginv[a, e]
            if ge.is_zero:
                continue
            if not g[b, d].is_zero:
                total = total - g[b, d] * ge * schouten[e, c]
            if not g[b, c].is_zero:
                total = total + g[b, c] * ge * schouten[e, d]
        return total

    weyl = Tensor.build(chart, "uddd", weyl_fn)

    if verify:
        for a, b, c, d in itertools.product(range(n), repeat=4):
            total = weyl[a, b, c, d]
            if a == c:
                total = total + schouten[d, b]
            if a == d:
                total = total - schouten[c, b]
            for e in range(n):
                total = total + g[b, d] * ginv[a, e] * schouten[e, c]
                total = total - g[b, c] * ginv[a, e] * schouten[e, d]
            if not (total - riemann[a, b, c, d]).is_zero:
                raise AssertionError("metric curvature decomposition failed to recombine")

    return MetricCurvature(metric, conn, riemann, ricci, scalar, weyl, schouten)


@dataclass(frozen=True)
class ProjectiveMetricReport:
    """Residual tensors comparing projective and metric curvature data; all
    vanish identically for every metric."""

    ricci_proportionality: Tensor  # projective Schouten minus Ricci/(n-1)
    einstein_gap: Tensor  # projective minus metric Schouten plus Einstein term
    weyl_relation: Tensor  # projective Weyl minus its metric expression
    symmetry_condition: Tensor  # metric compatibility condition on the Weyl tensor

    @property
    def all_zero(self) -> bool:
        return (
            self.ricci_proportionality.is_zero
            and self.einstein_gap.is_zero
            and self.weyl_relation.is_zero
            and self.symmetry_condition.is_zero
        )


def projective_vs_metric_report(
    metric: Metric,
    projective_pkg: Optional[CurvaturePackage] = None,
    metric_curv: Optional[MetricCurvature] = None,
) -> ProjectiveMetricReport:
    chart = metric.chart
    n = chart.dimension
    if n < 3:
        raise ValueError("comparison requires dimension >= 3")
    if metric_curv is None:
        metric_curv = metric_decomposition(metric, verify=False)
    if projective_pkg is None:
        projective_pkg = decompose(metric_curv.connection, cross_check=False)

    g = metric.g
    ginv = metric.inverse()
    ricci = metric_curv.ricci
    scalar = metric_curv.scalar
    p_hat = projective_pkg.schouten
    w_hat = projective_pkg.weyl

    inv_n1 = Fraction(1, n - 1)
    res1 = Tensor.build(chart, "dd", lambda a, b: p_hat[a, b] - ricci[a, b] * inv_n1)

    inv_g = Fraction(1, (n - 1) * (n - 2))

    def einstein(a, b):
        return ricci[a, b] - g[a, b] * scalar * Fraction(1, 2)

    res2 = Tensor.build(
        chart,
        "dd",
        lambda a, b: p_hat[a, b] - metric_curv.schouten[a, b] + einstein(a, b) * inv_g,
    )

    inv_n2 = Fraction(1, n - 2)

    def weyl_rel(a, b, c, d):
        total = metric_curv.weyl[a, b, c, d]
        for e in range(n):
            ge = ginv[a, e]
            if ge.is_zero:
                continue
            if not g[b, d].is_zero:
                total = total + g[b, d] * ge * ricci[e, c] * inv_n2
            if not g[b, c].is_zero:
                total = total - g[b, c] * ge * ricci[e, d] * inv_n2
        if a == c:
            total = total + ricci[d, b] * inv_g
        if a == d:
            total = total - ricci[c, b] * inv_g
        if a == d:
            total = total + scalar * g[b, c] * inv_g
        if a == c:
            total = total - scalar * g[b, d] * inv_g
        return w_hat[a, b, c, d] - total

    res3 = Tensor.build(chart, "uddd", weyl_rel)

    from .obstructions import weyl_symmetry_residual

    res4 = weyl_symmetry_residual(w_hat, ginv, g)

    return ProjectiveMetricReport(res1, res2, res3, res4)


def weyl_equality_residual(metric: Metric, metric_curv: Optional[MetricCurvature] = None) -> Tensor:
    """Contraction deciding whether the projective and metric Weyl tensors
    agree: zero exactly when they do (Einstein metrics in particular)."""
    chart = metric.chart
    n = chart.dimension
    if n < 3:
        raise ValueError("requires dimension >= 3")
    if metric_curv is None:
        metric_curv = metric_decomposition(metric, verify=False)
    g = metric.g
    ginv = metric.inverse()
    ricci = metric_curv.ricci

    trace_r = _sum(
        chart,
        (
            ginv[e, f] * ricci[e, f]
            for e in range(n)
            for f in range(n)
            if not (ginv[e, f].is_zero or ricci[e, f].is_zero)
        ),
    )

    def fn(a, b, c, d):
        total = chart.zero()
        total = total + g[a, c] * ricci[d, b]
        total = total - g[a, d] * ricci[c, b]
        total = total + g[a, d] * g[c, b] * trace_r
        total = total - g[a, c] * g[d, b] * trace_r
        total = total + (n - 1) * (g[b, d] * ricci[a, c] - g[b, c] * ricci[a, d])
        return total

    return Tensor.build(chart, "dddd", fn)


def desitter_metric(n: int, p: int, q: int, X: Sequence) -> Metric:
    """Constant-curvature metric eta_ab dx^a dx^b / (eta(X, x))^2 on the open
    set where the linear form eta(X, x) does not vanish."""
    if p + q != n or n < 2:
        raise ValueError("signature must satisfy p + q = n >= 2")
    chart = Chart(n, tuple(f"x{i+1}" for i in range(n)))
    eta = [1] * p + [-1] * q
    Xv = [Fraction(x) for x in X]
    lin = _sum(chart, (chart.coordinate(i) * (eta[i] * Xv[i]) for i in range(n)))
    if lin.is_zero:
        raise ValueError("the defining linear form vanishes identically (null domain)")
    denom = lin ** 2

    def fn(a, b):
        if a != b:
            return chart.zero()
        return chart.constant(eta[a]) / denom

    return Metric(chart, Tensor.build(chart, "dd", fn), signature=(p, q))


def eta_norm(p: int, q: int, X: Sequence) -> Fraction:
    eta = [1] * p + [-1] * q
    Xv = [Fraction(x) for x in X]
    return sum((eta[i] * Xv[i] * Xv[i] for i in range(p + q)), Fraction(0))


def _sum(chart: Chart, items) -> Expression:
    total = chart.zero()
    for item in items:
        total = total + item
    return total
