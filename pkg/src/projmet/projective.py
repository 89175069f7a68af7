"""Operations on a projective class: gauge changes, special representatives,
flatness, recognition of projectively equivalent connections, and numeric
integration of unparametrized geodesics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .expr import Chart, Expression, compile_expressions, generator_values
from .forms import ScalarForm, find_primitive
from .tensors import Connection, CurvaturePackage, Tensor, curvature, decompose

__all__ = [
    "GaugeChange",
    "PrimitiveNotFoundError",
    "SingularityError",
    "gauge_transform",
    "schouten_skew_target",
    "make_special",
    "is_projectively_flat",
    "same_projective_class",
    "integrate_geodesic",
    "geodesic_trace_distance",
]


class PrimitiveNotFoundError(Exception):
    pass


class SingularityError(Exception):
    pass


@dataclass(frozen=True)
class GaugeChange:
    """One-form A generating a projective gauge transformation."""

    form: ScalarForm

    def __post_init__(self):
        if self.form.degree != 1:
            raise ValueError("gauge change must be a 1-form")

    @staticmethod
    def zero(chart: Chart) -> "GaugeChange":
        return GaugeChange(ScalarForm.zero(chart, 1))

    @staticmethod
    def from_components(chart: Chart, comps: Sequence[Expression]) -> "GaugeChange":
        return GaugeChange(ScalarForm.one_form(chart, list(comps)))

    @property
    def chart(self) -> Chart:
        return self.form.chart

    def component(self, a: int) -> Expression:
        return self.form.component(a)

    def components(self) -> list[Expression]:
        return self.form.one_form_components()

    def __add__(self, other: "GaugeChange") -> "GaugeChange":
        return GaugeChange(self.form + other.form)

    def __neg__(self) -> "GaugeChange":
        return GaugeChange(-self.form)

    @property
    def is_zero(self) -> bool:
        return self.form.is_zero


def gauge_transform(conn: Connection, gauge: GaugeChange) -> Connection:
    """Projectively equivalent connection with coefficients
    Gamma^a_{bc} + delta^a_c A_b + delta^a_b A_c."""
    chart = conn.chart
    A = gauge.components()

    def fn(a, b, c):
        total = conn.gamma(a, b, c)
        if a == c:
            total = total + A[b]
        if a == b:
            total = total + A[c]
        return total

    return Connection(chart, Tensor.build(chart, "udd", fn))


def schouten_skew_target(pkg: CurvaturePackage) -> ScalarForm:
    """The closed 2-form (twice the skew Schouten part) that a gauge 1-form
    must integrate to make the Schouten tensor symmetric."""
    chart = pkg.chart
    n = chart.dimension
    comps = {}
    for a in range(n):
        for b in range(a + 1, n):
            comps[(a, b)] = pkg.schouten[a, b] - pkg.schouten[b, a]
    return ScalarForm(chart, 2, comps)


def make_special(
    conn: Connection,
    base: Optional[Sequence] = None,
    pkg: Optional[CurvaturePackage] = None,
) -> tuple[Connection, GaugeChange]:
    """A representative of the class with symmetric Schouten tensor, plus the
    gauge 1-form that produces it.

    Raises PrimitiveNotFoundError when the symbolic primitive search fails;
    numeric continuation is then up to the caller.
    """
    chart = conn.chart
    if pkg is None:
        pkg = decompose(conn, cross_check=False)
    target = schouten_skew_target(pkg)
    if target.is_zero:
        return conn, GaugeChange.zero(chart)
    primitive = find_primitive(target, base)
    if primitive is None:
        raise PrimitiveNotFoundError(
            "no symbolic potential for the skew Schouten 2-form; numeric fallback required"
        )
    gauge = GaugeChange(primitive)
    special = gauge_transform(conn, gauge)
    special_pkg = decompose(special, cross_check=False)
    if not special_pkg.schouten.check_symmetric(0, 1):
        raise AssertionError("gauge transform failed to symmetrise the Schouten tensor")
    n = chart.dimension
    for c in range(n):
        for d in range(n):
            trace = chart.zero()
            for a in range(n):
                trace = trace + special_pkg.riemann[a, a, c, d]
            if not trace.is_zero:
                raise AssertionError("special representative has non-traceless curvature")
    return special, gauge


def is_projectively_flat(conn: Connection, pkg: Optional[CurvaturePackage] = None) -> bool:
    """Flatness test: Weyl tensor vanishes (dimension >= 3), Cotton tensor
    vanishes (dimension 2)."""
    if pkg is None:
        pkg = decompose(conn, cross_check=False)
    if conn.chart.dimension >= 3:
        return pkg.weyl.is_zero
    return pkg.cotton.is_zero


def same_projective_class(c1: Connection, c2: Connection) -> Optional[GaugeChange]:
    """The gauge 1-form taking c1 to c2 if the difference is pure trace."""
    if c1.chart != c2.chart:
        raise ValueError("connections live on different charts")
    chart = c1.chart
    n = chart.dimension
    diff = c2.coefficients - c1.coefficients
    scale = chart.constant(1) / (n + 1)
    A = []
    for b in range(n):
        trace = chart.zero()
        for e in range(n):
            trace = trace + diff[e, b, e]
        A.append(trace * scale)
    for a in range(n):
        for b in range(n):
            for c in range(n):
                expected = chart.zero()
                if a == c:
                    expected = expected + A[b]
                if a == b:
                    expected = expected + A[c]
                if not (diff[a, b, c] - expected).is_zero:
                    return None
    return GaugeChange.from_components(chart, A)


# ---------------------------------------------------------------------------
# Geodesics.
# ---------------------------------------------------------------------------


def integrate_geodesic(
    conn: Connection,
    x0: Sequence[float],
    v0: Sequence[float],
    arclen: float,
    impls: Optional[Mapping[str, Callable[[float, int], float]]] = None,
    num_samples: int = 65,
    rtol: float = 1e-11,
    atol: float = 1e-12,
) -> tuple[np.ndarray, np.ndarray]:
    """Trace of the unparametrized geodesic through (x0, v0).

    The curve is parametrized by Euclidean arclength: the velocity is kept at
    unit Euclidean norm by projecting the acceleration, which realises the
    reparametrization freedom of the geodesic equation.  Returns (arclength
    samples, positions with one row per sample).
    """
    chart = conn.chart
    n = chart.dimension
    gamma_exprs = [conn.gamma(a, b, c) for a in range(n) for b in range(n) for c in range(n)]
    compiled = compile_expressions(gamma_exprs, chart)

    def rhs(_s, y):
        x, v = y[:n], y[n:]
        nv = np.linalg.norm(v)
        if not np.isfinite(nv) or nv == 0.0:
            raise SingularityError("geodesic velocity degenerated")
        vh = v / nv
        vals = compiled(generator_values(chart, x, impls))
        gam = np.asarray(vals, dtype=float).reshape(n, n, n)
        pull = np.einsum("abc,b,c->a", gam, vh, vh)
        # project out the tangential part: keeps |v| = 1, i.e. arclength gauge
        acc = -pull + np.dot(vh, pull) * vh
        return np.concatenate([vh, acc])

    v0 = np.asarray(v0, dtype=float)
    nv0 = np.linalg.norm(v0)
    if nv0 == 0:
        raise ValueError("initial direction must be nonzero")
    y0 = np.concatenate([np.asarray(x0, dtype=float), v0 / nv0])
    s_eval = np.linspace(0.0, arclen, num_samples)
    try:
        sol = solve_ivp(
            rhs, (0.0, arclen), y0, method="DOP853", t_eval=s_eval, rtol=rtol, atol=atol
        )
    except (FloatingPointError, OverflowError) as exc:
        raise SingularityError(str(exc)) from exc
    if not sol.success:
        raise SingularityError(sol.message)
    return sol.t, sol.y[:n].T


def geodesic_trace_distance(
    conn_a: Connection,
    conn_b: Connection,
    x0: Sequence[float],
    v0: Sequence[float],
    arclen: float,
    impls: Optional[Mapping[str, Callable[[float, int], float]]] = None,
    num_samples: int = 65,
) -> float:
    """Maximum pointwise distance between the two unparametrized geodesic
    traces at matched arclengths."""
    _, xa = integrate_geodesic(conn_a, x0, v0, arclen, impls, num_samples)
    _, xb = integrate_geodesic(conn_b, x0, v0, arclen, impls, num_samples)
    return float(np.max(np.linalg.norm(xa - xb, axis=1)))
