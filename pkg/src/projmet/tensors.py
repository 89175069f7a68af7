"""Dense tensor algebra over exact expressions, torsion-free connections in a
holonomic coframe, and the projective curvature decomposition.

Index conventions (all indices 0-based internally):

* connection coefficients ``Gamma[a][b][c]`` are symmetric in (b, c);
* curvature ``R^a_{bcd} = d_c Gamma^a_{bd} - d_d Gamma^a_{bc}
  + Gamma^a_{ec} Gamma^e_{bd} - Gamma^a_{ed} Gamma^e_{bc}``;
* Ricci ``R_ab = R^c_{acb}``;
* Schouten ``P_ab = R_(ab)/(n-1) - R_[ab]/(n+1)``;
* Weyl from ``R^a_bcd = W^a_bcd + delta^a_c P_db - delta^a_d P_cb
  - 2 delta^a_b P_[cd]``;
* Cotton ``Y_bca = grad_b P_ca - grad_c P_ba`` (antisymmetric in b, c).

Symmetrisation brackets always carry the 1/k! weight.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence

from .expr import Chart, Expression, dot_sum

__all__ = [
    "Tensor",
    "Connection",
    "CurvaturePackage",
    "BianchiReport",
    "curvature",
    "decompose",
    "covariant_derivative",
    "symmetrize",
    "antisymmetrize",
    "check_bianchi",
]


class Tensor:
    """Dense tensor with one Expression per component.

    ``variance`` is a string of ``'u'``/``'d'`` slots.  Declared symmetries
    can be attached via :meth:`declare_symmetric` style constructors; the
    constructor verifies them component-wise.
    """

    __slots__ = ("chart", "variance", "comps")

    def __init__(self, chart: Chart, variance: str, comps: Sequence[Expression]):
        n = chart.dimension
        if len(comps) != n ** len(variance):
            raise ValueError("component count does not match rank")
        if any(v not in "ud" for v in variance):
            raise ValueError("variance must consist of 'u' and 'd'")
        self.chart = chart
        self.variance = variance
        self.comps = tuple(comps)

    # -- constructors --------------------------------------------------------

    @staticmethod
    def build(chart: Chart, variance: str, fn: Callable[..., Expression]) -> "Tensor":
        n = chart.dimension
        comps = [fn(*idx) for idx in itertools.product(range(n), repeat=len(variance))]
        return Tensor(chart, variance, comps)

    @staticmethod
    def zeros(chart: Chart, variance: str) -> "Tensor":
        zero = chart.zero()
        return Tensor(chart, variance, [zero] * chart.dimension ** len(variance))

    @staticmethod
    def delta(chart: Chart) -> "Tensor":
        one, zero = chart.one(), chart.zero()
        return Tensor.build(chart, "ud", lambda a, b: one if a == b else zero)

    # -- access ---------------------------------------------------------------

    @property
    def rank(self) -> int:
        return len(self.variance)

    def _offset(self, idx: Sequence[int]) -> int:
        n = self.chart.dimension
        off = 0
        for i in idx:
            off = off * n + i
        return off

    def __getitem__(self, idx) -> Expression:
        if isinstance(idx, int):
            idx = (idx,)
        return self.comps[self._offset(idx)]

    def indices(self) -> Iterable[tuple[int, ...]]:
        return itertools.product(range(self.chart.dimension), repeat=self.rank)

    # -- algebra ----------------------------------------------------------------

    def map(self, fn: Callable[[Expression], Expression]) -> "Tensor":
        return Tensor(self.chart, self.variance, [fn(c) for c in self.comps])

    def __add__(self, other: "Tensor") -> "Tensor":
        self._compatible(other)
        return Tensor(self.chart, self.variance, [a + b for a, b in zip(self.comps, other.comps)])

    def __sub__(self, other: "Tensor") -> "Tensor":
        self._compatible(other)
        return Tensor(self.chart, self.variance, [a - b for a, b in zip(self.comps, other.comps)])

    def __neg__(self) -> "Tensor":
        return self.map(lambda c: -c)

    def __mul__(self, scalar) -> "Tensor":
        return self.map(lambda c: c * scalar)

    __rmul__ = __mul__

    def _compatible(self, other: "Tensor") -> None:
        if self.chart != other.chart or self.variance != other.variance:
            raise ValueError("tensor mismatch")

    @property
    def is_zero(self) -> bool:
        return all(c.is_zero for c in self.comps)

    def max_residual(self) -> Optional[str]:
        """String form of some nonzero component, or None if all vanish."""
        for idx in self.indices():
            if not self[idx].is_zero:
                return f"component {tuple(i + 1 for i in idx)}: {self[idx]}"
        return None

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.chart == other.chart
            and self.variance == other.variance
            and all((a - b).is_zero for a, b in zip(self.comps, other.comps))
        )

    def __repr__(self):
        nz = sum(0 if c.is_zero else 1 for c in self.comps)
        return f"Tensor(variance={self.variance!r}, nonzero={nz}/{len(self.comps)})"

    def check_symmetric(self, slot_a: int, slot_b: int, anti: bool = False) -> bool:
        for idx in self.indices():
            if idx[slot_a] >= idx[slot_b]:
                continue
            swapped = list(idx)
            swapped[slot_a], swapped[slot_b] = swapped[slot_b], swapped[slot_a]
            other = self[tuple(swapped)]
            if anti:
                other = -other
            if not (self[idx] - other).is_zero:
                return False
        return True


def symmetrize(t: Tensor, slots: Sequence[int]) -> Tensor:
    return _sym_projector(t, slots, anti=False)


def antisymmetrize(t: Tensor, slots: Sequence[int]) -> Tensor:
    return _sym_projector(t, slots, anti=True)


def _sym_projector(t: Tensor, slots: Sequence[int], anti: bool) -> Tensor:
    slots = list(slots)
    if len(set(slots)) != len(slots):
        raise ValueError("slots must be distinct")
    variances = {t.variance[s] for s in slots}
    if len(variances) > 1:
        raise ValueError("cannot (anti)symmetrize over mixed variance")
    k = len(slots)
    weight = Fraction(1, _factorial(k))

    perms = list(itertools.permutations(range(k)))

    def fn(*idx):
        total = t.chart.zero()
        for perm in perms:
            jdx = list(idx)
            for pos, s in enumerate(slots):
                jdx[s] = idx[slots[perm[pos]]]
            term = t[tuple(jdx)]
            if anti and _parity(perm) < 0:
                term = -term
            total = total + term
        return total * weight

    return Tensor.build(t.chart, t.variance, fn)


def _factorial(k: int) -> int:
    out = 1
    for i in range(2, k + 1):
        out *= i
    return out


def _parity(perm: Sequence[int]) -> int:
    sign = 1
    seen = [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        length = 0
        j = i
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


# ---------------------------------------------------------------------------
# Connections.
# ---------------------------------------------------------------------------


class Connection:
    """Torsion-free connection coefficients over a chart.

    ``gamma(a, b, c)`` returns Gamma^a_{bc}; symmetry in the lower pair is
    verified on construction (holonomic coframe).
    """

    __slots__ = ("chart", "_gamma")

    def __init__(self, chart: Chart, gamma: Tensor):
        if gamma.variance != "udd":
            raise ValueError("connection coefficients must have variance 'udd'")
        if not gamma.check_symmetric(1, 2):
            raise ValueError("connection is not torsion-free (lower indices not symmetric)")
        self.chart = chart
        self._gamma = gamma

    @staticmethod
    def from_components(chart: Chart, entries: dict[tuple[int, int, int], Expression]) -> "Connection":
        """Build from a sparse {(a,b,c): expr} map, completing (b,c) symmetry."""
        zero = chart.zero()
        full: dict[tuple[int, int, int], Expression] = {}
        for (a, b, c), e in entries.items():
            for key in ((a, b, c), (a, c, b)):
                if key in full:
                    if not (full[key] - e).is_zero:
                        raise ValueError(f"conflicting entries for Gamma{key}")
                else:
                    full[key] = e
        comps = Tensor.build(chart, "udd", lambda a, b, c: full.get((a, b, c), zero))
        return Connection(chart, comps)

    @staticmethod
    def flat(chart: Chart) -> "Connection":
        return Connection(chart, Tensor.zeros(chart, "udd"))

    def gamma(self, a: int, b: int, c: int) -> Expression:
        return self._gamma[a, b, c]

    @property
    def coefficients(self) -> Tensor:
        return self._gamma

    def __eq__(self, other):
        if not isinstance(other, Connection):
            return NotImplemented
        return self.chart == other.chart and self._gamma == other._gamma

    def __repr__(self):
        return f"Connection(chart dim {self.chart.dimension})"


def curvature(conn: Connection) -> Tensor:
    """Curvature tensor R^a_{bcd} of a torsion-free connection."""
    chart = conn.chart
    n = chart.dimension
    g = conn.gamma

    dgamma = {}
    for a in range(n):
        for b in range(n):
            for d in range(n):
                e = g(a, b, d)
                if not e.is_zero:
                    for c in range(n):
                        dgamma[a, b, d, c] = e.differentiate(c)

    zero = chart.zero()
    one = chart.one()
    minus_one = chart.constant(-1)

    def fn(a, b, c, d):
        pairs = []
        t1 = dgamma.get((a, b, d, c))
        if t1 is not None and not t1.is_zero:
            pairs.append((one, t1))
        t2 = dgamma.get((a, b, c, d))
        if t2 is not None and not t2.is_zero:
            pairs.append((minus_one, t2))
        for e in range(n):
            g1, g2 = g(a, e, c), g(e, b, d)
            if not (g1.is_zero or g2.is_zero):
                pairs.append((g1, g2))
            g3, g4 = g(a, e, d), g(e, b, c)
            if not (g3.is_zero or g4.is_zero):
                pairs.append((minus_one, g3, g4))
        return dot_sum(pairs, chart)

    return Tensor.build(chart, "uddd", fn)


def covariant_derivative(t: Tensor, conn: Connection) -> Tensor:
    """Covariant derivative; the derivative slot is appended last."""
    chart = t.chart
    n = chart.dimension
    g = conn.gamma
    one = chart.one()
    minus_one = chart.constant(-1)

    def fn(*idx):
        *base, e = idx
        base = tuple(base)
        pairs = []
        d0 = t[base].differentiate(e)
        if not d0.is_zero:
            pairs.append((one, d0))
        for slot, var in enumerate(t.variance):
            for f in range(n):
                jdx = list(base)
                jdx[slot] = f
                comp = t[tuple(jdx)]
                if comp.is_zero:
                    continue
                if var == "u":
                    coeff = g(base[slot], f, e)
                    if not coeff.is_zero:
                        pairs.append((coeff, comp))
                else:
                    coeff = g(f, base[slot], e)
                    if not coeff.is_zero:
                        pairs.append((minus_one, coeff, comp))
        return dot_sum(pairs, chart)

    return Tensor.build(chart, t.variance + "d", fn)


# ---------------------------------------------------------------------------
# Projective curvature package.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurvaturePackage:
    connection: Connection
    riemann: Tensor  # R^a_bcd
    ricci: Tensor  # R_ab
    weyl: Tensor  # W^a_bcd
    schouten: Tensor  # P_ab
    cotton: Tensor  # Y_abc, antisymmetric in (a, b)

    @property
    def chart(self) -> Chart:
        return self.connection.chart


def decompose(conn: Connection, cross_check: bool = True) -> CurvaturePackage:
    """Split the curvature into Weyl, Schouten and Cotton pieces.

    With ``cross_check`` the Cotton tensor from the Schouten derivative is
    compared against the divergence of the Weyl tensor (dimension > 2), and
    the trace-freeness of the Weyl tensor plus the reconstruction of the
    curvature are verified exactly.
    """
    chart = conn.chart
    n = chart.dimension
    riemann = curvature(conn)

    ricci = Tensor.build(
        chart, "dd", lambda a, b: _sum(chart, (riemann[c, a, c, b] for c in range(n)))
    )

    sym_w = Fraction(1, 2 * (n - 1))
    skew_w = Fraction(1, 2 * (n + 1))

    def schouten_fn(a, b):
        return (ricci[a, b] + ricci[b, a]) * sym_w - (ricci[a, b] - ricci[b, a]) * skew_w

    schouten = Tensor.build(chart, "dd", schouten_fn)

    def weyl_fn(a, b, c, d):
        total = riemann[a, b, c, d]
        if a == c:
            total = total - schouten[d, b]
        if a == d:
            total = total + schouten[c, b]
        if a == b:
            total = total + (schouten[c, d] - schouten[d, c])
        return total

    weyl = Tensor.build(chart, "uddd", weyl_fn)

    grad_schouten = covariant_derivative(schouten, conn)  # (∇P)_{ca;b} -> slots (c,a,b)

    def cotton_fn(b, c, a):
        return grad_schouten[c, a, b] - grad_schouten[b, a, c]

    cotton = Tensor.build(chart, "ddd", cotton_fn)

    pkg = CurvaturePackage(conn, riemann, ricci, weyl, schouten, cotton)
    if cross_check:
        _verify_package(pkg)
    return pkg


def _sum(chart: Chart, items) -> Expression:
    total = chart.zero()
    for item in items:
        total = total + item
    return total


def _verify_package(pkg: CurvaturePackage) -> None:
    chart = pkg.chart
    n = chart.dimension
    weyl, schouten, riemann = pkg.weyl, pkg.schouten, pkg.riemann
    for b, c in itertools.product(range(n), repeat=2):
        if not _sum(chart, (weyl[a, a, b, c] for a in range(n))).is_zero:
            raise AssertionError("Weyl tensor has a nonzero first trace")
        if not _sum(chart, (weyl[a, b, a, c] for a in range(n))).is_zero:
            raise AssertionError("Weyl tensor has a nonzero second trace")
    for a, b, c, d in itertools.product(range(n), repeat=4):
        total = weyl[a, b, c, d]
        if a == c:
            total = total + schouten[d, b]
        if a == d:
            total = total - schouten[c, b]
        if a == b:
            total = total - (schouten[c, d] - schouten[d, c])
        if not (total - riemann[a, b, c, d]).is_zero:
            raise AssertionError("curvature decomposition identity failed")
    if n > 2:
        div = divergence_of_weyl(pkg)
        for a, b, c in itertools.product(range(n), repeat=3):
            if not (div[a, b, c] - (n - 2) * pkg.cotton[b, c, a]).is_zero:
                raise AssertionError("Cotton tensor disagrees with the Weyl divergence")


def divergence_of_weyl(pkg: CurvaturePackage) -> Tensor:
    """Contraction (∇_d W)^d_{abc} as a rank-3 tensor."""
    chart = pkg.chart
    n = chart.dimension
    grad_weyl = covariant_derivative(pkg.weyl, pkg.connection)
    return Tensor.build(
        chart, "ddd", lambda a, b, c: _sum(chart, (grad_weyl[d, a, b, c, d] for d in range(n)))
    )


@dataclass(frozen=True)
class BianchiReport:
    """Residual tensors of the curvature identities; all vanish for any
    torsion-free connection."""

    first: Tensor  # W^a_[bcd]
    divergence: Tensor  # grad_d W^d_abc - (n-2) Y_bca
    cotton_cycle: Tensor  # Y_[abc]
    schouten_cycle: Tensor  # grad_[a P_bc]
    cubic: Tensor  # cyclic grad Y minus Schouten-Weyl coupling

    @property
    def all_zero(self) -> bool:
        return (
            self.first.is_zero
            and self.divergence.is_zero
            and self.cotton_cycle.is_zero
            and self.schouten_cycle.is_zero
            and self.cubic.is_zero
        )

    def residuals(self) -> dict[str, Optional[str]]:
        return {
            "weyl_cycle": self.first.max_residual(),
            "weyl_divergence": self.divergence.max_residual(),
            "cotton_cycle": self.cotton_cycle.max_residual(),
            "schouten_cycle": self.schouten_cycle.max_residual(),
            "cotton_derivative": self.cubic.max_residual(),
        }


def check_bianchi(pkg: CurvaturePackage) -> BianchiReport:
    chart = pkg.chart
    n = chart.dimension
    first = antisymmetrize(pkg.weyl, (1, 2, 3))

    div = divergence_of_weyl(pkg)
    divergence = Tensor.build(
        chart, "ddd", lambda a, b, c: div[a, b, c] - (n - 2) * pkg.cotton[b, c, a]
    )

    cotton_cycle = antisymmetrize(pkg.cotton, (0, 1, 2))

    grad_schouten = covariant_derivative(pkg.schouten, pkg.connection)
    schouten_cycle = antisymmetrize(
        Tensor.build(chart, "ddd", lambda a, b, c: grad_schouten[b, c, a]), (0, 1, 2)
    )

    grad_cotton = covariant_derivative(pkg.cotton, pkg.connection)
    one = chart.one()
    minus_one = chart.constant(-1)

    def cubic_fn(a, b, c, d):
        pairs = [
            (one, grad_cotton[b, c, d, a]),
            (one, grad_cotton[a, b, d, c]),
            (one, grad_cotton[c, a, d, b]),
        ]
        for e in range(n):
            pairs.append((minus_one, pkg.schouten[a, e], pkg.weyl[e, d, c, b]))
            pairs.append((minus_one, pkg.schouten[b, e], pkg.weyl[e, d, a, c]))
            pairs.append((minus_one, pkg.schouten[c, e], pkg.weyl[e, d, b, a]))
        return dot_sum(pairs, chart)

    cubic = Tensor.build(chart, "dddd", cubic_fn)
    return BianchiReport(first, divergence, cotton_cycle, schouten_cycle, cubic)
