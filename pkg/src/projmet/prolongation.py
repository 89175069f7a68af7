"""Closed first-order system whose parallel sections encode metrics in the
projective class, together with reduction and integration machinery.

The flattened state is (g^{(ij)} for i <= j, mu^a, rho).  For a special
connection the system reads, in covariant form,

    D g^{bc} = mu^c theta^b + mu^b theta^c
    D mu^b   = rho theta^b - omega_c g^{bc} - (1/n) W^b_{cda} g^{cd} theta^a
    D rho    = -2 omega_b mu^b + (2/n) Y_{abc} g^{bc} theta^a

and is stored here as coordinate matrices M_a with d_a(state) + M_a state = 0.
An ansatz subspace (state = basis columns times unknown functions) is reduced
Frobenius-style: gradient equations are solved for the unknown functions,
algebraic constraint rows cut the subspace down, and integrability rows are
re-checked until the space is stable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .expr import Chart, Expression, compile_expressions, generator_values
from .forms import ScalarForm, find_primitive, match_log_derivative
from .linalg import kernel_symbolic, nonconstant_factors, solve_with_rhs
from .obstructions import symmetric_pairs
from .tensors import CurvaturePackage, Tensor

__all__ = [
    "NotSpecialError",
    "StateSpace",
    "ProlongationConnection",
    "prolongation_connection",
    "integrate_prolongation",
    "ReducedSystem",
    "reduce_parallel_ansatz",
    "integrate_reduced_symbolic",
    "axis_polyline",
]


class NotSpecialError(Exception):
    pass


@dataclass(frozen=True)
class StateSpace:
    """Index bookkeeping for the flattened (g, mu, rho) state."""

    chart: Chart

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return symmetric_pairs(self.chart.dimension)

    @property
    def n_g(self) -> int:
        n = self.chart.dimension
        return n * (n + 1) // 2

    @property
    def size(self) -> int:
        return self.n_g + self.chart.dimension + 1

    def g_index(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        return self.pairs.index((i, j))

    def mu_index(self, b: int) -> int:
        return self.n_g + b

    @property
    def rho_index(self) -> int:
        return self.n_g + self.chart.dimension

    def g_tensor(self, state: Sequence[Expression]) -> Tensor:
        return Tensor.build(
            self.chart, "uu", lambda a, b: state[self.g_index(a, b)]
        )

    def mu_components(self, state: Sequence[Expression]) -> list[Expression]:
        return [state[self.mu_index(b)] for b in range(self.chart.dimension)]


class ProlongationConnection:
    """Coordinate matrices of the parallel-transport system."""

    def __init__(self, pkg: CurvaturePackage, matrices: list[list[list[Expression]]]):
        self.pkg = pkg
        self.space = StateSpace(pkg.chart)
        self._matrices = matrices

    @property
    def chart(self) -> Chart:
        return self.pkg.chart

    def coefficient_matrix(self, a: int) -> list[list[Expression]]:
        """M_a with d_a(state) + M_a state = 0 (connection terms included)."""
        return self._matrices[a]

    def covariant_coupling(self, a: int) -> list[list[Expression]]:
        """The coupling block with the connection action removed, i.e. the
        matrix Phi_a of D(state) + Phi_a state = 0."""
        chart = self.chart
        n = chart.dimension
        space = self.space
        g = self.pkg.connection.gamma
        rows = [row[:] for row in self._matrices[a]]
        for (b, c) in space.pairs:
            r = space.g_index(b, c)
            for e in range(n):
                rows[r][space.g_index(e, c)] = rows[r][space.g_index(e, c)] - g(b, e, a)
                rows[r][space.g_index(b, e)] = rows[r][space.g_index(b, e)] - g(c, e, a)
        for b in range(n):
            r = space.mu_index(b)
            for e in range(n):
                rows[r][space.mu_index(e)] = rows[r][space.mu_index(e)] - g(b, e, a)
        return rows

    def curvature_matrix(self, a: int, b: int) -> list[list[Expression]]:
        """K_ab = d_a M_b - d_b M_a + M_a M_b - M_b M_a; K_ab state = 0 on
        parallel states."""
        Ma, Mb = self._matrices[a], self._matrices[b]
        size = self.space.size
        chart = self.chart
        out = []
        for i in range(size):
            row = []
            for j in range(size):
                total = Mb[i][j].differentiate(a) - Ma[i][j].differentiate(b)
                for k in range(size):
                    if not (Ma[i][k].is_zero or Mb[k][j].is_zero):
                        total = total + Ma[i][k] * Mb[k][j]
                    if not (Mb[i][k].is_zero or Ma[k][j].is_zero):
                        total = total - Mb[i][k] * Ma[k][j]
                row.append(total)
            out.append(row)
        return out


def prolongation_connection(pkg: CurvaturePackage) -> ProlongationConnection:
    """Build the transport system; requires a special connection (symmetric
    Schouten tensor)."""
    chart = pkg.chart
    n = chart.dimension
    if not pkg.schouten.check_symmetric(0, 1):
        raise NotSpecialError("prolongation requires a special (symmetric Schouten) connection")
    space = StateSpace(chart)
    size = space.size
    zero = chart.zero()
    g = pkg.connection.gamma
    P, W, Y = pkg.schouten, pkg.weyl, pkg.cotton
    inv_n = Fraction(1, n)
    two_inv_n = Fraction(2, n)

    matrices = []
    for a in range(n):
        M = [[zero] * size for _ in range(size)]
        for (b, c) in space.pairs:
            r = space.g_index(b, c)
            for e in range(n):
                ge1 = g(b, e, a)
                if not ge1.is_zero:
                    col = space.g_index(e, c)
                    M[r][col] = M[r][col] + ge1
                ge2 = g(c, e, a)
                if not ge2.is_zero:
                    col = space.g_index(b, e)
                    M[r][col] = M[r][col] + ge2
            # -mu^c delta^b_a - mu^b delta^c_a
            if b == a:
                col = space.mu_index(c)
                M[r][col] = M[r][col] - 1 * chart.one()
            if c == a:
                col = space.mu_index(b)
                M[r][col] = M[r][col] - 1 * chart.one()
        for b in range(n):
            r = space.mu_index(b)
            for e in range(n):
                ge = g(b, e, a)
                if not ge.is_zero:
                    M[r][space.mu_index(e)] = M[r][space.mu_index(e)] + ge
            if b == a:
                M[r][space.rho_index] = M[r][space.rho_index] - chart.one()
            for e in range(n):
                pe = P[a, e]
                if not pe.is_zero:
                    col = space.g_index(b, e)
                    M[r][col] = M[r][col] + pe
            for c in range(n):
                for d in range(n):
                    w = W[b, c, d, a]
                    if not w.is_zero:
                        col = space.g_index(c, d)
                        M[r][col] = M[r][col] + w * inv_n
        r = space.rho_index
        for b in range(n):
            pb = P[a, b]
            if not pb.is_zero:
                M[r][space.mu_index(b)] = M[r][space.mu_index(b)] + 2 * pb
        for b in range(n):
            for c in range(n):
                y = Y[a, b, c]
                if not y.is_zero:
                    col = space.g_index(b, c)
                    M[r][col] = M[r][col] - y * two_inv_n
        matrices.append(M)
    return ProlongationConnection(pkg, matrices)


def axis_polyline(start: Sequence[float], end: Sequence[float]) -> list[np.ndarray]:
    """Waypoints of the coordinate-axis-parallel polyline from start to end."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    points = [start.copy()]
    current = start.copy()
    for i in range(len(start)):
        if current[i] != end[i]:
            current = current.copy()
            current[i] = end[i]
            points.append(current)
    if len(points) == 1:
        points.append(end.copy())
    return points


def integrate_prolongation(
    prol: ProlongationConnection,
    x0: Sequence[float],
    s0: Sequence[float],
    path: Sequence[Sequence[float]],
    impls: Optional[Mapping[str, Callable[[float, int], float]]] = None,
    rtol: float = 1e-11,
    atol: float = 1e-13,
) -> np.ndarray:
    """Transport a state along a polyline (x0 followed by the given
    waypoints) by integrating the linear system with adaptive RK."""
    chart = prol.chart
    size = prol.space.size
    entries = [prol.coefficient_matrix(a)[i][j] for a in range(chart.dimension)
               for i in range(size) for j in range(size)]
    compiled = compile_expressions(entries, chart)
    state = np.asarray(s0, dtype=float)
    current = np.asarray(x0, dtype=float)
    waypoints = [np.asarray(p, dtype=float) for p in path]
    n = chart.dimension
    for target in waypoints:
        delta = target - current
        if not np.any(delta):
            continue

        def rhs(t, s, p0=current.copy(), d=delta.copy()):
            x = p0 + t * d
            vals = np.asarray(compiled(generator_values(chart, x, impls)), dtype=float)
            M = vals.reshape(n, size, size)
            Mdir = np.tensordot(d, M, axes=(0, 0))
            return -Mdir @ s

        sol = solve_ivp(rhs, (0.0, 1.0), state, method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(f"prolongation transport failed: {sol.message}")
        state = sol.y[:, -1]
        current = target
    return state


# ---------------------------------------------------------------------------
# Frobenius-style reduction of an ansatz subspace.
# ---------------------------------------------------------------------------


@dataclass
class ReducedSystem:
    """Stable reduced system: state = sum_k basis[k] * u_k(x) with
    du_k = sum_j gradients[a][k][j] u_j along each coordinate."""

    chart: Chart
    space: StateSpace
    basis: list[list[Expression]]  # columns: state vectors
    gradients: list[list[list[Expression]]]  # per coordinate, p x p
    genericity_factors: list[tuple[str, Expression]] = field(default_factory=list)

    @property
    def dimension(self) -> int:
        return len(self.basis)

    def state_columns_g(self) -> list[list[list[Expression]]]:
        """Per basis column, the g-part as an n x n nested list."""
        n = self.chart.dimension
        out = []
        for col in self.basis:
            g = self.space.g_tensor(col)
            out.append([[g[i, j] for j in range(n)] for i in range(n)])
        return out


def reduce_parallel_ansatz(
    prol: ProlongationConnection,
    columns: Sequence[Sequence[Expression]],
    max_rounds: int = 12,
) -> ReducedSystem:
    """Cut an ansatz subspace down to the largest subspace on which the
    transport system restricts to a consistent gradient system.

    The result may have dimension zero (only the zero section survives);
    genericity factors collected along the way are always preserved.
    """
    chart = prol.chart
    n = chart.dimension
    space = prol.space
    size = space.size
    cols = [list(c) for c in columns]
    factors: list[tuple[str, Expression]] = []

    for _round in range(max_rounds):
        p = len(cols)
        if p == 0:
            return ReducedSystem(chart, space, [], [], factors)
        b_rows = [[cols[k][i] for k in range(p)] for i in range(size)]
        gradients = []
        constraint_rows: list[list[Expression]] = []
        for a in range(n):
            c_rows = []
            for i in range(size):
                row = []
                for k in range(p):
                    d = cols[k][i].differentiate(a)
                    for j in range(size):
                        m = prol.coefficient_matrix(a)[i][j]
                        if not (m.is_zero or cols[k][j].is_zero):
                            d = d + m * cols[k][j]
                    row.append(d)
                c_rows.append(row)
            solution, constraints, pivot_factors = solve_with_rhs(b_rows, c_rows, chart)
            for f in pivot_factors:
                _add_factor(factors, "prolongation", f)
            if solution is None:
                # basis columns dependent over the field: drop to an
                # independent subset and retry
                cols = _independent_columns(cols, chart)
                break
            gradients.append([[-e for e in row] for row in solution])
            constraint_rows.extend(constraints)
        else:
            # integrability of the gradient system
            for a in range(n):
                for b in range(a + 1, n):
                    Ga, Gb = gradients[a], gradients[b]
                    for i in range(p):
                        row = []
                        for j in range(p):
                            total = Gb[i][j].differentiate(a) - Ga[i][j].differentiate(b)
                            for k in range(p):
                                total = total + Gb[i][k] * Ga[k][j] - Ga[i][k] * Gb[k][j]
                            row.append(total)
                        if any(not e.is_zero for e in row):
                            constraint_rows.append(row)
            if not constraint_rows:
                return ReducedSystem(chart, space, cols, gradients, factors)
            kr = kernel_symbolic(
                [("prolongation", row) for row in constraint_rows], p, chart
            )
            for tag, f in kr.genericity_factors:
                _add_factor(factors, tag, f)
            for row in constraint_rows:
                for entry in row:
                    if not entry.is_zero and not entry.is_constant:
                        for f in nonconstant_factors(entry):
                            _add_factor(factors, "prolongation", f)
            if kr.dimension == 0:
                return ReducedSystem(chart, space, [], [], factors)
            new_cols = []
            for vec in kr.basis:
                col = []
                for i in range(size):
                    total = chart.zero()
                    for k in range(p):
                        if not (vec[k].is_zero or cols[k][i].is_zero):
                            total = total + vec[k] * cols[k][i]
                    col.append(total)
                new_cols.append(col)
            cols = new_cols
    raise RuntimeError("ansatz reduction did not stabilise")


def _add_factor(factors: list[tuple[str, Expression]], tag: str, f: Expression) -> None:
    for _, existing in factors:
        if (existing - f).is_zero:
            return
    factors.append((tag, f))


def _independent_columns(cols: list[list[Expression]], chart: Chart) -> list[list[Expression]]:
    kept: list[list[Expression]] = []
    rows_kept: list[list[Expression]] = []
    for col in cols:
        trial = kept + [col]
        p = len(trial)
        rows = [[trial[k][i] for k in range(p)] for i in range(len(col))]
        kr = kernel_symbolic([("dep", r) for r in rows], p, chart)
        if kr.dimension == 0:
            kept = trial
    return kept


# ---------------------------------------------------------------------------
# Symbolic integration of a reduced gradient system.
# ---------------------------------------------------------------------------


def integrate_reduced_symbolic(red: ReducedSystem) -> Optional[list[list[Expression]]]:
    """Fundamental parallel sections of the reduced system, as exact state
    vectors, or None when the solution leaves the rational class.

    Works when the variable dependency graph is acyclic: each variable then
    satisfies a scalar equation du = gamma u + known, solvable by an exact
    integrating factor (a product of polynomial powers) and an exact
    primitive."""
    chart = red.chart
    n = chart.dimension
    p = red.dimension
    G = red.gradients

    depends = {i: set() for i in range(p)}
    for a in range(n):
        for i in range(p):
            for j in range(p):
                if i != j and not G[a][i][j].is_zero:
                    depends[i].add(j)
    order = _topological_order(depends)
    if order is None:
        return None

    # fund[i][k]: coefficient of the k-th constant in u_i
    fund: list[dict[int, Expression]] = [dict() for _ in range(p)]
    for i in order:
        gamma = ScalarForm.one_form(chart, [G[a][i][i] for a in range(n)])
        efactor = chart.one()
        if not gamma.is_zero:
            match = match_log_derivative(gamma)
            if match is None:
                return None
            for c, q in match:
                if c.denominator != 1:
                    return None
                efactor = efactor * q ** int(c)
        # inhomogeneous parts from already solved variables
        known_consts = sorted({k for j in depends[i] for k in fund[j]})
        for k in known_consts:
            comps = []
            for a in range(n):
                total = chart.zero()
                for j in depends[i]:
                    coeff = G[a][i][j]
                    term = fund[j].get(k)
                    if term is not None and not coeff.is_zero:
                        total = total + coeff * term
                comps.append(total / efactor)
            rhs_form = ScalarForm.one_form(chart, comps)
            if rhs_form.is_zero:
                continue
            try:
                prim = find_primitive(rhs_form)
            except Exception:
                return None
            if prim is None:
                return None
            fund[i][k] = efactor * prim.component()
        fund[i][i] = efactor  # the variable's own constant

    solutions = []
    for k in range(p):
        col = []
        for s in range(red.space.size):
            total = chart.zero()
            for i in range(p):
                coeff = fund[i].get(k)
                if coeff is not None and not red.basis[i][s].is_zero:
                    total = total + coeff * red.basis[i][s]
            col.append(total)
        solutions.append(col)
    return solutions


def _topological_order(depends: Mapping[int, set]) -> Optional[list[int]]:
    order: list[int] = []
    state: dict[int, int] = {}

    def visit(i: int) -> bool:
        if state.get(i) == 2:
            return True
        if state.get(i) == 1:
            return False
        state[i] = 1
        for j in depends[i]:
            if not visit(j):
                return False
        state[i] = 2
        order.append(i)
        return True

    for i in depends:
        if not visit(i):
            return None
    return order
