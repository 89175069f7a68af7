"""Decision procedure for metrisability of a projective structure, with
metric reconstruction and verification.

The run walks the obstruction chain: endomorphism determinants, special
representative, stacked linear system, symmetry condition on the candidate
inverse metric, reduction of the transport system on the surviving ansatz,
integration, reconstruction, and a final projective-equivalence check of the
Levi-Civita connection of the reconstructed metric.  Each stage leaves a
record; eliminations over the rational-function field report the nonconstant
pivot factors as genericity conditions (the structure constraints under
which a different branch would open).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .expr import Chart, Expression, FunctionSymbol, compile_expressions, generator_values, parse_expression
from .forms import ScalarForm, match_log_derivative
from .linalg import determinant, kernel_symbolic
from .metric import Metric, SingularMetricError, inverse_symmetric, levi_civita
from .obstructions import (
    LinearSystem,
    assemble_linear_system,
    endomorphism_determinants,
    obstruction_t,
    obstruction_tensors,
    symmetric_pairs,
    weyl_symmetry_residual,
)
from .projective import (
    GaugeChange,
    PrimitiveNotFoundError,
    gauge_transform,
    make_special,
    same_projective_class,
)
from .prolongation import (
    ProlongationConnection,
    ReducedSystem,
    StateSpace,
    axis_polyline,
    integrate_prolongation,
    integrate_reduced_symbolic,
    prolongation_connection,
    reduce_parallel_ansatz,
)
from .tensors import Connection, CurvaturePackage, Tensor, decompose

__all__ = [
    "ChecklistOptions",
    "StepRecord",
    "MetricCandidate",
    "MetrisabilityReport",
    "DegenerateGError",
    "ANotClosedError",
    "run_checklist",
    "reconstruct_metric",
]


class DegenerateGError(Exception):
    pass


class ANotClosedError(Exception):
    pass


@dataclass
class ChecklistOptions:
    backend: str = "auto"  # symbolic | numeric | auto
    base_point: Optional[Sequence[float]] = None
    seed: int = 0
    sample_points: int = 5
    rank_tol: float = 1e-9
    integration_tol: float = 1e-10
    residual_tol: float = 1e-6
    impls: Optional[Mapping[str, Callable[[float, int], float]]] = None


@dataclass
class StepRecord:
    step: int
    name: str
    status: str  # passed | failed | inconclusive | skipped
    details: dict = dc_field(default_factory=dict)


@dataclass
class MetricCandidate:
    """Reconstructed metric data; exact fields are populated when the state
    stays in the rational class, numeric sampling hooks otherwise."""

    chart: Chart
    g_upper: Tensor
    mu: list[Expression]
    rho: Expression
    g_lower: Tensor
    gauge_form: ScalarForm  # A = -g_ab mu^b theta^a, exact
    conformal_factor: Optional[Expression]  # e^{2 phi} when recognised
    metric: Optional[Metric]  # ghat = e^{2 phi} g_ab
    residuals: dict = dc_field(default_factory=dict)


@dataclass
class NumericCandidate:
    """Sampled candidate built by numeric transport of the reduced system."""

    base_point: list[float]
    constants: list[float]
    state_at: Callable[[Sequence[float]], np.ndarray]
    phi_at: Callable[[Sequence[float]], float]
    ghat_at: Callable[[Sequence[float]], np.ndarray]
    residuals: dict = dc_field(default_factory=dict)


@dataclass
class MetrisabilityReport:
    verdict: str  # Metrisable | NotMetrisable | Inconclusive
    failing_stage: Optional[str] = None
    witness: Optional[str] = None
    reason: Optional[str] = None
    steps: list[StepRecord] = dc_field(default_factory=list)
    branch_conditions: list[tuple[str, str]] = dc_field(default_factory=list)
    candidate: Optional[MetricCandidate] = None
    numeric_candidate: Optional[NumericCandidate] = None
    solution_dimension: Optional[int] = None
    mode: str = "symbolic"

    def step(self, name: str) -> Optional[StepRecord]:
        return next((s for s in self.steps if s.name == name), None)


# ---------------------------------------------------------------------------
# Parameter lifting: treat ansatz multipliers as fresh constant symbols.
# ---------------------------------------------------------------------------


def _extend_with_parameters(chart: Chart, count: int):
    extra = tuple(
        FunctionSymbol(f"par{k+1}_", chart.coordinate_names[0], "0") for k in range(count)
    )
    big = Chart(chart.dimension, chart.coordinate_names, chart.function_symbols + extra)

    def lift(e: Expression) -> Expression:
        return parse_expression(e.to_string(), big)

    params = [big.function(f"par{k+1}_") for k in range(count)]
    return big, lift, params


def _parametric_g_is_degenerate(columns_g: list[list[list[Expression]]], chart: Chart) -> bool:
    """True when det of the parametrised symmetric tensor vanishes for every
    choice of the multipliers."""
    if not columns_g:
        return True
    big, lift, params = _extend_with_parameters(chart, len(columns_g))
    n = chart.dimension
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            total = big.zero()
            for k, col in enumerate(columns_g):
                e = col[i][j]
                if not e.is_zero:
                    total = total + params[k] * lift(e)
            row.append(total)
        rows.append(row)
    return determinant(rows, big).is_zero


def _select_constants(
    columns_g: list[list[list[Expression]]], chart: Chart, seed: int
) -> Optional[list[Fraction]]:
    """Deterministic small-integer multipliers giving a nondegenerate g."""
    p = len(columns_g)
    n = chart.dimension

    def det_of(coeffs: Sequence[Fraction]) -> Expression:
        rows = []
        for i in range(n):
            row = []
            for j in range(n):
                total = chart.zero()
                for k in range(p):
                    if coeffs[k]:
                        e = columns_g[k][i][j]
                        if not e.is_zero:
                            total = total + e * coeffs[k]
                row.append(total)
            rows.append(row)
        return determinant(rows, chart)

    candidates: list[list[Fraction]] = []
    budget = 2000
    for size in range(1, min(p, n + 1) + 1):
        for subset in itertools.combinations(range(p), size):
            vec = [Fraction(0)] * p
            for k in subset:
                vec[k] = Fraction(1)
            candidates.append(vec)
            if len(candidates) >= budget:
                break
        if len(candidates) >= budget:
            break
    candidates.append([Fraction(1)] * p)
    rng = np.random.default_rng(seed)
    for _ in range(40):
        candidates.append([Fraction(int(x)) for x in rng.integers(-3, 4, size=p)])
    for coeffs in candidates:
        if all(c == 0 for c in coeffs):
            continue
        if not det_of(coeffs).is_zero:
            return list(coeffs)
    return None


# ---------------------------------------------------------------------------
# Reconstruction.
# ---------------------------------------------------------------------------


def reconstruct_metric(
    chart: Chart,
    state: Sequence[Expression],
    special_conn: Connection,
    input_conn: Optional[Connection] = None,
    special_gauge: Optional[GaugeChange] = None,
) -> MetricCandidate:
    """Build and verify the metric carried by an exact parallel state.

    Raises DegenerateGError when det g vanishes identically and
    ANotClosedError when the reconstructed gauge form fails to be closed
    (which signals an inconsistent state)."""
    space = StateSpace(chart)
    n = chart.dimension
    g_upper = space.g_tensor(state)
    mu = space.mu_components(state)
    rho = state[space.rho_index]
    rows = [[g_upper[i, j] for j in range(n)] for i in range(n)]
    if determinant(rows, chart).is_zero:
        raise DegenerateGError("candidate inverse metric is degenerate")
    g_lower = inverse_symmetric(g_upper)

    gauge_comps = []
    for a in range(n):
        total = chart.zero()
        for b in range(n):
            if not (g_lower[a, b].is_zero or mu[b].is_zero):
                total = total + g_lower[a, b] * mu[b]
        gauge_comps.append(-total)
    gauge_form = ScalarForm.one_form(chart, gauge_comps)
    if not gauge_form.is_closed():
        raise ANotClosedError("reconstructed gauge form is not closed")

    conformal: Optional[Expression] = None
    if gauge_form.is_zero:
        conformal = chart.one()
    else:
        match = match_log_derivative(gauge_form)
        if match is not None and all((2 * c).denominator == 1 for c, _ in match):
            conformal = chart.one()
            for c, q in match:
                conformal = conformal * q ** int(2 * c)

    metric = None
    residuals: dict = {}
    if conformal is not None:
        ghat = Tensor.build(chart, "dd", lambda a, b: conformal * g_lower[a, b])
        metric = Metric(chart, ghat)
        lc = levi_civita(metric, verify=True)
        expected = gauge_transform(special_conn, GaugeChange(gauge_form))
        residuals["levi_civita_gauge_exact"] = lc == expected
        if input_conn is not None:
            rec = same_projective_class(input_conn, lc)
            residuals["projectively_equivalent_to_input"] = rec is not None
        residuals["metric_compatibility_exact"] = True  # verified by levi_civita
    return MetricCandidate(
        chart, g_upper, mu, rho, g_lower, gauge_form, conformal, metric, residuals
    )


# ---------------------------------------------------------------------------
# The decision procedure.
# ---------------------------------------------------------------------------


def run_checklist(conn: Connection, options: Optional[ChecklistOptions] = None) -> MetrisabilityReport:
    options = options or ChecklistOptions()
    chart = conn.chart
    n = chart.dimension
    if n < 3:
        raise ValueError("the decision procedure requires dimension >= 3")
    report = MetrisabilityReport(verdict="Inconclusive")
    steps = report.steps

    # Step 1: endomorphism determinants of the Weyl obstruction.
    pkg = decompose(conn, cross_check=False)
    tens = obstruction_t(pkg)
    dets = endomorphism_determinants(tens)
    nonzero = [(pair, tau) for pair, tau in dets if not tau.is_zero]
    steps.append(
        StepRecord(
            1,
            "obstruction_determinants",
            "failed" if nonzero else "passed",
            {
                "determinants": {
                    f"tau_{e+1}{d+1}": str(tau) for (e, d), tau in dets
                }
            },
        )
    )
    if nonzero:
        (e, d), tau = nonzero[0]
        report.verdict = "NotMetrisable"
        report.failing_stage = "obstruction_determinants"
        report.witness = f"tau_{e+1}{d+1} = {tau}"
        return report

    # Step 2: special representative.
    try:
        special, special_gauge = make_special(conn, options.base_point, pkg)
        steps.append(
            StepRecord(
                2,
                "special_connection",
                "passed",
                {"gauge": [str(c) for c in special_gauge.components()]},
            )
        )
    except PrimitiveNotFoundError as exc:
        steps.append(StepRecord(2, "special_connection", "inconclusive", {"error": str(exc)}))
        report.verdict = "Inconclusive"
        report.reason = f"special representative outside the symbolic class: {exc}"
        report.failing_stage = "special_connection"
        return report

    spkg = decompose(special, cross_check=False)

    # Step 3: obstruction tensors and the stacked linear system.
    obs = obstruction_tensors(spkg)
    system = assemble_linear_system(obs, spkg)
    steps.append(StepRecord(3, "obstruction_tensors", "passed", {}))

    # Steps 4-5: kernel of the stacked system, block by block.
    space = StateSpace(chart)
    pairs = symmetric_pairs(n)
    stage_tags = [("equi",), ("equi", "ic1"), ("equi", "ic1", "i2")]
    stage_names = ["equi", "ic1", "i2"]
    kernel = None
    for tags, name in zip(stage_tags, stage_names):
        kernel = system.kernel_through(tags)
        for tag, fac in kernel.genericity_factors:
            _record_branch(report, tag, fac)
        columns_g = _kernel_g_columns(kernel, chart, pairs)
        if _parametric_g_is_degenerate(columns_g, chart):
            steps.append(
                StepRecord(
                    4,
                    "linear_system",
                    "failed",
                    {"block": name, "kernel_dimension": kernel.dimension},
                )
            )
            report.verdict = "NotMetrisable"
            report.failing_stage = f"linear_system[{name}]"
            report.witness = (
                f"after the {name} block every solution has degenerate g "
                f"(kernel dimension {kernel.dimension})"
            )
            return report
    steps.append(
        StepRecord(4, "linear_system", "passed", {"kernel_dimension": kernel.dimension})
    )

    # Steps 6-7: symmetry condition on the candidate inverse metric.
    if spkg.weyl.is_zero:
        steps.append(StepRecord(6, "weyl_symmetry", "skipped", {"reason": "Weyl tensor vanishes"}))
    else:
        sym_ok = _weyl_symmetry_on_kernel(kernel, spkg, chart, pairs)
        steps.append(
            StepRecord(
                6,
                "weyl_symmetry",
                "passed" if sym_ok else "inconclusive",
                {}
                if sym_ok
                else {"note": "residual nonzero on the kernel; deferred to verification"},
            )
        )

    # Steps 8-9: reduce the transport system on the ansatz.
    prol = prolongation_connection(spkg)
    columns = []
    zero = chart.zero()
    for vec in kernel.basis:
        columns.append(list(vec) + [zero])
    rho_col = [zero] * space.size
    rho_col[space.rho_index] = chart.one()
    columns.append(rho_col)
    reduced = reduce_parallel_ansatz(prol, columns)
    for tag, fac in reduced.genericity_factors:
        _record_branch(report, tag, fac)
    if reduced.dimension == 0 or _parametric_g_is_degenerate(
        reduced.state_columns_g(), chart
    ):
        steps.append(
            StepRecord(
                8,
                "prolongation",
                "failed",
                {"surviving_dimension": reduced.dimension},
            )
        )
        report.verdict = "NotMetrisable"
        report.failing_stage = "prolongation"
        report.witness = (
            "the transport system forces a degenerate candidate on the algebraic ansatz"
        )
        return report
    report.solution_dimension = reduced.dimension
    steps.append(
        StepRecord(8, "prolongation", "passed", {"solution_dimension": reduced.dimension})
    )

    # Integration: exact when possible, numeric transport otherwise.
    solutions = integrate_reduced_symbolic(reduced)
    if solutions is not None:
        candidate = _build_exact_candidate(
            report, chart, solutions, special, special_gauge, conn, options
        )
        if candidate is not None:
            report.mode = "symbolic"
            return report
    return _numeric_path(report, chart, reduced, special, special_gauge, conn, options)


def _record_branch(report: MetrisabilityReport, tag: str, fac: Expression) -> None:
    text = str(fac)
    if (tag, text) not in report.branch_conditions:
        report.branch_conditions.append((tag, text))


def _kernel_g_columns(kernel, chart: Chart, pairs) -> list[list[list[Expression]]]:
    n = chart.dimension
    cols = []
    for vec in kernel.basis:
        g = [[chart.zero()] * n for _ in range(n)]
        for idx, (i, j) in enumerate(pairs):
            g[i][j] = vec[idx]
            g[j][i] = vec[idx]
        cols.append(g)
    return cols


def _weyl_symmetry_on_kernel(kernel, spkg: CurvaturePackage, chart: Chart, pairs) -> bool:
    """Whether the adjugate form of the symmetry condition vanishes
    identically on the parametrised kernel."""
    columns_g = _kernel_g_columns(kernel, chart, pairs)
    if not columns_g:
        return True
    big, lift, params = _extend_with_parameters(chart, len(columns_g))
    n = chart.dimension
    g = [[big.zero()] * n for _ in range(n)]
    for k, col in enumerate(columns_g):
        for i in range(n):
            for j in range(n):
                e = col[i][j]
                if not e.is_zero:
                    g[i][j] = g[i][j] + params[k] * lift(e)

    det_rows = [[g[i][j] for j in range(n)] for i in range(n)]

    def adj(i, j):
        minor = [
            [det_rows[r][c] for c in range(n) if c != j] for r in range(n) if r != i
        ]
        sub = determinant(minor, big)
        return sub if (i + j) % 2 == 0 else -sub

    lifted_w = {}
    for idx in itertools.product(range(n), repeat=4):
        e = spkg.weyl[idx]
        if not e.is_zero:
            lifted_w[idx] = lift(e)

    def contracted(a, d):
        total = big.zero()
        for e0 in range(n):
            ge = adj(a, e0)
            if ge.is_zero:
                continue
            for b in range(n):
                for c in range(n):
                    w = lifted_w.get((e0, b, c, d))
                    if w is None:
                        continue
                    gb = g[b][c]
                    if gb.is_zero:
                        continue
                    total = total + ge * gb * w
        return total

    for a in range(n):
        for d in range(a + 1, n):
            if not (contracted(a, d) - contracted(d, a)).is_zero:
                return False
    return True


# ---------------------------------------------------------------------------
# Exact candidate.
# ---------------------------------------------------------------------------


def _build_exact_candidate(
    report: MetrisabilityReport,
    chart: Chart,
    solutions: list[list[Expression]],
    special: Connection,
    special_gauge: GaugeChange,
    input_conn: Connection,
    options: ChecklistOptions,
) -> Optional[MetricCandidate]:
    space = StateSpace(chart)
    n = chart.dimension
    columns_g = []
    for col in solutions:
        g = space.g_tensor(col)
        columns_g.append([[g[i, j] for j in range(n)] for i in range(n)])
    coeffs = _select_constants(columns_g, chart, options.seed)
    if coeffs is None:
        report.verdict = "NotMetrisable"
        report.failing_stage = "prolongation"
        report.witness = "no constant combination of parallel states has nondegenerate g"
        report.steps.append(StepRecord(9, "nondegenerate_solution", "failed", {}))
        return None
    state = [chart.zero()] * space.size
    for c, col in zip(coeffs, solutions):
        if c:
            state = [s + c * e for s, e in zip(state, col)]
    try:
        candidate = reconstruct_metric(chart, state, special, input_conn, special_gauge)
    except (DegenerateGError, ANotClosedError) as exc:
        report.verdict = "Inconclusive"
        report.failing_stage = "reconstruction"
        report.reason = str(exc)
        report.steps.append(StepRecord(10, "reconstruction", "inconclusive", {"error": str(exc)}))
        return None
    if candidate.metric is None:
        # conformal factor outside the class: finish numerically
        report.steps.append(
            StepRecord(
                10,
                "reconstruction",
                "inconclusive",
                {"note": "conformal factor not recognised; numeric channel required"},
            )
        )
        return None
    ok = candidate.residuals.get("levi_civita_gauge_exact") and candidate.residuals.get(
        "projectively_equivalent_to_input", True
    )
    report.steps.append(
        StepRecord(10, "reconstruction", "passed", {"conformal_factor": str(candidate.conformal_factor)})
    )
    report.steps.append(
        StepRecord(
            11,
            "verification",
            "passed" if ok else "failed",
            {k: bool(v) for k, v in candidate.residuals.items()},
        )
    )
    if not ok:
        report.verdict = "Inconclusive"
        report.failing_stage = "verification"
        report.reason = "exact verification failed; state inconsistent"
        return None
    report.verdict = "Metrisable"
    report.candidate = candidate
    return candidate


# ---------------------------------------------------------------------------
# Numeric completion.
# ---------------------------------------------------------------------------


def _default_base_point(chart: Chart, options: ChecklistOptions, exprs: Sequence[Expression]) -> np.ndarray:
    if options.base_point is not None:
        return np.asarray(options.base_point, dtype=float)
    rng = np.random.default_rng(options.seed + 17)
    base = np.full(chart.dimension, 0.0)
    for _ in range(64):
        trial = base + rng.uniform(0.4, 1.1, size=chart.dimension)
        try:
            for e in exprs:
                e.evaluate(trial, options.impls)
            return trial
        except Exception:
            continue
    raise RuntimeError("could not locate a regular base point; supply one explicitly")


def _numeric_path(
    report: MetrisabilityReport,
    chart: Chart,
    reduced: ReducedSystem,
    special: Connection,
    special_gauge: GaugeChange,
    input_conn: Connection,
    options: ChecklistOptions,
) -> MetrisabilityReport:
    report.mode = "numeric"
    if options.backend == "symbolic":
        report.verdict = "Inconclusive"
        report.failing_stage = "integration"
        report.reason = "reduced system leaves the symbolic class and numeric mode is disabled"
        report.steps.append(StepRecord(9, "integration", "inconclusive", {"mode": "symbolic-only"}))
        return report

    n = chart.dimension
    space = reduced.space
    p = reduced.dimension
    probe_exprs = [e for col in reduced.basis for e in col if not e.is_zero]
    base = _default_base_point(chart, options, probe_exprs)

    grad_entries = [reduced.gradients[a][i][j] for a in range(n) for i in range(p) for j in range(p)]
    grad_compiled = compile_expressions(grad_entries, chart)
    basis_entries = [e for col in reduced.basis for e in col]
    basis_compiled = compile_expressions(basis_entries, chart)

    from scipy.integrate import solve_ivp

    def transport_u(target: Sequence[float], u0: np.ndarray) -> np.ndarray:
        u = u0.copy()
        current = base.copy()
        for waypoint in axis_polyline(base, target)[1:]:
            delta = waypoint - current

            def rhs(t, uu, p0=current.copy(), d=delta.copy()):
                x = p0 + t * d
                vals = np.asarray(grad_compiled(generator_values(chart, x, options.impls)))
                G = vals.reshape(n, p, p)
                Gdir = np.tensordot(d, G, axes=(0, 0))
                return Gdir @ uu

            sol = solve_ivp(
                rhs,
                (0.0, 1.0),
                u,
                method="DOP853",
                rtol=options.integration_tol * 0.1,
                atol=options.integration_tol * 0.01,
            )
            if not sol.success:
                raise RuntimeError(f"reduced transport failed: {sol.message}")
            u = sol.y[:, -1]
            current = waypoint
        return u

    def state_from_u(point: Sequence[float], u: np.ndarray) -> np.ndarray:
        vals = np.asarray(basis_compiled(generator_values(chart, point, options.impls)))
        B = vals.reshape(p, space.size).T
        return B @ u

    # choose constants: nondegenerate g at the base point
    rng = np.random.default_rng(options.seed)
    coeffs = None
    trials = [np.ones(p)]
    trials.extend(np.eye(p))
    for _ in range(40):
        trials.append(rng.uniform(-1.5, 1.5, size=p))
    for trial in trials:
        s0 = state_from_u(base, trial)
        g0 = _g_matrix(space, s0)
        if abs(np.linalg.det(g0)) > 1e-8 * max(1.0, np.abs(g0).max()) ** n:
            coeffs = np.asarray(trial, dtype=float)
            break
    if coeffs is None:
        report.verdict = "NotMetrisable"
        report.failing_stage = "prolongation"
        report.witness = "all numeric parallel states have degenerate g at the base point"
        report.steps.append(StepRecord(9, "nondegenerate_solution", "failed", {}))
        return report

    def state_at(point: Sequence[float]) -> np.ndarray:
        u = transport_u(np.asarray(point, dtype=float), coeffs)
        return state_from_u(point, u)

    # phi by line integration of A = -g_ab mu^b, with exact state gradients
    m_entries = []
    for a in range(n):
        M = _prolongation_matrices_cache(special)
        m_entries.extend(M[a][i][j] for i in range(space.size) for j in range(space.size))
    m_compiled = compile_expressions(m_entries, chart)

    def full_matrices(point: Sequence[float]) -> np.ndarray:
        vals = np.asarray(m_compiled(generator_values(chart, point, options.impls)))
        return vals.reshape(n, space.size, space.size)

    def gauge_at(point: Sequence[float], s: Optional[np.ndarray] = None) -> np.ndarray:
        if s is None:
            s = state_at(point)
        g_lower = np.linalg.inv(_g_matrix(space, s))
        mu = s[space.n_g : space.n_g + n]
        return -g_lower @ mu

    def phi_at(point: Sequence[float]) -> float:
        # integrate d phi = A along the polyline, transporting u alongside
        phi = 0.0
        u = coeffs.copy()
        current = base.copy()
        for waypoint in axis_polyline(base, np.asarray(point, dtype=float))[1:]:
            delta = waypoint - current

            def rhs(t, y, p0=current.copy(), d=delta.copy()):
                x = p0 + t * d
                vals = np.asarray(grad_compiled(generator_values(chart, x, options.impls)))
                G = vals.reshape(n, p, p)
                Gdir = np.tensordot(d, G, axes=(0, 0))
                du = Gdir @ y[:p]
                s = state_from_u(x, y[:p])
                A = gauge_at(x, s)
                return np.concatenate([du, [float(A @ d)]])

            sol = solve_ivp(
                rhs,
                (0.0, 1.0),
                np.concatenate([u, [phi]]),
                method="DOP853",
                rtol=options.integration_tol * 0.1,
                atol=options.integration_tol * 0.01,
            )
            if not sol.success:
                raise RuntimeError(f"potential transport failed: {sol.message}")
            u, phi = sol.y[:p, -1], float(sol.y[p, -1])
            current = waypoint
        return phi

    def ghat_at(point: Sequence[float]) -> np.ndarray:
        s = state_at(point)
        g_lower = np.linalg.inv(_g_matrix(space, s))
        return np.exp(2.0 * phi_at(point)) * g_lower

    # verification residuals at sample points
    sample = _sample_points(chart, base, options, probe_exprs)
    gamma_special = [special.gamma(a, b, c) for a in range(n) for b in range(n) for c in range(n)]
    gamma_compiled = compile_expressions(gamma_special, chart)
    residual = 0.0
    for point in sample:
        s = state_at(point)
        mats = full_matrices(point)
        ds = -np.einsum("aij,j->ai", mats, s)  # exact state gradients
        g_up = _g_matrix(space, s)
        g_lo = np.linalg.inv(g_up)
        mu = s[space.n_g : space.n_g + n]
        A = -g_lo @ mu
        phi = phi_at(point)
        e2phi = np.exp(2.0 * phi)
        dg_up = np.empty((n, n, n))
        for a in range(n):
            dg_up[a] = _g_matrix(space, ds[a])
        dg_lo = np.array([-g_lo @ dg_up[a] @ g_lo for a in range(n)])
        ghat = e2phi * g_lo
        dghat = np.array([e2phi * (2.0 * A[a] * g_lo + dg_lo[a]) for a in range(n)])
        ghat_inv = np.linalg.inv(ghat)
        gam_hat = np.empty((n, n, n))
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    gam_hat[a, b, c] = 0.5 * sum(
                        ghat_inv[a, d] * (dghat[b][d, c] + dghat[c][d, b] - dghat[d][b, c])
                        for d in range(n)
                    )
        gam_sp = np.asarray(
            gamma_compiled(generator_values(chart, point, options.impls))
        ).reshape(n, n, n)
        expected = gam_sp.copy()
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    if a == c:
                        expected[a, b, c] += A[b]
                    if a == b:
                        expected[a, b, c] += A[c]
        residual = max(residual, float(np.abs(gam_hat - expected).max()))

    ok = residual <= max(options.residual_tol, 1e-8)
    numeric = NumericCandidate(
        base_point=[float(x) for x in base],
        constants=[float(c) for c in coeffs],
        state_at=state_at,
        phi_at=phi_at,
        ghat_at=ghat_at,
        residuals={"levi_civita_gauge_max_abs": residual, "sample_points": len(sample)},
    )
    report.numeric_candidate = numeric
    report.steps.append(
        StepRecord(
            10,
            "reconstruction",
            "passed" if ok else "inconclusive",
            {"mode": "numeric", "residual": residual},
        )
    )
    report.steps.append(
        StepRecord(11, "verification", "passed" if ok else "inconclusive", {"residual": residual})
    )
    report.verdict = "Metrisable" if ok else "Inconclusive"
    if not ok:
        report.failing_stage = "verification"
        report.reason = f"numeric verification residual {residual:.3e} above gate"
    return report


_PROL_CACHE: dict[int, list] = {}


def _prolongation_matrices_cache(special: Connection) -> list:
    key = id(special)
    if key not in _PROL_CACHE:
        spkg = decompose(special, cross_check=False)
        _PROL_CACHE[key] = [
            prolongation_connection(spkg).coefficient_matrix(a)
            for a in range(special.chart.dimension)
        ]
    return _PROL_CACHE[key]


def _g_matrix(space: StateSpace, state: np.ndarray) -> np.ndarray:
    n = space.chart.dimension
    g = np.empty((n, n))
    for idx, (i, j) in enumerate(space.pairs):
        g[i, j] = state[idx]
        g[j, i] = state[idx]
    return g


def _sample_points(
    chart: Chart, base: np.ndarray, options: ChecklistOptions, probe_exprs: Sequence[Expression]
) -> list[np.ndarray]:
    rng = np.random.default_rng(options.seed + 101)
    points = []
    attempts = 0
    while len(points) < options.sample_points and attempts < 200:
        attempts += 1
        trial = base + rng.uniform(-0.35, 0.35, size=chart.dimension)
        try:
            for e in probe_exprs[:50]:
                e.evaluate(trial, options.impls)
        except Exception:
            continue
        points.append(trial)
    if len(points) < 3:
        raise RuntimeError("could not sample enough regular points")
    return points
