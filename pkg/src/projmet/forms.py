"""Scalar differential forms in a holonomic coframe, with a restricted
antidifferentiation routine for closed forms of degree one and two.

Components are stored on strictly increasing index tuples; general index
access applies the antisymmetry sign.  The primitive search is deliberately
limited to the class where results stay rational: term-wise univariate
antidifferentiation plus a linear-ansatz solve over candidate monomials.
Callers fall back to numeric line integration when it returns ``None``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence

import sympy
from sympy import QQ

from .expr import Chart, Expression, parse_expression

__all__ = ["ScalarForm", "NotClosedError", "find_primitive", "match_log_derivative"]


class NotClosedError(Exception):
    pass


def _sort_sign(indices: Sequence[int]) -> tuple[Optional[tuple[int, ...]], int]:
    idx = list(indices)
    if len(set(idx)) != len(idx):
        return None, 0
    sign = 1
    for i in range(len(idx)):
        for j in range(len(idx) - 1 - i):
            if idx[j] > idx[j + 1]:
                idx[j], idx[j + 1] = idx[j + 1], idx[j]
                sign = -sign
    return tuple(idx), sign


@dataclass(frozen=True)
class ScalarForm:
    """Antisymmetric k-form with Expression components, 0-based indices."""

    chart: Chart
    degree: int
    components: Mapping[tuple[int, ...], Expression]

    def __post_init__(self):
        if not 0 <= self.degree <= self.chart.dimension:
            raise ValueError("form degree out of range")
        clean = {}
        for key, val in self.components.items():
            canon, sign = _sort_sign(key)
            if canon is None:
                raise ValueError("repeated index in form component")
            if len(canon) != self.degree:
                raise ValueError("component index count does not match degree")
            if not all(0 <= i < self.chart.dimension for i in canon):
                raise ValueError("index out of range")
            if canon in clean:
                raise ValueError("duplicate component (up to antisymmetry)")
            if not val.is_zero:
                clean[canon] = val if sign > 0 else -val
        object.__setattr__(self, "components", clean)

    @staticmethod
    def zero(chart: Chart, degree: int) -> "ScalarForm":
        return ScalarForm(chart, degree, {})

    @staticmethod
    def one_form(chart: Chart, comps: Sequence[Expression]) -> "ScalarForm":
        return ScalarForm(chart, 1, {(a,): comps[a] for a in range(chart.dimension)})

    def component(self, *indices: int) -> Expression:
        canon, sign = _sort_sign(indices)
        if canon is None:
            return self.chart.zero()
        val = self.components.get(canon)
        if val is None:
            return self.chart.zero()
        return val if sign > 0 else -val

    def one_form_components(self) -> list[Expression]:
        if self.degree != 1:
            raise ValueError("not a 1-form")
        return [self.component(a) for a in range(self.chart.dimension)]

    @property
    def is_zero(self) -> bool:
        return not self.components

    def __add__(self, other: "ScalarForm") -> "ScalarForm":
        if self.degree != other.degree or self.chart != other.chart:
            raise ValueError("form mismatch")
        keys = set(self.components) | set(other.components)
        return ScalarForm(
            self.chart,
            self.degree,
            {k: self.component(*k) + other.component(*k) for k in keys},
        )

    def __sub__(self, other: "ScalarForm") -> "ScalarForm":
        return self + (-other)

    def __neg__(self) -> "ScalarForm":
        return ScalarForm(self.chart, self.degree, {k: -v for k, v in self.components.items()})

    def __mul__(self, scalar) -> "ScalarForm":
        return ScalarForm(self.chart, self.degree, {k: v * scalar for k, v in self.components.items()})

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, ScalarForm):
            return NotImplemented
        return (self - other).is_zero

    def exterior_derivative(self) -> "ScalarForm":
        chart = self.chart
        n = chart.dimension
        k = self.degree
        out: dict[tuple[int, ...], Expression] = {}
        for key in itertools.combinations(range(n), k + 1):
            total = chart.zero()
            for j, b in enumerate(key):
                rest = key[:j] + key[j + 1 :]
                term = self.component(*rest).differentiate(b)
                total = total + (term if j % 2 == 0 else -term)
            out[key] = total
        return ScalarForm(chart, k + 1, out)

    def is_closed(self) -> bool:
        return self.exterior_derivative().is_zero

    def evaluate_components(self, point, impls=None) -> dict[tuple[int, ...], float]:
        return {k: v.evaluate(point, impls) for k, v in self.components.items()}


# ---------------------------------------------------------------------------
# Restricted antidifferentiation.
# ---------------------------------------------------------------------------


def find_primitive(omega: ScalarForm, base: Optional[Sequence[Fraction]] = None) -> Optional[ScalarForm]:
    """Exact primitive of a closed 1- or 2-form, or ``None`` if outside the
    supported class (single-coordinate terms plus polynomial terms).

    The result ``lam`` satisfies d(lam) = omega exactly; the integration
    constant is fixed so that purely polynomial parts vanish at ``base``
    (default: the origin).
    """
    if omega.degree not in (1, 2):
        raise ValueError("primitive search supports degrees 1 and 2 only")
    if not omega.is_closed():
        raise NotClosedError("form is not closed")
    chart = omega.chart
    if omega.is_zero:
        return ScalarForm.zero(chart, omega.degree - 1)

    if omega.degree == 1:
        lam = _primitive_of_one_form(omega)
    else:
        lam = _primitive_by_ansatz(omega)
    if lam is None:
        return None
    assert (lam.exterior_derivative() - omega).is_zero
    return lam


def _primitive_of_one_form(omega: ScalarForm) -> Optional[ScalarForm]:
    chart = omega.chart
    n = chart.dimension
    ansatz_comps: dict[tuple[int, ...], Expression] = {}
    univariate_total = chart.zero()
    for a in range(n):
        comp = omega.component(a)
        if comp.is_zero:
            continue
        if comp.frac.denom.is_ground:
            ansatz_comps[(a,)] = comp
            continue
        if _depends_only_on(comp, a):
            prim = _antidifferentiate_univariate(comp, a)
            if prim is None:
                return None
            univariate_total = univariate_total + prim
        else:
            return None
    lam0 = ScalarForm(chart, 0, {(): univariate_total})
    rest = ScalarForm(chart, 1, ansatz_comps)
    if rest.is_zero:
        return lam0
    lam1 = _primitive_by_ansatz(rest)
    if lam1 is None:
        return None
    return ScalarForm(chart, 0, {(): lam0.component() + lam1.component()})


def _depends_only_on(e: Expression, coord: int) -> bool:
    chart = e.chart
    return not any(
        e.depends_on_coordinate(c) for c in range(chart.dimension) if c != coord
    )


def _antidifferentiate_univariate(e: Expression, coord: int) -> Optional[Expression]:
    """Antiderivative of an expression in a single coordinate group, if the
    result stays inside the rational class."""
    chart = e.chart
    ctx = chart.ctx
    frac = e.frac
    syms: dict[str, sympy.Expr] = {}
    x = sympy.Symbol(chart.coordinate_names[coord])
    funcs: dict[str, sympy.Function] = {}
    for g in ctx.gens:
        if g.kind == 0:
            syms[g.display] = sympy.Symbol(g.name)
        else:
            f = funcs.setdefault(g.name, sympy.Function(g.name))
            syms[g.display] = sympy.Derivative(f(x), (x, g.order)) if g.order else f(x)

    def to_sympy(poly):
        total = sympy.Integer(0)
        for monom, coeff in poly.terms():
            q = QQ(coeff)
            term = sympy.Rational(int(q.numerator), int(q.denominator))
            for i, exp in enumerate(monom):
                if exp:
                    term *= syms[ctx.gens[i].display] ** exp
            total += term
        return total

    target = to_sympy(frac.numer) / to_sympy(frac.denom)
    try:
        anti = sympy.integrate(target, x)
    except Exception:
        return None
    if anti.has(sympy.Integral):
        return None
    return _from_sympy(anti, chart)


def _from_sympy(expr: sympy.Expr, chart: Chart) -> Optional[Expression]:
    """Convert a sympy expression back into the rational class, or None."""
    expr = sympy.together(expr)
    from sympy.core.function import AppliedUndef

    def conv(node) -> Optional[Expression]:
        if node.is_Rational:
            return chart.constant(Fraction(int(node.p), int(node.q)))
        if isinstance(node, sympy.Symbol):
            name = node.name
            if name in chart.coordinate_names:
                return chart.coordinate(chart.coordinate_index(name))
            if any(f.name == name for f in chart.function_symbols):
                return chart.function(name)
            return None
        if isinstance(node, AppliedUndef):
            return chart.function(node.func.__name__)
        if isinstance(node, sympy.Derivative):
            inner = node.expr
            if isinstance(inner, AppliedUndef):
                order = sum(c for _, c in node.variable_count)
                return chart.function(inner.func.__name__, order)
            return None
        if isinstance(node, sympy.Add):
            total = chart.zero()
            for arg in node.args:
                c = conv(arg)
                if c is None:
                    return None
                total = total + c
            return total
        if isinstance(node, sympy.Mul):
            total = chart.one()
            for arg in node.args:
                c = conv(arg)
                if c is None:
                    return None
                total = total * c
            return total
        if isinstance(node, sympy.Pow):
            if not node.exp.is_Integer:
                return None
            c = conv(node.base)
            if c is None:
                return None
            return c ** int(node.exp)
        return None

    return conv(expr)


def _candidate_monomials(omega: ScalarForm) -> dict[tuple[int, ...], set]:
    """Candidate numerator monomials for each component of the primitive."""
    chart = omega.chart
    ctx = chart.ctx
    ngens = len(ctx.gens)
    coord_pos = {chart.coordinate_index(g.name): i for i, g in enumerate(ctx.gens) if g.kind == 0}
    # tick-down map: generator position of f^(k) -> position of f^(k-1)
    tick_down = {}
    group_of = {}
    for i, g in enumerate(ctx.gens):
        if g.kind == 1:
            fs = next(f for f in chart.function_symbols if f.name == g.name)
            group_of[i] = chart.coordinate_index(fs.arg)
            if g.order >= 1:
                j = next(
                    (jj for jj, gg in enumerate(ctx.gens) if gg.kind == 1 and gg.name == g.name and gg.order == g.order - 1),
                    None,
                )
                if j is not None:
                    tick_down[i] = j

    out: dict[tuple[int, ...], set] = {}
    for key, comp in omega.components.items():
        for j, direction in enumerate(key):
            rest = key[:j] + key[j + 1 :]
            cands = out.setdefault(rest, set())
            for monom, _ in comp.frac.numer.terms():
                bumped = list(monom)
                bumped[coord_pos[direction]] += 1
                cands.add(tuple(bumped))
                for i, e in enumerate(monom):
                    if e >= 1 and i in tick_down and group_of.get(i) == direction:
                        lowered = list(monom)
                        lowered[i] -= 1
                        lowered[tick_down[i]] += 1
                        cands.add(tuple(lowered))
                cands.add(tuple(monom))  # coordinate-free terms integrate linearly
    return out


def _primitive_by_ansatz(omega: ScalarForm) -> Optional[ScalarForm]:
    """Solve d(lam) = omega with lam a rational-coefficient combination of
    candidate monomials; all components of omega must be polynomial."""
    chart = omega.chart
    candidates = _candidate_monomials(omega)
    unknowns: list[tuple[tuple[int, ...], tuple]] = []
    for key, monos in sorted(candidates.items()):
        for m in sorted(monos):
            unknowns.append((key, m))
    if len(unknowns) > 4000:
        return None
    ctx = chart.ctx

    def monom_expr(m) -> Expression:
        e = chart.one()
        for i, exp in enumerate(m):
            if exp:
                e = e * Expression(chart, ctx.field.gens[i], ctx.version) ** exp
        return e

    # rows: for each (k+1)-component and each numerator monomial, one equation
    derivative_cols = []
    for key, m in unknowns:
        lam = ScalarForm(chart, omega.degree - 1, {key: monom_expr(m)})
        derivative_cols.append(lam.exterior_derivative())

    comp_keys = sorted(
        set(omega.components) | {k for col in derivative_cols for k in col.components}
    )
    rows: dict[tuple, dict[int, Fraction]] = {}
    rhs: dict[tuple, Fraction] = {}
    for ck in comp_keys:
        for j, col in enumerate(derivative_cols):
            entry = col.component(*ck)
            if entry.is_zero:
                continue
            for monom, coeff in entry.frac.numer.terms():
                q = QQ(coeff) / QQ(entry.frac.denom.coeff(1))
                rows.setdefault((ck, monom), {})[j] = Fraction(int(q.numerator), int(q.denominator))
        target = omega.component(*ck)
        if not target.is_zero:
            if not target.frac.denom.is_ground:
                return None
            for monom, coeff in target.frac.numer.terms():
                q = QQ(coeff) / QQ(target.frac.denom.coeff(1))
                rhs[(ck, monom)] = Fraction(int(q.numerator), int(q.denominator))

    all_rows = sorted(set(rows) | set(rhs))
    matrix = [[rows.get(r, {}).get(j, Fraction(0)) for j in range(len(unknowns))] for r in all_rows]
    vector = [rhs.get(r, Fraction(0)) for r in all_rows]
    solution = _solve_rational(matrix, vector)
    if solution is None:
        return None
    comps: dict[tuple[int, ...], Expression] = {}
    for (key, m), c in zip(unknowns, solution):
        if c:
            comps[key] = comps.get(key, chart.zero()) + monom_expr(m) * c
    return ScalarForm(chart, omega.degree - 1, comps)


def _solve_rational(matrix: list[list[Fraction]], vector: list[Fraction]) -> Optional[list[Fraction]]:
    """One solution of M x = v over the rationals, or None if inconsistent."""
    m = len(matrix)
    n = len(matrix[0]) if m else 0
    aug = [row[:] + [vector[i]] for i, row in enumerate(matrix)]
    pivots = []
    r = 0
    for c in range(n):
        piv = next((i for i in range(r, m) if aug[i][c]), None)
        if piv is None:
            continue
        aug[r], aug[piv] = aug[piv], aug[r]
        pv = aug[r][c]
        aug[r] = [x / pv for x in aug[r]]
        for i in range(m):
            if i != r and aug[i][c]:
                f = aug[i][c]
                aug[i] = [a - f * b for a, b in zip(aug[i], aug[r])]
        pivots.append(c)
        r += 1
        if r == m:
            break
    for i in range(r, m):
        if aug[i][n]:
            return None
    x = [Fraction(0)] * n
    for i, c in enumerate(pivots):
        x[c] = aug[i][n]
    return x


# ---------------------------------------------------------------------------
# Logarithmic-derivative recognition for closed rational 1-forms.
# ---------------------------------------------------------------------------


def match_log_derivative(A: ScalarForm) -> Optional[list[tuple[Fraction, Expression]]]:
    """Write a closed 1-form as sum of c_i * d(log q_i) with rational c_i and
    polynomial q_i, or return None.

    Used to produce exact integrating factors and conformal factors: if the
    result is ``[(c_i, q_i)]`` then a potential is sum of c_i log q_i.
    """
    if A.degree != 1:
        raise ValueError("log-derivative matching expects a 1-form")
    if A.is_zero:
        return []
    chart = A.chart
    comps = A.one_form_components()
    factors: list[Expression] = []
    seen = set()
    for comp in comps:
        if comp.is_zero:
            continue
        for q in _denominator_factors(comp):
            key = str(q)
            if key not in seen:
                seen.add(key)
                factors.append(q)
    if not factors:
        return None

    # Solve A_a * prod(q_j) == sum_i c_i dq_i/dx^a * prod_{j != i} q_j
    prod_all = chart.one()
    for q in factors:
        prod_all = prod_all * q
    columns: list[list[Expression]] = []
    for i, q in enumerate(factors):
        rest = chart.one()
        for j, p in enumerate(factors):
            if j != i:
                rest = rest * p
        columns.append([q.differentiate(a) * rest for a in range(chart.dimension)])
    targets = [comps[a] * prod_all for a in range(chart.dimension)]

    rows: dict[tuple, dict[int, Fraction]] = {}
    rhs: dict[tuple, Fraction] = {}
    for a in range(chart.dimension):
        for i, col in enumerate(columns):
            entry = col[a]
            if entry.is_zero:
                continue
            if not entry.frac.denom.is_ground:
                return None
            for monom, coeff in entry.frac.numer.terms():
                q = QQ(coeff) / QQ(entry.frac.denom.coeff(1))
                rows.setdefault((a, monom), {})[i] = Fraction(int(q.numerator), int(q.denominator))
        t = targets[a]
        if t.is_zero:
            continue
        if not t.frac.denom.is_ground:
            return None
        for monom, coeff in t.frac.numer.terms():
            q = QQ(coeff) / QQ(t.frac.denom.coeff(1))
            rhs[(a, monom)] = Fraction(int(q.numerator), int(q.denominator))

    all_rows = sorted(set(rows) | set(rhs))
    matrix = [[rows.get(r, {}).get(i, Fraction(0)) for i in range(len(factors))] for r in all_rows]
    vector = [rhs.get(r, Fraction(0)) for r in all_rows]
    sol = _solve_rational(matrix, vector)
    if sol is None:
        return None
    result = [(c, q) for c, q in zip(sol, factors) if c]
    # confirm exactly
    check = ScalarForm.one_form(
        chart,
        [
            sum((q.differentiate(a) * c / q for c, q in result), chart.zero())
            for a in range(chart.dimension)
        ],
    )
    if not (check - A).is_zero:
        return None
    return result


def _denominator_factors(e: Expression) -> list[Expression]:
    """Irreducible factors of the denominator, as Expressions."""
    chart = e.chart
    den = e.frac.denom
    if den.is_ground:
        return []
    expr = den.as_expr()
    out = []
    _, facs = sympy.factor_list(expr)
    for f, _mult in facs:
        text = str(f).replace("**", "^")
        out.append(parse_expression(text, chart))
    return out
