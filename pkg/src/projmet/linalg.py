"""Exact linear algebra over the rational-function field, plus numeric rank
helpers.

The symbolic kernel works over the field of fractions: a pivot is any entry
that is not identically zero, so the result is the generic kernel.  Pivot
entries that depend on coordinates or function symbols are reported as
*genericity factors*: conditions whose vanishing could enlarge the kernel on
a subvariety.  Checklist callers surface these as the structure constraints
derived by elimination.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import sympy

from .expr import Chart, Expression, common_denominator_parts, parse_expression


def _clear_row_denominators(row: list[Expression], chart: Chart) -> list[Expression]:
    """Scale a homogeneous row by a common denominator when one exists; the
    kernel is unchanged and elimination stays polynomial."""
    view = common_denominator_parts(row, chart)
    if view is None:
        return row
    numers, den = view
    if den.is_ground:
        return row
    field = chart.ctx.field
    version = chart.ctx.version
    return [Expression(chart, field.raw_new(nu, field.ring.one), version) for nu in numers]

__all__ = [
    "determinant",
    "KernelResult",
    "kernel_symbolic",
    "kernel_numeric",
    "nonconstant_factors",
]


def determinant(rows: Sequence[Sequence[Expression]], chart: Chart) -> Expression:
    """Determinant via Laplace expansion with memoisation on column subsets.

    Chosen over fraction-free elimination because the matrices here are
    sparse and the entries are rational functions; zero entries prune the
    recursion aggressively.
    """
    m = len(rows)
    if any(len(r) != m for r in rows):
        raise ValueError("determinant needs a square matrix")
    if m == 0:
        return chart.one()

    flat = [e for row in rows for e in row]
    view = common_denominator_parts(flat, chart)
    if view is not None:
        numers, den = view
        if not den.is_ground:
            field = chart.ctx.field
            num_det = _poly_determinant(
                [numers[i * m : (i + 1) * m] for i in range(m)], field.ring
            )
            num = field.raw_new(num_det, field.ring.one)
            dpow = field.raw_new(den ** m, field.ring.one)
            return Expression(chart, num / dpow, chart.ctx.version)

    cache: dict[int, Expression] = {}
    full_mask = (1 << m) - 1

    def rec(row: int, mask: int) -> Expression:
        if row == m:
            return chart.one()
        cached = cache.get(mask)
        if cached is not None:
            return cached
        total = chart.zero()
        sign = 1
        for col in range(m):
            bit = 1 << col
            if not mask & bit:
                continue
            entry = rows[row][col]
            if not entry.is_zero:
                sub = rec(row + 1, mask & ~bit)
                if not sub.is_zero:
                    term = entry * sub
                    total = total + (term if sign > 0 else -term)
            sign = -sign  # parity of the column's position among available ones
        cache[mask] = total
        return total

    return rec(0, full_mask)


def _poly_determinant(rows, ring):
    """Subset-memoised Laplace expansion over polynomial entries."""
    m = len(rows)
    cache: dict[int, object] = {}

    def rec(row: int, mask: int):
        if row == m:
            return ring.one
        cached = cache.get(mask)
        if cached is not None:
            return cached
        total = ring.zero
        sign = 1
        for col in range(m):
            bit = 1 << col
            if not mask & bit:
                continue
            entry = rows[row][col]
            if entry:
                sub = rec(row + 1, mask & ~bit)
                if sub:
                    term = entry * sub
                    total = total + term if sign > 0 else total - term
            sign = -sign
        cache[mask] = total
        return total

    return rec(0, (1 << m) - 1)


@dataclass
class KernelResult:
    """Exact kernel of a rectangular system over the rational-function field."""

    basis: list[list[Expression]]  # each vector has one entry per unknown
    rank: int
    pivot_columns: list[int]
    genericity_factors: list[tuple[str, Expression]] = field(default_factory=list)

    @property
    def dimension(self) -> int:
        return len(self.basis)


def kernel_symbolic(
    rows: Sequence[tuple[str, Sequence[Expression]]],
    n_unknowns: int,
    chart: Chart,
) -> KernelResult:
    """Fraction-free style RREF over the fraction field with exact division.

    ``rows`` are (tag, coefficients) pairs; tags propagate into the reported
    genericity factors so callers can attribute eliminations to the source
    equation block.
    """
    work = [
        (tag, _clear_row_denominators([c for c in coeffs], chart))
        for tag, coeffs in rows
        if not all(c.is_zero for c in coeffs)
    ]
    pivots: list[tuple[int, int]] = []  # (row index in reduced list, column)
    reduced: list[tuple[str, list[Expression]]] = []
    factors: list[tuple[str, Expression]] = []
    seen_factor_keys: set[str] = set()

    for tag, row in work:
        # eliminate known pivots
        for (ri, col) in pivots:
            coeff = row[col]
            if not coeff.is_zero:
                prow = reduced[ri][1]
                row = [r - coeff * p for r, p in zip(row, prow)]
        nonzero = [(j, row[j]) for j in range(n_unknowns) if not row[j].is_zero]
        if not nonzero:
            continue
        # pivot choice: entry with the fewest numerator terms
        col, entry = min(nonzero, key=lambda item: len(item[1].frac.numer.terms()))
        if not entry.is_constant:
            for fac in nonconstant_factors(entry):
                key = str(fac)
                if key not in seen_factor_keys:
                    seen_factor_keys.add(key)
                    factors.append((tag, fac))
        row = [r / entry for r in row]
        for ri, (ptag, prow) in enumerate(reduced):
            coeff = prow[col]
            if not coeff.is_zero:
                reduced[ri] = (ptag, [p - coeff * r for p, r in zip(prow, row)])
        pivots.append((len(reduced), col))
        reduced.append((tag, row))

    pivot_cols = sorted(col for _, col in pivots)
    free_cols = [j for j in range(n_unknowns) if j not in pivot_cols]
    basis = []
    zero = chart.zero()
    one = chart.one()
    col_to_row = {col: ri for ri, col in pivots}
    for fc in free_cols:
        vec = [zero] * n_unknowns
        vec[fc] = one
        for pc in pivot_cols:
            vec[pc] = -reduced[col_to_row[pc]][1][fc]
        basis.append(vec)
    return KernelResult(basis, len(pivot_cols), pivot_cols, factors)


def solve_with_rhs(
    b_rows: Sequence[Sequence[Expression]],
    c_rows: Sequence[Sequence[Expression]],
    chart: Chart,
) -> tuple[Optional[list[list[Expression]]], list[list[Expression]], list[Expression]]:
    """Solve B x = C row-wise over the fraction field, where the unknown x is
    a vector of linear forms (one per B column) and C fixes their
    coefficients.

    Returns (solution rows indexed by B column, constraint rows, pivot
    factors).  Constraint rows are C-combinations that must vanish for the
    system to be consistent; the solution is None when B does not have full
    column rank (the caller treats the missing directions as unconstrained).
    """
    p = len(b_rows[0]) if b_rows else 0
    q = len(c_rows[0]) if c_rows else 0
    aug = [
        _clear_row_denominators(list(b) + list(c), chart)
        for b, c in zip(b_rows, c_rows)
    ]
    pivots: dict[int, int] = {}
    factors: list[Expression] = []
    reduced: list[list[Expression]] = []
    for row in aug:
        for col, ri in pivots.items():
            coeff = row[col]
            if not coeff.is_zero:
                prow = reduced[ri]
                row = [r - coeff * pr for r, pr in zip(row, prow)]
        lead = next((j for j in range(p) if not row[j].is_zero), None)
        if lead is None:
            tail = row[p:]
            if any(not t.is_zero for t in tail):
                reduced.append(row)
                # pure constraint row; do not register a pivot
                continue
            continue
        entry = row[lead]
        if not entry.is_constant:
            factors.extend(nonconstant_factors(entry))
        row = [r / entry for r in row]
        for ri, prow in enumerate(reduced):
            coeff = prow[lead]
            if not coeff.is_zero:
                reduced[ri] = [pr - coeff * r for pr, r in zip(prow, row)]
        pivots[lead] = len(reduced)
        reduced.append(row)
    constraints = [row[p:] for row in reduced if all(row[j].is_zero for j in range(p))]
    constraints = [c for c in constraints if any(not e.is_zero for e in c)]
    if len(pivots) < p:
        return None, constraints, factors
    solution = [reduced[pivots[j]][p:] for j in range(p)]
    return solution, constraints, factors


def nonconstant_factors(e: Expression) -> list[Expression]:
    """Irreducible non-constant factors of the numerator of an expression."""
    chart = e.chart
    num = e.frac.numer
    if num.is_ground:
        return []
    out = []
    _, facs = sympy.factor_list(num.as_expr())
    for f, _mult in facs:
        text = str(f).replace("**", "^")
        fac = parse_expression(text, chart)
        if not fac.is_constant:
            out.append(fac)
    return out


def kernel_numeric(
    matrix_at: Callable[[Sequence[float]], np.ndarray],
    points: Sequence[Sequence[float]],
    tol: float = 1e-9,
) -> tuple[int, Optional[np.ndarray], list[int]]:
    """Generic numeric rank and a kernel basis at the first maximal-rank point.

    Returns (generic_rank, kernel_basis or None, per-point ranks).  The
    generic rank is the maximum over sample points; points where the rank
    drops are visible in the per-point list so callers can flag rank jumps.
    """
    if len(points) < 3:
        raise ValueError("numeric kernel needs at least 3 sample points")
    ranks = []
    best = None
    for p in points:
        m = np.asarray(matrix_at(p), dtype=float)
        if m.size == 0:
            ranks.append(0)
            continue
        s = np.linalg.svd(m, compute_uv=False)
        cutoff = tol * (s[0] if s.size and s[0] > 0 else 1.0)
        r = int((s > cutoff).sum())
        ranks.append(r)
        if best is None or r > best[0]:
            best = (r, m)
    generic = max(ranks) if ranks else 0
    kernel = None
    if best is not None:
        r, m = best
        _, s, vt = np.linalg.svd(m)
        cutoff = tol * (s[0] if s.size and s[0] > 0 else 1.0)
        kernel = vt[(s > cutoff).sum():].T if m.shape[1] else None
        if kernel is not None and kernel.shape[1] == 0:
            kernel = np.zeros((m.shape[1], 0))
    return generic, kernel, ranks
