"""Exact scalar arithmetic for connection and metric coefficients.

Values are multivariate rational functions with rational coefficients.  The
indeterminates are the chart coordinates together with formal derivative
symbols ``f``, ``f'``, ``f''``, ... of registered univariate functions.
Every operation returns a canonical form (coprime numerator/denominator,
sign-normalised denominator, graded-lex monomial order), so equality with
zero is decidable by inspecting the numerator.

A registered function may optionally carry a *derivative rule*: an expression
for its first derivative inside the same class.  Ruled symbols close the
class under differentiation without introducing new formal symbols, which is
how generic solutions of simple ODEs (exponentials, power laws) are modelled.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from sympy import QQ
from sympy.polys.fields import field as _frac_field

__all__ = [
    "Chart",
    "FunctionSymbol",
    "Expression",
    "parse_expression",
    "ExpressionError",
    "ParseError",
    "UnknownIdentifierError",
    "DivisionByZeroExpression",
    "EvaluationError",
    "PoleError",
    "MissingImplementationError",
]

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")

Number = Union[int, Fraction]
Scalar = Union["Expression", int, Fraction]


class ExpressionError(Exception):
    """Base class for errors raised by this module."""


class ParseError(ExpressionError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownIdentifierError(ParseError):
    pass


class DivisionByZeroExpression(ExpressionError):
    pass


class EvaluationError(ExpressionError):
    pass


class PoleError(EvaluationError):
    pass


class MissingImplementationError(EvaluationError):
    pass


@dataclass(frozen=True)
class FunctionSymbol:
    """A registered univariate function ``name(arg)``.

    ``derivative`` is an optional expression string for d(name)/d(arg); when
    present, differentiation substitutes the rule instead of creating the
    formal symbol ``name'``.
    """

    name: str
    arg: str
    derivative: Optional[str] = None


def _display_name(fname: str, order: int) -> str:
    return fname + "'" * order


@dataclass(frozen=True)
class _Gen:
    """One field generator: a coordinate or a formal derivative symbol."""

    kind: int  # 0 = coordinate, 1 = function symbol
    name: str  # coordinate name, or function name
    order: int  # derivative order (0 for coordinates)

    @property
    def display(self) -> str:
        return self.name if self.kind == 0 else _display_name(self.name, self.order)


class _Context:
    """Mutable per-chart registry of generators and the active fraction field.

    The generator set grows as higher derivative orders appear; elements
    created against older field versions are migrated lazily by exponent
    remapping.  Extension is guarded by a lock so expressions stay safe to
    use from worker threads.
    """

    def __init__(self, chart: "Chart"):
        self.chart = chart
        self._lock = threading.RLock()
        self._max_order: dict[str, int] = {fs.name: 0 for fs in chart.function_symbols}
        self._rules: dict[str, Optional["Expression"]] = {}
        self.version = 0
        self._gen_index: dict[_Gen, int] = {}
        self.gens: list[_Gen] = []
        self.field = None
        self._rebuild()

    # -- field management -------------------------------------------------

    def _gen_list(self) -> list[_Gen]:
        gens = [_Gen(0, name, 0) for name in self.chart.coordinate_names]
        for fs in sorted(self.chart.function_symbols, key=lambda f: f.name):
            for k in range(self._max_order[fs.name] + 1):
                gens.append(_Gen(1, fs.name, k))
        return gens

    def _rebuild(self) -> None:
        self.gens = self._gen_list()
        names = ",".join(g.display for g in self.gens) or "one__"
        if self.gens:
            self.field = _frac_field(names, QQ, order="grlex")[0]
        else:  # no generators cannot happen: chart has >= 2 coordinates
            raise ValueError("chart must have coordinates")
        self._gen_index = {g: i for i, g in enumerate(self.gens)}
        self.version += 1

    def ensure_order(self, fname: str, order: int) -> None:
        with self._lock:
            if self._max_order.get(fname, -1) >= order:
                return
            if fname not in self._max_order:
                raise KeyError(f"unknown function symbol {fname!r}")
            self._max_order[fname] = order
            self._rebuild()

    def gen_position(self, gen: _Gen) -> int:
        return self._gen_index[gen]

    def frac_gen(self, gen: _Gen):
        return self.field.gens[self._gen_index[gen]]

    def migrate(self, frac, from_version: int):
        """Re-express a fraction from an older field in the current field."""
        if from_version == self.version:
            return frac
        old_field = frac.field
        old_names = [str(s) for s in old_field.symbols]
        pos = []
        for nm in old_names:
            fname, order = _split_ticks(nm)
            key = (
                _Gen(0, fname, 0)
                if any(c == fname for c in self.chart.coordinate_names) and order == 0
                else _Gen(1, fname, order)
            )
            pos.append(self._gen_index[key])

        def move(poly):
            d = {}
            for monom, coeff in poly.terms():
                new = [0] * len(self.gens)
                for i, e in enumerate(monom):
                    if e:
                        new[pos[i]] = e
                d[tuple(new)] = coeff
            return self.field.ring.from_dict(d)

        return self.field.raw_new(move(frac.numer), move(frac.denom))

    # -- derivative rules --------------------------------------------------

    def rule(self, fname: str) -> Optional["Expression"]:
        if fname not in self._rules:
            fs = next(f for f in self.chart.function_symbols if f.name == fname)
            self._rules[fname] = (
                None if fs.derivative is None else parse_expression(fs.derivative, self.chart)
            )
        return self._rules[fname]


def _split_ticks(name: str) -> tuple[str, int]:
    base = name.rstrip("'")
    return base, len(name) - len(base)


@dataclass(frozen=True)
class Chart:
    """A coordinate chart: dimension, coordinate names, registered functions."""

    dimension: int
    coordinate_names: tuple[str, ...]
    function_symbols: tuple[FunctionSymbol, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "coordinate_names", tuple(self.coordinate_names))
        object.__setattr__(self, "function_symbols", tuple(self.function_symbols))
        if self.dimension < 2:
            raise ValueError("chart dimension must be at least 2")
        if len(self.coordinate_names) != self.dimension:
            raise ValueError("coordinate count does not match dimension")
        names = list(self.coordinate_names) + [f.name for f in self.function_symbols]
        if len(set(names)) != len(names):
            raise ValueError("coordinate and function names must be pairwise distinct")
        for nm in names:
            if not _IDENT_RE.fullmatch(nm):
                raise ValueError(f"invalid identifier {nm!r}")
        for fs in self.function_symbols:
            if fs.arg not in self.coordinate_names:
                raise ValueError(f"argument of {fs.name!r} is not a chart coordinate")
        object.__setattr__(self, "_ctx", _Context(self))

    # context is an implementation detail, excluded from eq/hash
    def __eq__(self, other):
        return self is other or (
            isinstance(other, Chart)
            and self.dimension == other.dimension
            and self.coordinate_names == other.coordinate_names
            and self.function_symbols == other.function_symbols
        )

    def __hash__(self):
        return hash((self.dimension, self.coordinate_names, self.function_symbols))

    @property
    def ctx(self) -> _Context:
        return self._ctx  # type: ignore[attr-defined]

    def zero(self) -> "Expression":
        return Expression(self, self.ctx.field.zero, self.ctx.version)

    def one(self) -> "Expression":
        return Expression(self, self.ctx.field.one, self.ctx.version)

    def constant(self, value: Number) -> "Expression":
        q = Fraction(value)
        ctx = self.ctx
        return Expression(self, ctx.field.ground_new(QQ(q.numerator, q.denominator)), ctx.version)

    def coordinate(self, index: int) -> "Expression":
        """Coordinate as an expression; ``index`` is 0-based."""
        ctx = self.ctx
        return Expression(self, ctx.frac_gen(_Gen(0, self.coordinate_names[index], 0)), ctx.version)

    def function(self, name: str, order: int = 0) -> "Expression":
        fs = next((f for f in self.function_symbols if f.name == name), None)
        if fs is None:
            raise KeyError(f"unknown function symbol {name!r}")
        if order > 0 and fs.derivative is not None:
            base = self.function(name, 0)
            out = base
            for _ in range(order):
                out = out.differentiate(self.coordinate_index(fs.arg))
            return out
        ctx = self.ctx
        ctx.ensure_order(name, order)
        return Expression(self, ctx.frac_gen(_Gen(1, name, order)), ctx.version)

    def coordinate_index(self, name: str) -> int:
        return self.coordinate_names.index(name)


class Expression:
    """Immutable canonical rational function over a chart's symbols."""

    __slots__ = ("chart", "_frac", "_version")

    def __init__(self, chart: Chart, frac, version: int):
        self.chart = chart
        self._frac = frac
        self._version = version

    # -- canonical access --------------------------------------------------

    @property
    def frac(self):
        ctx = self.chart.ctx
        if self._version != ctx.version:
            self._frac = ctx.migrate(self._frac, self._version)
            self._version = ctx.version
        return self._frac

    @property
    def is_zero(self) -> bool:
        return not self._frac.numer

    @property
    def is_constant(self) -> bool:
        f = self._frac
        return f.numer.is_ground and f.denom.is_ground

    def constant_value(self) -> Fraction:
        if not self.is_constant:
            raise ValueError("expression is not constant")
        f = self._frac
        num = f.numer.coeff(1) if f.numer else QQ(0)
        den = f.denom.coeff(1)
        q = QQ(num) / QQ(den)
        return Fraction(int(q.numerator), int(q.denominator))

    def _coerce(self, other: Scalar):
        if isinstance(other, Expression):
            if other.chart != self.chart:
                raise ValueError("expressions live on different charts")
            return other.frac
        if isinstance(other, (int, Fraction)):
            q = Fraction(other)
            return self.chart.ctx.field.ground_new(QQ(q.numerator, q.denominator))
        return NotImplemented

    def _wrap(self, frac) -> "Expression":
        return Expression(self.chart, frac, self.chart.ctx.version)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other: Scalar):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self._wrap(self.frac + o)

    __radd__ = __add__

    def __sub__(self, other: Scalar):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self._wrap(self.frac - o)

    def __rsub__(self, other: Scalar):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self._wrap(o - self.frac)

    def __mul__(self, other: Scalar):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self._wrap(self.frac * o)

    __rmul__ = __mul__

    def __truediv__(self, other: Scalar):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        if not o.numer:
            raise DivisionByZeroExpression("division by identically-zero expression")
        return self._wrap(self.frac / o)

    def __rtruediv__(self, other: Scalar):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        if self.is_zero:
            raise DivisionByZeroExpression("division by identically-zero expression")
        return self._wrap(o / self.frac)

    def __pow__(self, exponent: int):
        if not isinstance(exponent, int):
            raise TypeError("exponent must be an integer")
        if exponent < 0 and self.is_zero:
            raise DivisionByZeroExpression("negative power of zero expression")
        return self._wrap(self.frac ** exponent)

    def __neg__(self):
        return self._wrap(-self.frac)

    def __pos__(self):
        return self

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            return (self - other).is_zero
        if not isinstance(other, Expression):
            return NotImplemented
        if self.chart != other.chart:
            return False
        return (self - other).is_zero

    def __hash__(self):
        f = self.frac
        return hash((self.chart, tuple(sorted(f.numer.terms())), tuple(sorted(f.denom.terms()))))

    def __bool__(self):
        return not self.is_zero

    def __repr__(self):
        return f"Expression({self.to_string()!r})"

    def __str__(self):
        return self.to_string()

    # -- calculus -----------------------------------------------------------

    def differentiate(self, coord: Union[int, str]) -> "Expression":
        """Exact partial derivative along a chart coordinate.

        Formal symbols follow the chain rule: d/dz of f(z) is f'(z), unless f
        carries a derivative rule, in which case the rule is substituted.
        """
        chart = self.chart
        ctx = chart.ctx
        if isinstance(coord, str):
            coord = chart.coordinate_index(coord)
        cname = chart.coordinate_names[coord]

        frac = self.frac
        # collect function generators that actually occur and need extension
        active: list[_Gen] = []
        for g in ctx.gens:
            if g.kind == 1:
                fs = next(f for f in chart.function_symbols if f.name == g.name)
                if fs.arg != cname:
                    continue
                pos = ctx.gen_position(g)
                if _occurs(frac, pos):
                    active.append(g)
        for g in active:
            if ctx.rule(g.name) is None:
                ctx.ensure_order(g.name, g.order + 1)

        frac = self.frac  # re-fetch after any extension
        result = frac.diff(ctx.frac_gen(_Gen(0, cname, 0)))
        for g in active:
            partial = frac.diff(ctx.frac_gen(g))
            if not partial.numer:
                continue
            rule = ctx.rule(g.name)
            if rule is None:
                dgen = ctx.frac_gen(_Gen(1, g.name, g.order + 1))
                result += partial * dgen
            else:
                # ruled symbols only ever exist at order 0
                result += partial * rule.frac
        return Expression(chart, result, ctx.version)

    def evaluate(
        self,
        point: Sequence[float],
        impls: Optional[Mapping[str, Callable[[float, int], float]]] = None,
    ) -> float:
        """IEEE-double value at a coordinate point, exact rational internally.

        Coordinates and implementation outputs are converted to exact dyadic
        rationals, the canonical fraction is evaluated in exact arithmetic
        and the final quotient rounded once.  ``impls`` maps function names
        to callables ``(argument_value, derivative_order) -> float``.
        """
        chart = self.chart
        ctx = chart.ctx
        if len(point) != chart.dimension:
            raise EvaluationError("point dimension mismatch")
        frac = self.frac
        values = []
        for g in ctx.gens:
            pos = ctx.gen_position(g)
            if not (_occurs(frac.numer, pos, poly=True) or _occurs(frac.denom, pos, poly=True)):
                values.append(QQ(0))
                continue
            if g.kind == 0:
                x = Fraction(point[chart.coordinate_index(g.name)])
            else:
                if impls is None or g.name not in impls:
                    raise MissingImplementationError(f"no numeric implementation for {g.display}")
                fs = next(f for f in chart.function_symbols if f.name == g.name)
                argv = float(point[chart.coordinate_index(fs.arg)])
                x = Fraction(impls[g.name](argv, g.order))
            values.append(QQ(x.numerator, x.denominator))
        pairs = list(zip(ctx.field.ring.gens, values))
        num = frac.numer.evaluate(pairs) if not frac.numer.is_ground else frac.numer.coeff(1)
        den = frac.denom.evaluate(pairs) if not frac.denom.is_ground else frac.denom.coeff(1)
        num, den = QQ(num), QQ(den)
        if not den:
            raise PoleError("denominator vanishes at evaluation point")
        q = num / den
        return int(q.numerator) / int(q.denominator)

    def function_orders(self) -> dict[str, int]:
        """Highest derivative order of each function symbol occurring here."""
        ctx = self.chart.ctx
        frac = self.frac
        out: dict[str, int] = {}
        for g in ctx.gens:
            if g.kind == 1 and _occurs(frac, ctx.gen_position(g)):
                out[g.name] = max(out.get(g.name, -1), g.order)
        return out

    def depends_on_coordinate(self, coord: int) -> bool:
        """True if the expression involves the coordinate itself or any
        function symbol whose argument is that coordinate."""
        chart = self.chart
        ctx = chart.ctx
        cname = chart.coordinate_names[coord]
        frac = self.frac
        for g in ctx.gens:
            if g.kind == 0 and g.name != cname:
                continue
            if g.kind == 1:
                fs = next(f for f in chart.function_symbols if f.name == g.name)
                if fs.arg != cname:
                    continue
            if _occurs(frac, ctx.gen_position(g)):
                return True
        return False

    def used_generator_positions(self) -> list[int]:
        frac = self.frac
        return [i for i in range(len(self.chart.ctx.gens)) if _occurs(frac, i)]

    # -- output ---------------------------------------------------------------

    def to_string(self) -> str:
        """Canonical string in the input grammar (re-parses to itself)."""
        f = self.frac
        num = _poly_to_string(f.numer, self.chart)
        if f.denom.is_ground and QQ(f.denom.coeff(1)) == QQ(1):
            return num
        den = _poly_to_string(f.denom, self.chart)
        num_s = num if _is_atomic(num) else f"({num})"
        den_s = den if _is_atomic_factor(den) else f"({den})"
        return f"{num_s}/{den_s}"

    def substitute_coordinates(self, replacements: Mapping[int, "Expression"]) -> "Expression":
        """Substitute expressions for coordinate generators (0-based index)."""
        chart = self.chart
        ctx = chart.ctx
        frac = self.frac
        table: dict[int, Expression] = {}
        for i, gen in enumerate(ctx.gens):
            if gen.kind == 0:
                ci = chart.coordinate_index(gen.name)
                if ci in replacements:
                    table[i] = replacements[ci]

        def apply(poly) -> Expression:
            out = chart.zero()
            for monom, coeff in poly.terms():
                term = chart.constant(Fraction(int(QQ(coeff).numerator), int(QQ(coeff).denominator)))
                for i, e in enumerate(monom):
                    if not e:
                        continue
                    base = table.get(i)
                    if base is None:
                        base = Expression(chart, ctx.field.gens[i], ctx.version)
                    term = term * base ** e
                out = out + term
            return out

        num = apply(frac.numer)
        den = apply(frac.denom)
        return num / den


def _occurs(obj, pos: int, poly: bool = False) -> bool:
    if poly:
        return any(m[pos] for m, _ in obj.terms())
    return any(m[pos] for m, _ in obj.numer.terms()) or any(m[pos] for m, _ in obj.denom.terms())


def _is_atomic(s: str) -> bool:
    return bool(re.fullmatch(r"-?[A-Za-z_0-9']+(\^[0-9]+)?", s))


def _is_atomic_factor(s: str) -> bool:
    return bool(re.fullmatch(r"[A-Za-z_0-9']+(\^[0-9]+)?", s))


def _poly_to_string(poly, chart: Chart) -> str:
    if poly.is_ground:
        if not poly:
            return "0"
        return _rat_to_string(QQ(poly.coeff(1)))
    ctx = chart.ctx
    names = [g.display for g in ctx.gens]
    parts: list[str] = []
    for monom, coeff in sorted(poly.terms(), reverse=True):
        q = QQ(coeff)
        factors = []
        for i, e in enumerate(monom):
            if e == 1:
                factors.append(names[i])
            elif e > 1:
                factors.append(f"{names[i]}^{e}")
        mag = q if q > 0 else -q
        if not factors:
            body = _rat_to_string(mag)
        elif mag == QQ(1):
            body = "*".join(factors)
        else:
            body = "*".join([_rat_to_string(mag)] + factors)
        if not parts:
            parts.append(body if q > 0 else f"-{body}")
        else:
            parts.append(f" + {body}" if q > 0 else f" - {body}")
    return "".join(parts)


def _rat_to_string(q) -> str:
    n, d = int(q.numerator), int(q.denominator)
    if d == 1:
        return str(n)
    if n < 0:
        return f"(-{-n}/{d})" if False else f"-{-n}/{d}"
    return f"{n}/{d}"


# ---------------------------------------------------------------------------
# Fast accumulation: sums of products with one final cancellation.
# ---------------------------------------------------------------------------


def dot_sum(pairs, chart: Chart) -> Expression:
    """Exact sum of products of expressions, canonicalising once at the end.

    ``pairs`` holds tuples of Expressions (any length >= 1) to be multiplied.
    Intermediate arithmetic stays on raw numerators/denominators grouped by
    equal denominator, which avoids a gcd per operation; the dominant use is
    tensor contractions whose entries share powers of one denominator.
    """
    ctx = chart.ctx
    groups: list[list] = []  # [denominator poly, numerator poly]
    for factors in pairs:
        num = None
        den = None
        skip = False
        for f in factors:
            fr = f.frac if isinstance(f, Expression) else None
            if fr is None:
                raise TypeError("dot_sum expects Expression factors")
            if not fr.numer:
                skip = True
                break
            num = fr.numer if num is None else num * fr.numer
            if not fr.denom.is_ground:
                den = fr.denom if den is None else den * fr.denom
            elif den is None:
                den = fr.denom
            else:
                c = fr.denom.coeff(1)
                if QQ(c) != QQ(1):
                    den = den * fr.denom
        if skip or num is None:
            continue
        if den is None:
            den = ctx.field.ring.one
        for g in groups:
            if g[0] == den:
                g[1] = g[1] + num
                break
        else:
            groups.append([den, num])
    groups = [g for g in groups if g[1]]
    if not groups:
        return chart.zero()
    den, num = groups[0]
    for d2, n2 in groups[1:]:
        q, r = den.div(d2)
        if not r:
            num = num + n2 * q
            continue
        q, r = d2.div(den)
        if not r:
            num = num * q + n2
            den = d2
            continue
        num = num * d2 + n2 * den
        den = den * d2
    field = ctx.field
    result = field.raw_new(num, field.ring.one) / field.raw_new(den, field.ring.one)
    return Expression(chart, result, ctx.version)


def common_denominator_parts(exprs: Sequence[Expression], chart: Chart):
    """Numerator polynomials of the expressions over one shared denominator,
    or None when the denominators are not nested by divisibility."""
    fracs = [e.frac for e in exprs]
    best = None
    for f in fracs:
        d = f.denom
        deg = max((sum(m) for m in d.monoms()), default=0)
        if best is None or deg > best[1]:
            best = (d, deg)
    if best is None:
        return None
    D = best[0]
    numers = []
    for f in fracs:
        if f.denom == D:
            numers.append(f.numer)
            continue
        q, r = D.div(f.denom)
        if r:
            return None
        numers.append(f.numer * q)
    return numers, D


# ---------------------------------------------------------------------------
# Parser: integers, rationals p/q, coordinates, registered function symbols
# (argument implicit), derivative ticks, + - * / ^ with integer exponents,
# parentheses.  Whitespace is insignificant.
# ---------------------------------------------------------------------------


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self) -> tuple[str, str, int]:
        pos = self.pos
        text = self.text
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            return ("end", "", pos)
        ch = text[pos]
        if ch.isdigit():
            m = re.match(r"[0-9]+", text[pos:])
            return ("int", m.group(0), pos)
        if ch.isalpha() or ch == "_":
            m = _IDENT_RE.match(text, pos)
            end = m.end()
            while end < len(text) and text[end] == "'":
                end += 1
            return ("ident", text[pos:end], pos)
        if ch in "+-*/^()":
            return (ch, ch, pos)
        raise ParseError(f"unexpected character {ch!r}", pos)

    def next(self) -> tuple[str, str, int]:
        kind, value, pos = self.peek()
        if kind != "end":
            self.pos = pos + len(value)
        return kind, value, pos


def parse_expression(text: str, chart: Chart) -> Expression:
    """Parse a string in the expression grammar over a chart."""
    tz = _Tokenizer(text)
    expr = _parse_sum(tz, chart)
    kind, value, pos = tz.peek()
    if kind != "end":
        raise ParseError(f"unexpected trailing input {value!r}", pos)
    return expr


def _parse_sum(tz: _Tokenizer, chart: Chart) -> Expression:
    left = _parse_term(tz, chart)
    while True:
        kind, _, _ = tz.peek()
        if kind == "+":
            tz.next()
            left = left + _parse_term(tz, chart)
        elif kind == "-":
            tz.next()
            left = left - _parse_term(tz, chart)
        else:
            return left


def _parse_term(tz: _Tokenizer, chart: Chart) -> Expression:
    left = _parse_unary(tz, chart)
    while True:
        kind, _, pos = tz.peek()
        if kind == "*":
            tz.next()
            left = left * _parse_unary(tz, chart)
        elif kind == "/":
            tz.next()
            right = _parse_unary(tz, chart)
            if right.is_zero:
                raise DivisionByZeroExpression(
                    f"division by identically-zero expression (at position {pos})"
                )
            left = left / right
        else:
            return left


def _parse_unary(tz: _Tokenizer, chart: Chart) -> Expression:
    kind, _, _ = tz.peek()
    if kind == "-":
        tz.next()
        return -_parse_unary(tz, chart)
    if kind == "+":
        tz.next()
        return _parse_unary(tz, chart)
    return _parse_power(tz, chart)


def _parse_power(tz: _Tokenizer, chart: Chart) -> Expression:
    base = _parse_atom(tz, chart)
    kind, _, _ = tz.peek()
    if kind != "^":
        return base
    tz.next()
    sign = 1
    kind, value, pos = tz.next()
    if kind == "-":
        sign = -1
        kind, value, pos = tz.next()
    if kind != "int":
        raise ParseError("exponent must be an integer", pos)
    exponent = sign * int(value)
    if exponent < 0 and base.is_zero:
        raise DivisionByZeroExpression("negative power of zero expression")
    return base ** exponent


def _parse_atom(tz: _Tokenizer, chart: Chart) -> Expression:
    kind, value, pos = tz.next()
    if kind == "int":
        return chart.constant(int(value))
    if kind == "(":
        inner = _parse_sum(tz, chart)
        kind, _, pos2 = tz.next()
        if kind != ")":
            raise ParseError("expected ')'", pos2)
        return inner
    if kind == "ident":
        name, order = _split_ticks(value)
        if order == 0 and name in chart.coordinate_names:
            return chart.coordinate(chart.coordinate_index(name))
        if any(f.name == name for f in chart.function_symbols):
            return chart.function(name, order)
        raise UnknownIdentifierError(f"unknown identifier {name!r}", pos)
    raise ParseError(f"unexpected token {value!r}", pos)


# ---------------------------------------------------------------------------
# Numeric compilation: expressions -> fast float callables.
# ---------------------------------------------------------------------------


def generator_values(
    chart: Chart,
    point: Sequence[float],
    impls: Optional[Mapping[str, Callable[[float, int], float]]] = None,
) -> list[float]:
    """Float values of every live generator of the chart at a point."""
    ctx = chart.ctx
    vals: list[float] = []
    for g in ctx.gens:
        if g.kind == 0:
            vals.append(float(point[chart.coordinate_index(g.name)]))
        else:
            if impls is None or g.name not in impls:
                raise MissingImplementationError(f"no numeric implementation for {g.display}")
            fs = next(f for f in chart.function_symbols if f.name == g.name)
            vals.append(float(impls[g.name](float(point[chart.coordinate_index(fs.arg)]), g.order)))
    return vals


def compile_expressions(exprs: Iterable[Expression], chart: Chart) -> Callable:
    """Compile expressions into one callable ``f(genvals) -> list[float]``.

    ``genvals`` must come from :func:`generator_values` against the same
    context version; compile after all symbolic work is finished.
    """
    exprs = list(exprs)
    ctx = chart.ctx
    lines = ["def _compiled(v):", "    return ["]
    for e in exprs:
        frac = e.frac if isinstance(e, Expression) else None
        if frac is None:
            raise TypeError("compile_expressions expects Expressions")
        num = _poly_source(frac.numer)
        if frac.denom.is_ground and QQ(frac.denom.coeff(1)) == QQ(1):
            lines.append(f"        ({num}),")
        else:
            den = _poly_source(frac.denom)
            lines.append(f"        ({num}) / ({den}),")
    lines.append("    ]")
    namespace: dict = {}
    exec("\n".join(lines), namespace)  # noqa: S102 - generated from trusted terms
    return namespace["_compiled"]


def _poly_source(poly) -> str:
    if poly.is_ground:
        q = QQ(poly.coeff(1)) if poly else QQ(0)
        return repr(int(q.numerator) / int(q.denominator))
    parts = []
    for monom, coeff in poly.terms():
        q = QQ(coeff)
        factors = [repr(int(q.numerator) / int(q.denominator))]
        for i, e in enumerate(monom):
            if e == 1:
                factors.append(f"v[{i}]")
            elif e > 1:
                factors.append(f"v[{i}]**{e}")
        parts.append("*".join(factors))
    return " + ".join(parts)
