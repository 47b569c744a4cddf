"""polyalg.py – Sparse multivariate polynomials over named variables.

Every other module builds on the three value types defined here:

* ``VarId``      – a variable: time ``t``, state ``x1..xn``, uncertain
  parameter ``w1..wm`` or tube offset ``z1..zn``.
* ``Monomial``   – a product of variable powers, stored as sorted
  ``(VarId, power)`` pairs with no zero powers.
* ``Polynomial`` – an immutable map ``Monomial -> float`` in canonical form.

Canonical form drops every coefficient whose magnitude is below
``CANON_RTOL`` times the largest coefficient, and keeps the remaining terms in
graded-lexicographic order, so equal polynomials have identical term maps and
print identically.

Text format (parser and printer)::

    -0.12 + x1^2 + x2^2
    (x1 - 1.8*t + 1 - 0.2*w2)^2 + (x2 - 0.5)^2 - w1^2

The parser accepts parentheses and integer powers of sub-expressions; the
printer emits the expanded sum of terms, which parses back bit-identically.
"""
from __future__ import annotations

import math
import re
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass
from enum import IntEnum
from types import MappingProxyType
from typing import NamedTuple, Union

import numpy as np

__all__ = [
    "CANON_RTOL",
    "PolynomialError",
    "VarKind",
    "VarId",
    "TIME",
    "state",
    "uncertain",
    "offset",
    "Monomial",
    "Polynomial",
    "PolyTrajectory",
    "add",
    "mul",
    "substitute",
    "evaluate",
    "evaluate_batch",
    "univariate_coeffs",
    "parse_polynomial",
    "format_polynomial",
]

CANON_RTOL = 1e-12


class PolynomialError(ValueError):
    """Malformed polynomial text, unbound variable, or wrong arity."""


# ---------------------------------------------------------------------------
# Variables
# ---------------------------------------------------------------------------

class VarKind(IntEnum):
    TIME = 0
    STATE = 1
    UNCERTAIN = 2
    OFFSET = 3


_PREFIX = {VarKind.STATE: "x", VarKind.UNCERTAIN: "w", VarKind.OFFSET: "z"}
_KIND_OF_PREFIX = {prefix: kind for kind, prefix in _PREFIX.items()}
_NAME_RE = re.compile(r"^(?:(t)|([xwz])([1-9]\d*))$")


class VarId(NamedTuple):
    """Variable identity; tuple order is Time < State(0) < … < Uncertain(0) < … < Offset(0)."""

    kind: VarKind
    index: int = 0

    @property
    def name(self) -> str:
        if self.kind is VarKind.TIME:
            return "t"
        return f"{_PREFIX[self.kind]}{self.index + 1}"

    @classmethod
    def parse(cls, name: str) -> VarId:
        match = _NAME_RE.match(name)
        if match is None:
            raise PolynomialError(f"unknown variable name {name!r} (expected t, x<i>, w<i> or z<i>)")
        if match.group(1):
            return TIME
        return cls(_KIND_OF_PREFIX[match.group(2)], int(match.group(3)) - 1)

    def __str__(self) -> str:
        return self.name


TIME = VarId(VarKind.TIME, 0)


def state(i: int) -> VarId:
    return VarId(VarKind.STATE, i)


def uncertain(i: int) -> VarId:
    return VarId(VarKind.UNCERTAIN, i)


def offset(i: int) -> VarId:
    return VarId(VarKind.OFFSET, i)


# ---------------------------------------------------------------------------
# Monomials
# ---------------------------------------------------------------------------

class Monomial(tuple):
    """Product of variable powers as sorted ``(VarId, power)`` pairs."""

    __slots__ = ()

    def __new__(cls, powers: Mapping[VarId, int] | Iterable[tuple[VarId, int]] = ()) -> Monomial:
        items = powers.items() if isinstance(powers, Mapping) else powers
        merged: dict[VarId, int] = {}
        for raw, exp in items:
            var = VarId(VarKind(raw[0]), int(raw[1]))
            if int(exp) != exp or exp < 0:
                raise PolynomialError(f"invalid power {exp!r} for {var.name}")
            merged[var] = merged.get(var, 0) + int(exp)
        return tuple.__new__(cls, tuple(sorted((v, e) for v, e in merged.items() if e)))

    @classmethod
    def _from_sorted(cls, pairs: tuple[tuple[VarId, int], ...]) -> Monomial:
        return tuple.__new__(cls, pairs)

    @classmethod
    def of(cls, var: VarId, power: int = 1) -> Monomial:
        return cls._from_sorted(((var, power),) if power else ())

    @property
    def degree(self) -> int:
        return sum(e for _, e in self)

    @property
    def variables(self) -> tuple[VarId, ...]:
        return tuple(v for v, _ in self)

    def power(self, var: VarId) -> int:
        for v, e in self:
            if v == var:
                return e
        return 0

    def degree_in(self, kinds: Iterable[VarKind]) -> int:
        wanted = set(kinds)
        return sum(e for v, e in self if v.kind in wanted)

    def split(self, kinds: Iterable[VarKind]) -> tuple[Monomial, Monomial]:
        """Return ``(part without kinds, part with kinds)``."""
        wanted = set(kinds)
        kept = tuple((v, e) for v, e in self if v.kind not in wanted)
        taken = tuple((v, e) for v, e in self if v.kind in wanted)
        return Monomial._from_sorted(kept), Monomial._from_sorted(taken)

    def sort_key(self) -> tuple:
        # graded order; within a degree the earlier variable with the larger power comes first
        return (self.degree, tuple((v, -e) for v, e in self))

    def __mul__(self, other: Monomial) -> Monomial:  # type: ignore[override]
        if not other:
            return self
        if not self:
            return other
        merged = dict(self)
        for var, exp in other:
            merged[var] = merged.get(var, 0) + exp
        return Monomial._from_sorted(tuple(sorted(merged.items())))

    __rmul__ = __mul__

    def __str__(self) -> str:
        if not self:
            return "1"
        return "*".join(v.name if e == 1 else f"{v.name}^{e}" for v, e in self)

    def __repr__(self) -> str:
        return f"Monomial({self})"


ONE = Monomial()

Scalar = Union[int, float]


def _canonicalize(terms: Mapping[Monomial, float]) -> dict[Monomial, float]:
    if not terms:
        return {}
    for mono, coef in terms.items():
        if not math.isfinite(coef):
            raise PolynomialError(f"non-finite coefficient {coef!r} on {mono}")
    scale = max(abs(c) for c in terms.values())
    if scale == 0.0:
        return {}
    floor = CANON_RTOL * scale
    kept = [(m, float(c)) for m, c in terms.items() if c != 0.0 and abs(c) >= floor]
    kept.sort(key=lambda mc: mc[0].sort_key())
    return dict(kept)


# ---------------------------------------------------------------------------
# Polynomials
# ---------------------------------------------------------------------------

class Polynomial:
    """Immutable sparse polynomial with float coefficients in canonical form."""

    __slots__ = ("_terms", "_degree", "_hash")

    def __init__(self, terms: Mapping[Monomial, float] | None = None):
        canonical = _canonicalize(terms or {})
        self._terms = MappingProxyType(canonical)
        self._degree = max((m.degree for m in canonical), default=0)
        self._hash: int | None = None

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------

    @classmethod
    def constant(cls, value: Scalar) -> Polynomial:
        return cls({ONE: float(value)})

    @classmethod
    def variable(cls, var: VarId) -> Polynomial:
        return cls({Monomial.of(var): 1.0})

    @classmethod
    def parse(cls, text: str) -> Polynomial:
        return parse_polynomial(text)

    # ------------------------------------------------------------------
    # Inspection
    # ------------------------------------------------------------------

    @property
    def terms(self) -> Mapping[Monomial, float]:
        return self._terms

    @property
    def degree(self) -> int:
        return self._degree

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(not m for m in self._terms)

    def variables(self) -> tuple[VarId, ...]:
        found: set[VarId] = set()
        for mono in self._terms:
            found.update(mono.variables)
        return tuple(sorted(found))

    def mentions(self, kind: VarKind) -> bool:
        return any(v.kind is kind for mono in self._terms for v in mono.variables)

    def degree_in(self, kinds: Iterable[VarKind]) -> int:
        kinds = tuple(kinds)
        return max((m.degree_in(kinds) for m in self._terms), default=0)

    def coefficient(self, mono: Monomial) -> float:
        return self._terms.get(mono, 0.0)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # ------------------------------------------------------------------
    # Arithmetic
    # ------------------------------------------------------------------

    def __add__(self, other: Polynomial | Scalar) -> Polynomial:
        other = _coerce(other)
        acc = dict(self._terms)
        for mono, coef in other._terms.items():
            acc[mono] = acc.get(mono, 0.0) + coef
        return Polynomial(acc)

    __radd__ = __add__

    def __neg__(self) -> Polynomial:
        return Polynomial({m: -c for m, c in self._terms.items()})

    def __sub__(self, other: Polynomial | Scalar) -> Polynomial:
        return self + (-_coerce(other))

    def __rsub__(self, other: Polynomial | Scalar) -> Polynomial:
        return _coerce(other) + (-self)

    def __mul__(self, other: Polynomial | Scalar) -> Polynomial:
        other = _coerce(other)
        acc: dict[Monomial, float] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                mono = m1 * m2
                acc[mono] = acc.get(mono, 0.0) + c1 * c2
        return Polynomial(acc)

    __rmul__ = __mul__

    def __pow__(self, power: int) -> Polynomial:
        if not isinstance(power, int) or power < 0:
            raise PolynomialError(f"polynomial powers must be nonnegative integers, got {power!r}")
        result = Polynomial.constant(1.0)
        base = self
        while power:
            if power & 1:
                result = result * base
            power >>= 1
            if power:
                base = base * base
        return result

    def scale(self, factor: float) -> Polynomial:
        return Polynomial({m: c * factor for m, c in self._terms.items()})

    # ------------------------------------------------------------------
    # Evaluation / composition
    # ------------------------------------------------------------------

    def evaluate(self, point: Mapping[VarId, float]) -> float:
        for var in self.variables():
            if var not in point:
                raise PolynomialError(f"unbound variable {var.name}")
        total = 0.0
        for mono, coef in self._terms.items():
            value = coef
            for var, exp in mono:
                value *= point[var] ** exp
            total += value
        return float(total)

    def substitute(self, bindings: Mapping[VarId, Polynomial | Scalar]) -> Polynomial:
        if not bindings:
            return self
        subs = {var: _coerce(p) for var, p in bindings.items()}
        powers: dict[tuple[VarId, int], Polynomial] = {}

        def _power(var: VarId, exp: int) -> Polynomial:
            key = (var, exp)
            if key not in powers:
                powers[key] = subs[var] if exp == 1 else _power(var, exp - 1) * subs[var]
            return powers[key]

        acc: dict[Monomial, float] = {}
        for mono, coef in self._terms.items():
            kept: list[tuple[VarId, int]] = []
            factor: Polynomial | None = None
            for var, exp in mono:
                if var in subs:
                    piece = _power(var, exp)
                    factor = piece if factor is None else factor * piece
                else:
                    kept.append((var, exp))
            base = Monomial._from_sorted(tuple(kept))
            if factor is None:
                acc[base] = acc.get(base, 0.0) + coef
                continue
            for m, c in factor._terms.items():
                mono_out = base * m
                acc[mono_out] = acc.get(mono_out, 0.0) + coef * c
        return Polynomial(acc)

    # ------------------------------------------------------------------
    # Dunder plumbing
    # ------------------------------------------------------------------

    def __eq__(self, other: object) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return dict(self._terms) == dict(other._terms)

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def __iter__(self) -> Iterator[tuple[Monomial, float]]:
        return iter(self._terms.items())

    def __len__(self) -> int:
        return len(self._terms)

    def __str__(self) -> str:
        return format_polynomial(self)

    def __repr__(self) -> str:
        return f"Polynomial({format_polynomial(self)!r})"


def _coerce(value: Polynomial | Scalar) -> Polynomial:
    if isinstance(value, Polynomial):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Polynomial.constant(float(value))
    raise TypeError(f"cannot use {type(value).__name__} as a polynomial")


# ---------------------------------------------------------------------------
# Functional API
# ---------------------------------------------------------------------------

def add(a: Polynomial, b: Polynomial) -> Polynomial:
    return a + b


def mul(a: Polynomial, b: Polynomial) -> Polynomial:
    return a * b


def substitute(p: Polynomial, bindings: Mapping[VarId, Polynomial | Scalar]) -> Polynomial:
    return p.substitute(bindings)


def evaluate(p: Polynomial, point: Mapping[VarId, float]) -> float:
    return p.evaluate(point)


def univariate_coeffs(p: Polynomial) -> np.ndarray:
    """Dense ascending-degree coefficients of a polynomial in at most one variable."""
    variables = p.variables()
    if len(variables) > 1:
        names = ", ".join(v.name for v in variables)
        raise PolynomialError(f"expected a univariate polynomial, found variables {names}")
    coeffs = np.zeros(p.degree + 1)
    for mono, coef in p:
        coeffs[mono.degree] = coef
    return coeffs


def evaluate_batch(p: Polynomial, variables: Sequence[VarId], points: np.ndarray) -> np.ndarray:
    """Evaluate *p* at each row of *points*; column j holds ``variables[j]``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, len(variables)) if variables else pts.reshape(-1, 0)
    if pts.shape[1] != len(variables):
        raise PolynomialError(f"points have {pts.shape[1]} columns for {len(variables)} variables")
    column = {var: j for j, var in enumerate(variables)}
    missing = [v.name for v in p.variables() if v not in column]
    if missing:
        raise PolynomialError(f"unbound variable {missing[0]}")

    out = np.zeros(pts.shape[0])
    cache: dict[tuple[int, int], np.ndarray] = {}
    for mono, coef in p:
        term = np.full(pts.shape[0], coef)
        for var, exp in mono:
            key = (column[var], exp)
            if key not in cache:
                cache[key] = pts[:, key[0]] ** exp
            term = term * cache[key]
        out += term
    return out


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>\*\*|[-+*^()]))"
)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        stripped = text.rstrip()
        while pos < len(stripped):
            match = _TOKEN_RE.match(stripped, pos)
            if match is None or match.end() == pos:
                bad = len(stripped) - len(stripped[pos:].lstrip())
                raise PolynomialError(f"unexpected character {stripped[bad]!r} at column {bad + 1} in {text!r}")
            kind = match.lastgroup or "op"
            value = match.group(kind)
            self.tokens.append((kind, "^" if value == "**" else value, match.start(kind)))
            pos = match.end()
        self.i = 0

    def _peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def _fail(self, what: str) -> PolynomialError:
        tok = self._peek()
        where = f"column {tok[2] + 1}" if tok else "end of input"
        return PolynomialError(f"{what} at {where} in {self.text!r}")

    def _accept(self, op: str) -> bool:
        tok = self._peek()
        if tok and tok[0] == "op" and tok[1] == op:
            self.i += 1
            return True
        return False

    def parse(self) -> Polynomial:
        if not self.tokens:
            raise PolynomialError("empty polynomial text")
        poly = self._expr()
        if self._peek() is not None:
            raise self._fail("unexpected token")
        return poly

    def _expr(self) -> Polynomial:
        poly = self._term()
        while True:
            if self._accept("+"):
                poly = poly + self._term()
            elif self._accept("-"):
                poly = poly - self._term()
            else:
                return poly

    def _term(self) -> Polynomial:
        poly = self._unary()
        while self._accept("*"):
            poly = poly * self._unary()
        return poly

    def _unary(self) -> Polynomial:
        if self._accept("-"):
            return -self._unary()
        if self._accept("+"):
            return self._unary()
        return self._power()

    def _power(self) -> Polynomial:
        base = self._atom()
        if self._accept("^"):
            tok = self._peek()
            if tok is None or tok[0] != "num" or not tok[1].isdigit():
                raise self._fail("expected a nonnegative integer exponent")
            self.i += 1
            return base ** int(tok[1])
        return base

    def _atom(self) -> Polynomial:
        tok = self._peek()
        if tok is None:
            raise self._fail("unexpected end of input")
        kind, value, column = tok
        if kind == "num":
            self.i += 1
            return Polynomial.constant(float(value))
        if kind == "name":
            self.i += 1
            try:
                return Polynomial.variable(VarId.parse(value))
            except PolynomialError as exc:
                raise PolynomialError(f"{exc} at column {column + 1} in {self.text!r}") from None
        if self._accept("("):
            inner = self._expr()
            if not self._accept(")"):
                raise self._fail("expected ')'")
            return inner
        raise self._fail(f"unexpected token {value!r}")


def parse_polynomial(text: str) -> Polynomial:
    """Parse polynomial text (see module docstring) into canonical form."""
    return _Parser(text).parse()


def format_polynomial(p: Polynomial) -> str:
    """Canonical text: graded-lex ascending terms, shortest round-trip floats."""
    if p.is_zero():
        return "0"
    parts: list[str] = []
    for mono, coef in p:
        magnitude = abs(coef)
        if not mono:
            text = repr(magnitude)
        elif magnitude == 1.0:
            text = str(mono)
        else:
            text = f"{magnitude!r}*{mono}"
        if not parts:
            parts.append(f"-{text}" if coef < 0 else text)
        else:
            parts.append(f" {'-' if coef < 0 else '+'} {text}")
    return "".join(parts)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolyTrajectory:
    """Continuous-time state trajectory: one polynomial in ``t`` per state."""

    components: tuple[Polynomial, ...]
    horizon: tuple[float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))
        t0, tf = (float(v) for v in self.horizon)
        object.__setattr__(self, "horizon", (t0, tf))
        if not (math.isfinite(t0) and math.isfinite(tf)):
            raise PolynomialError(f"trajectory horizon must be finite, got {self.horizon}")
        if not t0 < tf:
            raise PolynomialError(f"trajectory horizon needs t0 < tf, got {self.horizon}")
        if not self.components:
            raise PolynomialError("trajectory needs at least one component")
        for i, comp in enumerate(self.components):
            stray = [v.name for v in comp.variables() if v != TIME]
            if stray:
                raise PolynomialError(f"trajectory component x{i + 1} mentions {', '.join(stray)}; only t is allowed")

    @property
    def n_x(self) -> int:
        return len(self.components)

    @property
    def degree(self) -> int:
        return max(c.degree for c in self.components)

    def bindings(self, *, with_offsets: bool = False) -> dict[VarId, Polynomial]:
        """``x_i <- P_i(t)`` (plus ``z_i`` when *with_offsets*) for substitution."""
        out: dict[VarId, Polynomial] = {}
        for i, comp in enumerate(self.components):
            out[state(i)] = comp + Polynomial.variable(offset(i)) if with_offsets else comp
        return out

    def sample(self, times: Sequence[float] | np.ndarray) -> np.ndarray:
        """State positions, shape ``(len(times), n_x)``."""
        ts = np.asarray(times, dtype=float).reshape(-1, 1)
        return np.column_stack([evaluate_batch(c, (TIME,), ts) for c in self.components]) if len(ts) else np.zeros((0, self.n_x))

    def at(self, t: float) -> np.ndarray:
        return self.sample([t])[0]
