"""uncertainty.py – Distributions of uncertain parameters and the expectation operator.

Each uncertain parameter ``w_j`` of a constraint has one marginal
distribution; components are independent, so the expectation of a monomial
factors into a product of raw moments ``E[w_j^k]``.  ``apply_expectation``
uses that to turn a polynomial in ``(x, t, w)`` into one in ``(x, t)``.
"""
from __future__ import annotations

import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Union

from .polyalg import Polynomial, VarId, VarKind

__all__ = [
    "MomentError",
    "Uniform",
    "Gaussian",
    "Beta",
    "MomentList",
    "Distribution",
    "UncertaintyModel",
    "raw_moment",
    "apply_expectation",
    "parse_distribution",
]


class MomentError(ValueError):
    """Missing distribution, unavailable moment order, or invalid parameters."""


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise MomentError(f"{name} must be finite, got {value!r}")
    return value


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Uniform:
    lower: float
    upper: float

    def __post_init__(self) -> None:
        lo, hi = _finite("uniform lower", self.lower), _finite("uniform upper", self.upper)
        if not lo < hi:
            raise MomentError(f"uniform needs lower < upper, got [{lo}, {hi}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def raw_moment(self, k: int) -> float:
        lo, hi = self.lower, self.upper
        return (hi ** (k + 1) - lo ** (k + 1)) / ((hi - lo) * (k + 1))

    def to_dict(self) -> dict[str, Any]:
        return {"type": "uniform", "lower": self.lower, "upper": self.upper}


@dataclass(frozen=True)
class Gaussian:
    """Normal distribution; the second parameter is the *variance*."""

    mean: float
    variance: float

    def __post_init__(self) -> None:
        mu, var = _finite("gaussian mean", self.mean), _finite("gaussian variance", self.variance)
        if not var > 0:
            raise MomentError(f"gaussian variance must be positive, got {var}")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "variance", var)

    def raw_moment(self, k: int) -> float:
        # E[w^k] = mu E[w^(k-1)] + (k-1) v E[w^(k-2)]
        prev, cur = 0.0, 1.0
        for j in range(1, k + 1):
            prev, cur = cur, self.mean * cur + (j - 1) * self.variance * prev
        return cur

    def to_dict(self) -> dict[str, Any]:
        return {"type": "gaussian", "mean": self.mean, "variance": self.variance}


@dataclass(frozen=True)
class Beta:
    """Beta(alpha, beta) on [0, 1]."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        a, b = _finite("beta alpha", self.alpha), _finite("beta beta", self.beta)
        if not (a > 0 and b > 0):
            raise MomentError(f"beta parameters must be positive, got alpha={a}, beta={b}")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    def raw_moment(self, k: int) -> float:
        value = 1.0
        for r in range(k):
            value *= (self.alpha + r) / (self.alpha + self.beta + r)
        return value

    def to_dict(self) -> dict[str, Any]:
        return {"type": "beta", "alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class MomentList:
    """Raw moments ``m_0 .. m_K`` given directly; no density, so not samplable."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        values = tuple(_finite(f"moment m{k}", v) for k, v in enumerate(self.values))
        if not values:
            raise MomentError("moment list must contain at least m0 = 1")
        if abs(values[0] - 1.0) > 1e-12:
            raise MomentError(f"moment list must start with m0 = 1, got {values[0]}")
        object.__setattr__(self, "values", values)

    @property
    def max_order(self) -> int:
        return len(self.values) - 1

    def raw_moment(self, k: int) -> float:
        if k > self.max_order:
            raise MomentError(
                f"moment of order {k} requested but only orders up to {self.max_order} were given; "
                f"supply raw moments up to order {k}"
            )
        return self.values[k]

    def to_dict(self) -> dict[str, Any]:
        return {"type": "moments", "values": list(self.values)}


Distribution = Union[Uniform, Gaussian, Beta, MomentList]


@lru_cache(maxsize=4096)
def _cached_moment(d: Distribution, k: int) -> float:
    return float(d.raw_moment(k))


def raw_moment(d: Distribution, k: int) -> float:
    """``E[w^k]`` under *d*; ``k = 0`` gives 1."""
    if not isinstance(k, int) or k < 0:
        raise MomentError(f"moment order must be a nonnegative integer, got {k!r}")
    if k == 0:
        return 1.0
    return _cached_moment(d, k)


def parse_distribution(doc: Mapping[str, Any]) -> Distribution:
    """Build a distribution from its JSON table entry (see ``to_dict``)."""
    if not isinstance(doc, Mapping):
        raise MomentError(f"distribution must be an object, got {type(doc).__name__}")
    kind = doc.get("type")
    allowed = {
        "uniform": {"lower", "upper"},
        "gaussian": {"mean", "variance", "std"},
        "beta": {"alpha", "beta"},
        "moments": {"values"},
    }
    if kind not in allowed:
        raise MomentError(f"unknown distribution type {kind!r} (expected one of {', '.join(allowed)})")
    unknown = sorted(set(doc) - allowed[kind] - {"type"})
    if unknown:
        raise MomentError(f"unknown field(s) for {kind} distribution: {', '.join(unknown)}")
    try:
        if kind == "uniform":
            return Uniform(doc["lower"], doc["upper"])
        if kind == "beta":
            return Beta(doc["alpha"], doc["beta"])
        if kind == "moments":
            return MomentList(tuple(doc["values"]))
        if ("variance" in doc) == ("std" in doc):
            raise MomentError("gaussian needs exactly one of 'variance' or 'std'")
        variance = doc["variance"] if "variance" in doc else float(doc["std"]) ** 2
        return Gaussian(doc.get("mean", 0.0), variance)
    except MomentError:
        raise
    except KeyError as exc:
        raise MomentError(f"{kind} distribution is missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise MomentError(f"invalid {kind} distribution parameters: {exc}") from None


# ---------------------------------------------------------------------------
# Uncertainty model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UncertaintyModel:
    """Independent marginals for the uncertain parameters of one constraint."""

    entries: tuple[tuple[VarId, Distribution], ...] = ()

    def __post_init__(self) -> None:
        seen: set[VarId] = set()
        for var, _ in self.entries:
            if var.kind is not VarKind.UNCERTAIN:
                raise MomentError(f"{var.name} is not an uncertain parameter")
            if var in seen:
                raise MomentError(f"{var.name} has more than one distribution")
            seen.add(var)
        object.__setattr__(self, "entries", tuple(sorted(self.entries, key=lambda e: e[0])))

    @classmethod
    def of(cls, table: Mapping[VarId, Distribution] | Iterable[tuple[VarId, Distribution]]) -> UncertaintyModel:
        items = table.items() if isinstance(table, Mapping) else table
        return cls(tuple(items))

    def __contains__(self, var: object) -> bool:
        return any(v == var for v, _ in self.entries)

    def __getitem__(self, var: VarId) -> Distribution:
        for v, dist in self.entries:
            if v == var:
                return dist
        raise MomentError(f"no distribution given for uncertain parameter {var.name}")

    def __iter__(self) -> Iterator[tuple[VarId, Distribution]]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def variables(self) -> tuple[VarId, ...]:
        return tuple(v for v, _ in self.entries)

    def moment(self, var: VarId, k: int) -> float:
        return raw_moment(self[var], k)

    def check_covers(self, p: Polynomial) -> None:
        for var in p.variables():
            if var.kind is VarKind.UNCERTAIN and var not in self:
                raise MomentError(f"no distribution given for uncertain parameter {var.name}")


def apply_expectation(p: Polynomial, model: UncertaintyModel) -> Polynomial:
    """Replace every ``prod w_j^k_j`` factor by ``prod E[w_j^k_j]``."""
    model.check_covers(p)
    acc: dict = {}
    for mono, coef in p:
        rest, omega = mono.split((VarKind.UNCERTAIN,))
        factor = 1.0
        for var, k in omega:
            factor *= model.moment(var, k)
        acc[rest] = acc.get(rest, 0.0) + coef * factor
    return Polynomial(acc)
