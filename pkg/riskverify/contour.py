"""contour.py – Deterministic risk contours of uncertain safety constraints.

For a constraint ``g(x, w, t) >= 0`` with random ``w`` the contour keeps

    P1(x, t) = E[g²]      P2(x, t) = E[g]

and bounds the violation probability by Cantelli's inequality::

    Prob(g < 0) <= (P1 - P2²) / P1      whenever P2 >= 0

The set ``{(P1 - P2²)/P1 <= Δ, P2 >= 0}`` is therefore an inner approximation
of the states whose risk is at most Δ.
"""
from __future__ import annotations

import csv
import io
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .polyalg import TIME, Polynomial, VarId, VarKind, evaluate_batch, state
from .uncertainty import UncertaintyModel, apply_expectation

__all__ = [
    "EPS_P",
    "ConstraintError",
    "SafetyConstraint",
    "RiskContour",
    "ContourGrid",
    "build_contour",
    "risk_bound",
    "risk_bounds",
    "member",
    "contour_grid",
    "json_risk",
]

# P1 at or below this means g is almost surely 0
EPS_P = 1e-12


class ConstraintError(ValueError):
    """Safety constraint that does not depend on the state, or bad query."""


def json_risk(value: float) -> float | str:
    return "inf" if math.isinf(value) else value


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not 0.0 <= delta <= 1.0:
        raise ConstraintError(f"risk level must lie in [0, 1], got {delta}")
    return delta


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SafetyConstraint:
    """``g(x, w, t) >= 0`` is safe; ``model`` gives the law of ``w``."""

    name: str
    g: Polynomial
    model: UncertaintyModel = field(default_factory=UncertaintyModel)

    def __post_init__(self) -> None:
        if not self.g.mentions(VarKind.STATE):
            raise ConstraintError(f"constraint {self.name!r} does not depend on the state")
        if self.g.mentions(VarKind.OFFSET):
            raise ConstraintError(f"constraint {self.name!r} mentions tube offset variables")
        self.model.check_covers(self.g)

    @property
    def state_dim(self) -> int:
        return 1 + max(v.index for v in self.g.variables() if v.kind is VarKind.STATE)

    @property
    def uncertain_vars(self) -> tuple[VarId, ...]:
        return tuple(v for v in self.g.variables() if v.kind is VarKind.UNCERTAIN)

    @property
    def moment_order(self) -> int:
        return 2 * self.g.degree_in((VarKind.UNCERTAIN,))


@dataclass(frozen=True)
class RiskContour:
    p1: Polynomial
    p2: Polynomial
    source: str = ""

    def variance(self) -> Polynomial:
        return self.p1 - self.p2 * self.p2


def build_contour(c: SafetyConstraint) -> RiskContour:
    """``P1 = E[g²]``, ``P2 = E[g]``."""
    return RiskContour(
        p1=apply_expectation(c.g * c.g, c.model),
        p2=apply_expectation(c.g, c.model),
        source=c.name,
    )


# ---------------------------------------------------------------------------
# Pointwise queries
# ---------------------------------------------------------------------------

def _bound_from_moments(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.clip((p1 - p2 * p2) / p1, 0.0, 1.0)
    out = np.where(p1 <= EPS_P, 0.0, ratio)
    return np.where(p2 < 0, np.inf, out)


def risk_bounds(rc: RiskContour, xs: np.ndarray, ts: np.ndarray | float) -> np.ndarray:
    """Vectorised ``risk_bound`` over rows of *xs* (shape ``(N, n_x)``)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ts = np.broadcast_to(np.asarray(ts, dtype=float), (xs.shape[0],))
    variables = (TIME, *(state(i) for i in range(xs.shape[1])))
    pts = np.column_stack([ts, xs])
    return _bound_from_moments(evaluate_batch(rc.p1, variables, pts), evaluate_batch(rc.p2, variables, pts))


def risk_bound(rc: RiskContour, x: Sequence[float], t: float = 0.0) -> float:
    """Cantelli bound at ``(x, t)``; ``inf`` when ``P2 < 0`` (not certifiable)."""
    return float(risk_bounds(rc, np.asarray(x, dtype=float).reshape(1, -1), t)[0])


def member(rc: RiskContour, x: Sequence[float], t: float, delta: float) -> bool:
    return risk_bound(rc, x, t) <= _check_delta(delta)


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

@dataclass
class ContourGrid:
    """Row-major grid: ``risk[i, j]`` sits at ``(axes[0] = xs[i], axes[1] = ys[j])``."""

    source: str
    t: float
    delta: float
    axes: tuple[int, int]
    xs: np.ndarray
    ys: np.ndarray
    risk: np.ndarray
    fixed: dict[int, float] = field(default_factory=dict)

    @property
    def member(self) -> np.ndarray:
        return self.risk <= self.delta

    @property
    def axis_names(self) -> tuple[str, str]:
        return state(self.axes[0]).name, state(self.axes[1]).name

    def to_dict(self) -> dict[str, Any]:
        names = self.axis_names
        return {
            "constraint": self.source,
            "t": self.t,
            "delta": self.delta,
            "order": f"row-major: rows over {names[0]}, columns over {names[1]}",
            "axes": [
                {"name": name, "min": float(vals[0]), "max": float(vals[-1]), "count": int(vals.size),
                 "values": vals.tolist()}
                for name, vals in zip(names, (self.xs, self.ys))
            ],
            "fixed": {state(i).name: v for i, v in sorted(self.fixed.items())},
            "risk": [[json_risk(float(v)) for v in row] for row in self.risk],
            "member": self.member.tolist(),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([*self.axis_names, "risk", "member"])
        for i, xv in enumerate(self.xs):
            for j, yv in enumerate(self.ys):
                r = float(self.risk[i, j])
                writer.writerow([repr(float(xv)), repr(float(yv)), json_risk(r), int(r <= self.delta)])
        return buf.getvalue()


def contour_grid(
    rc: RiskContour,
    t: float,
    delta: float,
    bounds: Sequence[Sequence[float]],
    resolution: int | Sequence[int],
    *,
    axes: tuple[int, int] = (0, 1),
    fixed: Mapping[int, float] | None = None,
    state_dim: int | None = None,
) -> ContourGrid:
    """Evaluate the contour on a rectangular grid over two state coordinates.

    Every coordinate other than *axes* must be pinned by *fixed*.
    """
    delta = _check_delta(delta)
    if len(bounds) != 2:
        raise ConstraintError(f"grid needs bounds for exactly 2 axes, got {len(bounds)}")
    res = (resolution, resolution) if isinstance(resolution, int) else tuple(resolution)
    if len(res) != 2 or min(res) < 2:
        raise ConstraintError(f"grid resolution must be >= 2 per axis, got {resolution}")
    (lo0, hi0), (lo1, hi1) = ((float(a), float(b)) for a, b in bounds)
    if not (lo0 < hi0 and lo1 < hi1):
        raise ConstraintError(f"grid bounds must be increasing, got {bounds}")

    fixed = dict(fixed or {})
    used = [v.index for p in (rc.p1, rc.p2) for v in p.variables() if v.kind is VarKind.STATE]
    n_x = max([*used, *axes, *fixed, -1]) + 1 if state_dim is None else state_dim
    missing = sorted(set(range(n_x)) - set(axes) - set(fixed))
    if missing:
        raise ConstraintError(
            f"state has {n_x} dimensions; pin {', '.join(state(i).name for i in missing)} "
            "with fixed coordinates to slice a 2-D grid"
        )

    xs = np.linspace(lo0, hi0, res[0])
    ys = np.linspace(lo1, hi1, res[1])
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.zeros((gx.size, n_x))
    for i, v in fixed.items():
        pts[:, i] = v
    pts[:, axes[0]] = gx.ravel()
    pts[:, axes[1]] = gy.ravel()
    risk = risk_bounds(rc, pts, t).reshape(res)
    return ContourGrid(rc.source, float(t), delta, axes, xs, ys, risk, fixed)
