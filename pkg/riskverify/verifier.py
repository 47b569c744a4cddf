"""verifier.py – Risk-bounded safety verification of trajectories and tubes.

For every constraint the risk contour ``(P1, P2)`` is composed with the
trajectory (or with the tube ``x = P(t) + offset``) and two nonnegativity
claims are certified over the time horizon (and the tube ellipsoid):

* ``risk`` stage:  ``P2² - (1 - Δ)·P1 >= 0``
* ``mean`` stage:  ``P2 >= 0``

Both claims are posed in normalised coordinates: time is mapped affinely
onto ``[-1, 1]`` and tube offsets are whitened by the Cholesky factor of
``Q``, so the domain generators are ``1 - t²`` and ``1 - Σ z_i²``.  These
differ from ``(t - t0)(tf - t)`` and ``1 - x̂ᵀQx̂`` only by positive factors,
so a certificate in normalised coordinates certifies the original claim.

Before any SDP is solved each claim is evaluated on a dense sample of its
domain; a negative sample refutes the claim outright.
"""
from __future__ import annotations

import json
import logging
import math
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any

import numpy as np
from scipy import linalg as sla

from . import config
from .contour import EPS_P, RiskContour, SafetyConstraint, build_contour, json_risk, risk_bounds
from .polyalg import TIME, Polynomial, PolyTrajectory, VarId, evaluate_batch, offset, state
from .sdpcore import SdpOptions
from .soscert import DegreeError, SosCertificate, SosProblem, SosStatus, certify

log = logging.getLogger("riskverify.verifier")

__all__ = [
    "VerificationError",
    "Scenario",
    "Tube",
    "VerifyOptions",
    "VerdictStatus",
    "StageReport",
    "ConstraintReport",
    "Verdict",
    "PointwiseEntry",
    "PointwiseReport",
    "verify_trajectory",
    "verify_tube",
    "verify_pointwise",
]


class VerificationError(ValueError):
    """Inputs that cannot be verified (shape mismatch, degenerate contour)."""


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    n_x: int
    horizon: tuple[float, float]
    constraints: tuple[SafetyConstraint, ...]
    delta: float
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "constraints", tuple(self.constraints))
        t0, tf = (float(v) for v in self.horizon)
        object.__setattr__(self, "horizon", (t0, tf))
        if not (math.isfinite(t0) and math.isfinite(tf) and t0 < tf):
            raise VerificationError(f"horizon must be finite with t0 < tf, got {self.horizon}")
        if not 0.0 <= float(self.delta) <= 1.0:
            raise VerificationError(f"delta must lie in [0, 1], got {self.delta}")
        if self.n_x < 1:
            raise VerificationError(f"state dimension must be positive, got {self.n_x}")
        if not self.constraints:
            raise VerificationError("scenario has no constraints")
        names = [c.name for c in self.constraints]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise VerificationError(f"duplicate constraint name(s): {', '.join(dupes)}")
        for c in self.constraints:
            if c.state_dim > self.n_x:
                raise VerificationError(f"constraint {c.name!r} uses x{c.state_dim} but the state has {self.n_x} dimensions")

    @cached_property
    def contours(self) -> tuple[RiskContour, ...]:
        return tuple(build_contour(c) for c in self.constraints)

    def in_horizon(self, t: float) -> bool:
        t0, tf = self.horizon
        return t0 - 1e-12 <= t <= tf + 1e-12


@dataclass(frozen=True, eq=False)
class Tube:
    """Ellipsoid ``{x : (x - P(t))ᵀ Q (x - P(t)) <= 1}`` around the trajectory."""

    Q: np.ndarray

    def __post_init__(self) -> None:
        Q = np.array(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise VerificationError(f"tube Q must be square, got shape {Q.shape}")
        if not np.all(np.isfinite(Q)):
            raise VerificationError("tube Q contains NaN or Inf")
        if np.max(np.abs(Q - Q.T)) > 1e-12:
            raise VerificationError("tube Q is not symmetric")
        if np.linalg.eigvalsh(Q)[0] <= 0:
            raise VerificationError("tube Q is not positive definite")
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)

    @classmethod
    def ball(cls, n: int, radius: float) -> Tube:
        return cls(np.eye(n) / radius**2)

    @property
    def n_x(self) -> int:
        return self.Q.shape[0]

    @cached_property
    def whitening(self) -> np.ndarray:
        """``W`` with ``x̂ = W z`` mapping the unit ball onto the ellipsoid."""
        L = sla.cholesky(self.Q, lower=True)
        return sla.solve_triangular(L.T, np.eye(self.n_x), lower=False)

    def contains(self, offset_vec: Sequence[float]) -> bool:
        v = np.asarray(offset_vec, dtype=float)
        return float(v @ self.Q @ v) <= 1.0 + 1e-12


@dataclass(frozen=True)
class VerifyOptions:
    delta: float | None = None
    degree_boost: int = 0
    max_escalations: int = 2
    degree_cap: int | None = None
    sdp: SdpOptions = field(default_factory=SdpOptions)
    refute_samples: int = 257
    threads: int = field(default_factory=lambda: config.THREADS)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

class VerdictStatus(Enum):
    SAFE = "SAFE"
    NOT_VERIFIED = "NOT_VERIFIED"


@dataclass
class StageReport:
    stage: str
    status: str
    degrees: tuple[int, ...] = ()
    attempts: int = 0
    sdp_iterations: int = 0
    residual: float | None = None
    reason: str = ""
    worst_point: dict[str, Any] | None = None
    certificate: SosCertificate | None = None

    @property
    def certified(self) -> bool:
        return self.status == SosStatus.CERTIFIED.value

    def to_dict(self, *, include_certificate: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "stage": self.stage,
            "status": self.status,
            "degrees": list(self.degrees),
            "attempts": self.attempts,
            "sdp_iterations": self.sdp_iterations,
            "residual": self.residual,
            "reason": self.reason,
            "worst_point": self.worst_point,
        }
        if include_certificate and self.certificate is not None:
            out["certificate"] = self.certificate.to_dict()
        return out


@dataclass
class ConstraintReport:
    name: str
    stages: list[StageReport]
    diagnostic: dict[str, Any] | None = None

    @property
    def certified(self) -> bool:
        return all(s.certified for s in self.stages)

    @property
    def first_failure(self) -> StageReport | None:
        return next((s for s in self.stages if not s.certified), None)

    def to_dict(self, *, include_certificates: bool = False) -> dict[str, Any]:
        return {
            "name": self.name,
            "certified": self.certified,
            "stages": [s.to_dict(include_certificate=include_certificates) for s in self.stages],
            "diagnostic": self.diagnostic,
        }


@dataclass
class Verdict:
    status: VerdictStatus
    mode: str
    scenario: str
    delta: float
    horizon: tuple[float, float]
    constraints: list[ConstraintReport]
    normalisation: dict[str, Any]
    wall_ms: float = 0.0

    @property
    def safe(self) -> bool:
        return self.status is VerdictStatus.SAFE

    @property
    def failure(self) -> dict[str, Any] | None:
        for report in self.constraints:
            stage = report.first_failure
            if stage is not None:
                return {"constraint": report.name, "stage": stage.stage, "status": stage.status,
                        "reason": stage.reason, "diagnostic": report.diagnostic}
        return None

    def degrees(self) -> dict[str, dict[str, list[int]]]:
        return {r.name: {s.stage: list(s.degrees) for s in r.stages} for r in self.constraints}

    def to_dict(self, *, include_certificates: bool = False, include_timing: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {
            "scenario": self.scenario,
            "mode": self.mode,
            "status": self.status.value,
            "delta": self.delta,
            "horizon": list(self.horizon),
            "normalisation": self.normalisation,
            "constraints": [c.to_dict(include_certificates=include_certificates) for c in self.constraints],
            "failure": self.failure,
        }
        if include_timing:
            out["wall_ms"] = round(self.wall_ms, 3)
        return out

    def to_json(self, **kwargs: Any) -> str:
        return json.dumps(self.to_dict(**kwargs), indent=2)

    def to_text(self) -> str:
        lines = [f"{self.scenario or 'scenario'} [{self.mode}] Δ={self.delta}: {self.status.value} ({self.wall_ms:.1f} ms)"]
        for report in self.constraints:
            for s in report.stages:
                extra = f" residual={s.residual:.1e}" if s.residual is not None else ""
                lines.append(f"  {report.name:<16} {s.stage:<5} {s.status:<18} degrees={list(s.degrees)}{extra}")
                if s.reason and not s.certified:
                    lines.append(f"      {s.reason}")
            if report.diagnostic and not report.certified:
                lines.append(f"      worst point: {json.dumps(report.diagnostic)}")
        return "\n".join(lines)


@dataclass
class PointwiseEntry:
    constraint: str
    t: float
    risk_bound: float
    member: bool

    def to_dict(self) -> dict[str, Any]:
        return {"constraint": self.constraint, "t": self.t, "risk_bound": json_risk(self.risk_bound), "member": self.member}


@dataclass
class PointwiseReport:
    delta: float
    entries: list[PointwiseEntry]

    def all_members(self) -> bool:
        return all(e.member for e in self.entries)

    def failing(self) -> list[PointwiseEntry]:
        return [e for e in self.entries if not e.member]

    def to_dict(self) -> dict[str, Any]:
        return {"delta": self.delta, "entries": [e.to_dict() for e in self.entries]}


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _Frame:
    """Normalised coordinates: ``t = center + half_width·s`` and ``x̂ = W z``."""

    center: float
    half_width: float
    W: np.ndarray | None = None

    @classmethod
    def build(cls, horizon: tuple[float, float], tube: Tube | None) -> _Frame:
        t0, tf = horizon
        return cls(0.5 * (t0 + tf), 0.5 * (tf - t0), None if tube is None else tube.whitening)

    @property
    def variables(self) -> tuple[VarId, ...]:
        n_z = 0 if self.W is None else self.W.shape[0]
        return (TIME, *(offset(i) for i in range(n_z)))

    def time_poly(self) -> Polynomial:
        return Polynomial.constant(self.center) + Polynomial.variable(TIME).scale(self.half_width)

    def bindings(self, traj: PolyTrajectory) -> dict[VarId, Polynomial]:
        tmap = {TIME: self.time_poly()}
        out: dict[VarId, Polynomial] = dict(tmap)
        for i, comp in enumerate(traj.components):
            pos = comp.substitute(tmap)
            if self.W is not None:
                for j in range(self.W.shape[1]):
                    if self.W[i, j] != 0.0:
                        pos = pos + Polynomial.variable(offset(j)).scale(float(self.W[i, j]))
            out[state(i)] = pos
        return out

    def generators(self) -> tuple[Polynomial, ...]:
        t = Polynomial.variable(TIME)
        gens = [1.0 - t * t]
        if self.W is not None:
            ball = Polynomial.constant(1.0)
            for j in range(self.W.shape[0]):
                z = Polynomial.variable(offset(j))
                ball = ball - z * z
            gens.append(ball)
        return tuple(gens)

    def samples(self, n_times: int) -> np.ndarray:
        """Deterministic domain sample, rows ``(s, z_1, …, z_n)``."""
        s = np.linspace(-1.0, 1.0, max(2, n_times))
        if self.W is None:
            return s.reshape(-1, 1)
        n_z = self.W.shape[0]
        rng = np.random.Generator(np.random.Philox(key=n_z))
        dirs = rng.standard_normal((32 * n_z, n_z))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        axes = np.vstack([np.eye(n_z), -np.eye(n_z)])
        offsets = np.vstack([np.zeros((1, n_z)), axes, dirs, 0.5 * dirs])
        ts = np.linspace(-1.0, 1.0, max(2, n_times // 4 + 1))
        grid_t = np.repeat(ts, offsets.shape[0])
        grid_z = np.tile(offsets, (ts.size, 1))
        return np.column_stack([grid_t, grid_z])

    def to_original(self, row: np.ndarray) -> tuple[float, np.ndarray | None]:
        t = self.center + self.half_width * float(row[0])
        if self.W is None:
            return t, None
        return t, self.W @ np.asarray(row[1:], dtype=float)

    def describe(self) -> dict[str, Any]:
        out: dict[str, Any] = {"time": {"center": self.center, "half_width": self.half_width}}
        if self.W is not None:
            out["offset_map"] = self.W.tolist()
        return out


def _degeneracy_check(rc: RiskContour, traj: PolyTrajectory) -> None:
    ts = np.linspace(*traj.horizon, 10)
    pts = np.column_stack([ts, traj.sample(ts)])
    variables = (TIME, *(state(i) for i in range(traj.n_x)))
    p1 = evaluate_batch(rc.p1, variables, pts)
    if np.any(p1 < EPS_P):
        t_bad = float(ts[int(np.argmin(p1))])
        raise VerificationError(
            f"constraint {rc.source!r}: E[g²] vanishes along the trajectory near t={t_bad:g}; "
            "the risk bound is undefined there"
        )


def _diagnostic(rc: RiskContour, traj: PolyTrajectory, t: float, off: np.ndarray | None, delta: float) -> dict[str, Any]:
    x = traj.at(t) + (0.0 if off is None else off)
    bound = float(risk_bounds(rc, x.reshape(1, -1), t)[0])
    out: dict[str, Any] = {"t": t, "x": x.tolist(), "risk_bound": json_risk(bound), "member": bound <= delta}
    if off is not None:
        out["offset"] = off.tolist()
    return out


def _verify_constraint(
    rc: RiskContour,
    traj: PolyTrajectory,
    frame: _Frame,
    delta: float,
    opts: VerifyOptions,
) -> ConstraintReport:
    _degeneracy_check(rc, traj)
    bindings = frame.bindings(traj)
    q1 = rc.p1.substitute(bindings)
    q2 = rc.p2.substitute(bindings)
    claims = (
        ("risk", q2 * q2 - q1.scale(1.0 - delta)),
        ("mean", q2),
    )
    generators = frame.generators()
    sample = frame.samples(opts.refute_samples)
    stages: list[StageReport] = []
    worst_overall: tuple[float, np.ndarray] | None = None

    for stage, target in claims:
        label = f"{rc.source}/{stage}"
        values = evaluate_batch(target, frame.variables, sample)
        k = int(np.argmin(values))
        t_w, off_w = frame.to_original(sample[k])
        worst = {"t": t_w, "value": float(values[k])}
        if off_w is not None:
            worst["offset"] = off_w.tolist()
        scale = max(target.max_abs_coeff(), 1e-300)
        if worst_overall is None or values[k] / scale < worst_overall[0]:
            worst_overall = (values[k] / scale, sample[k])

        if values[k] < -1e-12 * scale:
            log.info("%s: refuted by sampling (value %.3e at t=%.4g)", label, values[k], t_w)
            stages.append(StageReport(stage, "refuted", worst_point=worst,
                                      reason=f"claim is negative at t={t_w:.6g}; no certificate exists"))
            continue

        problem = SosProblem(target, generators, frame.variables, name=label)
        try:
            result = certify(
                problem,
                sdp_opts=opts.sdp,
                max_escalations=opts.max_escalations,
                boost=opts.degree_boost,
                degree_cap=opts.degree_cap,
            )
        except DegreeError as exc:
            stages.append(StageReport(stage, "degree_limit", reason=str(exc), worst_point=worst))
            continue
        cert = result.certificate
        stages.append(StageReport(
            stage,
            result.status.value,
            degrees=result.degrees,
            attempts=result.attempts,
            sdp_iterations=result.sdp_iterations,
            residual=None if cert is None else cert.residual,
            reason=result.reason,
            worst_point=worst,
            certificate=cert,
        ))

    report = ConstraintReport(rc.source, stages)
    if not report.certified and worst_overall is not None:
        t_w, off_w = frame.to_original(worst_overall[1])
        report.diagnostic = _diagnostic(rc, traj, t_w, off_w, delta)
    return report


def _run(s: Scenario, traj: PolyTrajectory, tube: Tube | None, opts: VerifyOptions | None) -> Verdict:
    opts = opts or VerifyOptions()
    start = time.monotonic()
    if traj.n_x != s.n_x:
        raise VerificationError(f"trajectory has {traj.n_x} components, scenario state has {s.n_x}")
    if any(abs(a - b) > 1e-12 for a, b in zip(traj.horizon, s.horizon)):
        raise VerificationError(f"trajectory horizon {traj.horizon} differs from scenario horizon {s.horizon}")
    if tube is not None and tube.n_x != s.n_x:
        raise VerificationError(f"tube is {tube.n_x}-dimensional, scenario state has {s.n_x}")
    delta = s.delta if opts.delta is None else float(opts.delta)
    if not 0.0 <= delta <= 1.0:
        raise VerificationError(f"delta must lie in [0, 1], got {delta}")

    frame = _Frame.build(s.horizon, tube)
    mode = "trajectory" if tube is None else "tube"
    contours = s.contours
    workers = max(1, min(opts.threads, len(contours)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        reports = list(pool.map(lambda rc: _verify_constraint(rc, traj, frame, delta, opts), contours))

    status = VerdictStatus.SAFE if all(r.certified for r in reports) else VerdictStatus.NOT_VERIFIED
    verdict = Verdict(status, mode, s.name, delta, s.horizon, reports, frame.describe(),
                      wall_ms=1000.0 * (time.monotonic() - start))
    log.info("%s [%s]: %s in %.1f ms", s.name or "scenario", mode, status.value, verdict.wall_ms)
    return verdict


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def verify_trajectory(s: Scenario, traj: PolyTrajectory, opts: VerifyOptions | None = None) -> Verdict:
    """Certify ``Prob(g_i(P(t), w, t) < 0) <= Δ`` for all ``t`` in the horizon."""
    return _run(s, traj, None, opts)


def verify_tube(s: Scenario, traj: PolyTrajectory, tube: Tube, opts: VerifyOptions | None = None) -> Verdict:
    """As ``verify_trajectory`` for every state of the tube around *traj*."""
    return _run(s, traj, tube, opts)


def verify_pointwise(
    s: Scenario,
    traj: PolyTrajectory,
    times: Sequence[float],
    *,
    offset_vec: Sequence[float] | None = None,
    delta: float | None = None,
) -> PointwiseReport:
    """Contour membership at ``P(t)`` (plus an optional fixed offset) for each time."""
    delta = s.delta if delta is None else float(delta)
    ts = np.asarray(list(times), dtype=float)
    bad = [float(t) for t in ts if not s.in_horizon(float(t))]
    if bad:
        raise VerificationError(f"time(s) outside the horizon {s.horizon}: {bad}")
    entries: list[PointwiseEntry] = []
    if ts.size == 0:
        return PointwiseReport(delta, entries)
    xs = traj.sample(ts)
    if offset_vec is not None:
        xs = xs + np.asarray(offset_vec, dtype=float)
    for rc in s.contours:
        bounds = risk_bounds(rc, xs, ts)
        entries.extend(PointwiseEntry(rc.source, float(t), float(b), bool(b <= delta)) for t, b in zip(ts, bounds))
    return PointwiseReport(delta, entries)
