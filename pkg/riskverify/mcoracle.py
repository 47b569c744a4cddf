"""mcoracle.py – Monte Carlo violation-probability estimates.

Cross-checks only: nothing in the verification path samples.  Each
(constraint, time) pair draws from its own counter-based Philox stream,
derived from the root seed with ``spawn_key=(constraint_index, time_index)``,
so every estimate is reproducible regardless of evaluation order.
"""
from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import config
from .contour import SafetyConstraint
from .polyalg import TIME, PolyTrajectory, evaluate_batch, state
from .uncertainty import Beta, Distribution, Gaussian, MomentError, MomentList, Uniform
from .verifier import Scenario

log = logging.getLogger("riskverify.mcoracle")

__all__ = [
    "SamplingError",
    "RiskEstimate",
    "stream_generator",
    "sample",
    "estimate_risk",
    "estimate_trajectory_risk",
]


class SamplingError(ValueError):
    """Invalid sample count or query time."""


@dataclass(frozen=True)
class RiskEstimate:
    mean: float
    stderr: float
    samples: int
    time: float
    constraint: str = ""
    seed: int = 0
    stream: tuple[int, ...] = ()

    @classmethod
    def from_count(cls, violations: int, samples: int, **kwargs: Any) -> RiskEstimate:
        mean = violations / samples
        return cls(mean, math.sqrt(mean * (1.0 - mean) / samples), samples, **kwargs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "constraint": self.constraint,
            "t": self.time,
            "mean": self.mean,
            "stderr": self.stderr,
            "samples": self.samples,
            "seed": self.seed,
            "stream": list(self.stream),
        }


def stream_generator(seed: int, stream: Sequence[int] = ()) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(stream))))


def sample(d: Distribution, rng: np.random.Generator, size: int | None = None) -> float | np.ndarray:
    """Draw from *d*; one float when *size* is None."""
    if isinstance(d, Uniform):
        return rng.uniform(d.lower, d.upper, size)
    if isinstance(d, Gaussian):
        return d.mean + math.sqrt(d.variance) * rng.standard_normal(size)
    if isinstance(d, Beta):
        return rng.beta(d.alpha, d.beta, size)
    if isinstance(d, MomentList):
        raise MomentError("a distribution given only by its moments is not samplable")
    raise TypeError(f"unsupported distribution {type(d).__name__}")


def estimate_risk(
    c: SafetyConstraint,
    x: Sequence[float],
    t: float,
    n: int | None = None,
    seed: int | None = None,
    *,
    stream: Sequence[int] = (),
) -> RiskEstimate:
    """Fraction of parameter draws with ``g(x, w, t) < 0``."""
    n = config.MC_SAMPLES if n is None else int(n)
    seed = config.MC_SEED if seed is None else int(seed)
    if n < 1:
        raise SamplingError(f"sample count must be >= 1, got {n}")
    bindings = {state(i): float(v) for i, v in enumerate(x)}
    bindings[TIME] = float(t)
    g_w = c.g.substitute(bindings)
    rng = stream_generator(seed, stream)
    variables = c.model.variables
    draws = np.column_stack([sample(dist, rng, n) for _, dist in c.model]) if variables else np.zeros((n, 0))
    values = evaluate_batch(g_w, variables, draws)
    violations = int(np.count_nonzero(values < 0))
    return RiskEstimate.from_count(violations, n, time=float(t), constraint=c.name, seed=seed, stream=tuple(stream))


def estimate_trajectory_risk(
    s: Scenario,
    traj: PolyTrajectory,
    times: Sequence[float],
    n: int | None = None,
    seed: int | None = None,
) -> list[RiskEstimate]:
    """``estimate_risk`` at ``P(t)`` for each constraint and time, constraint-major."""
    ts = [float(t) for t in times]
    bad = [t for t in ts if not s.in_horizon(t)]
    if bad:
        raise SamplingError(f"time(s) outside the horizon {s.horizon}: {bad}")
    if not ts:
        return []
    xs = traj.sample(ts)
    jobs = [(ci, ti) for ci in range(len(s.constraints)) for ti in range(len(ts))]

    def _one(job: tuple[int, int]) -> RiskEstimate:
        ci, ti = job
        return estimate_risk(s.constraints[ci], xs[ti], ts[ti], n, seed, stream=(ci, ti))

    with ThreadPoolExecutor(max_workers=max(1, config.THREADS)) as pool:
        out = list(pool.map(_one, jobs))
    log.debug("Estimated %d (constraint, time) risks", len(out))
    return out
