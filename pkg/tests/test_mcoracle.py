from __future__ import annotations

import numpy as np
import pytest

from riskverify.contour import build_contour, risk_bound
from riskverify.mcoracle import (
    RiskEstimate,
    SamplingError,
    estimate_risk,
    estimate_trajectory_risk,
    sample,
    stream_generator,
)
from riskverify.scenario import fixture_path, list_fixtures, load_scenario
from riskverify.uncertainty import Beta, Gaussian, MomentError, MomentList, Uniform


def test_streams_are_reproducible_and_distinct() -> None:
    a = stream_generator(7, (0, 1)).random(5)
    b = stream_generator(7, (0, 1)).random(5)
    c = stream_generator(7, (0, 2)).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_samples_respect_support() -> None:
    rng = stream_generator(1)
    u = sample(Uniform(0.3, 0.4), rng, 10_000)
    assert u.min() >= 0.3 and u.max() <= 0.4
    b = sample(Beta(3, 3), rng, 10_000)
    assert b.min() >= 0.0 and b.max() <= 1.0
    g = sample(Gaussian(0.0, 0.01), rng, 100_000)
    assert g.std() == pytest.approx(0.1, rel=0.02)
    assert isinstance(sample(Uniform(0, 1), rng), float)


def test_moment_lists_cannot_be_sampled() -> None:
    with pytest.raises(MomentError, match="not samplable"):
        sample(MomentList((1.0, 0.0, 1.0)), stream_generator(1), 10)


def test_estimate_at_known_points(static_obstacle) -> None:
    assert estimate_risk(static_obstacle, [1.0, 1.0], 0.0, 20_000, 3).mean == 0.0
    assert estimate_risk(static_obstacle, [0.0, 0.0], 0.0, 20_000, 3).mean == 1.0
    half = estimate_risk(static_obstacle, [0.35, 0.0], 0.0, 40_000, 3)
    assert abs(half.mean - 0.5) <= 3 * half.stderr + 1e-3
    assert half.samples == 40_000 and half.constraint == "obstacle"


def test_estimate_is_deterministic(static_obstacle) -> None:
    first = estimate_risk(static_obstacle, [0.36, 0.0], 0.0, 5_000, 11, stream=(0, 4))
    again = estimate_risk(static_obstacle, [0.36, 0.0], 0.0, 5_000, 11, stream=(0, 4))
    assert first == again
    other = estimate_risk(static_obstacle, [0.36, 0.0], 0.0, 5_000, 12, stream=(0, 4))
    assert other.seed == 12


def test_sample_count_must_be_positive(static_obstacle) -> None:
    with pytest.raises(SamplingError, match=">= 1"):
        estimate_risk(static_obstacle, [1.0, 1.0], 0.0, 0)


def test_from_count() -> None:
    est = RiskEstimate.from_count(25, 100, time=0.5)
    assert est.mean == 0.25
    assert est.stderr == pytest.approx(np.sqrt(0.25 * 0.75 / 100))
    assert est.to_dict()["t"] == 0.5


def test_trajectory_estimates(static_scenario, crossing_path) -> None:
    assert estimate_trajectory_risk(static_scenario, crossing_path, [], 100, 1) == []
    with pytest.raises(SamplingError, match="outside the horizon"):
        estimate_trajectory_risk(static_scenario, crossing_path, [2.0], 100, 1)

    (single,) = estimate_trajectory_risk(static_scenario, crossing_path, [0.0], 2_000, 5)
    direct = estimate_risk(static_scenario.constraints[0], crossing_path.at(0.0), 0.0, 2_000, 5, stream=(0, 0))
    assert single == direct

    many = estimate_trajectory_risk(static_scenario, crossing_path, np.linspace(0, 1, 5), 2_000, 5)
    assert [e.stream for e in many] == [(0, i) for i in range(5)]
    assert many[2].mean == 1.0


def test_cantelli_bound_dominates_estimates(static_obstacle, moving_obstacle, lane_change, rng: np.random.Generator) -> None:
    cases = [(static_obstacle, (0.0, 1.0))]
    for sf in (moving_obstacle, lane_change):
        cases.extend((c, sf.scenario.horizon) for c in sf.scenario.constraints)
    checked = 0
    for c, (t0, tf) in cases:
        rc = build_contour(c)
        for _ in range(30):
            x = rng.uniform(-1.5, 1.5, size=2)
            t = float(rng.uniform(t0, tf))
            bound = risk_bound(rc, x, t)
            if not np.isfinite(bound):
                continue
            est = estimate_risk(c, x, t, 20_000, int(rng.integers(1 << 30)))
            assert est.mean <= bound + 3 * est.stderr + 1e-12, (c.name, x, t)
            checked += 1
    assert checked > 50


SAFE_FIXTURES = [f.name for f in list_fixtures() if "SAFE" in f.expected.values()]


@pytest.mark.slow
def test_cantelli_bound_dominates_estimates_at_scale(static_obstacle, moving_obstacle, lane_change) -> None:
    rng = np.random.default_rng(4242)
    cases = [(static_obstacle, (0.0, 1.0))]
    for sf in (moving_obstacle, lane_change):
        cases.extend((c, sf.scenario.horizon) for c in sf.scenario.constraints)
    checked = 0
    for attempt in range(5000):
        if checked == 200:
            break
        c, (t0, tf) = cases[attempt % len(cases)]
        x = rng.uniform(-1.5, 1.5, size=2)
        t = float(rng.uniform(t0, tf))
        bound = risk_bound(build_contour(c), x, t)
        if not np.isfinite(bound):
            continue
        est = estimate_risk(c, x, t, 100_000, int(rng.integers(1 << 30)))
        assert est.mean <= bound + 3 * est.stderr + 1e-12, (c.name, x, t)
        checked += 1
    assert checked == 200


@pytest.mark.slow
@pytest.mark.parametrize("name", SAFE_FIXTURES)
def test_safe_fixture_estimates_stay_below_delta(name: str) -> None:
    sf = load_scenario(fixture_path(name))
    times = np.linspace(*sf.scenario.horizon, 20)
    for est in estimate_trajectory_risk(sf.scenario, sf.require_trajectory(), times, 100_000, 2024):
        assert est.mean <= sf.scenario.delta + 3 * est.stderr


@pytest.mark.slow
def test_estimates_converge(static_obstacle) -> None:
    small = estimate_risk(static_obstacle, [0.37, 0.0], 0.0, 25_000, 1)
    large = estimate_risk(static_obstacle, [0.37, 0.0], 0.0, 100_000, 2)
    assert abs(small.mean - large.mean) <= 3 * np.hypot(small.stderr, large.stderr)
