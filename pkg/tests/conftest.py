"""Shared fixtures: the shipped scenarios as parsed objects and seeded generators."""
from __future__ import annotations

import numpy as np
import pytest

from riskverify.contour import SafetyConstraint, build_contour
from riskverify.polyalg import PolyTrajectory, parse_polynomial, uncertain
from riskverify.scenario import ScenarioFile, fixture_path, load_scenario
from riskverify.uncertainty import UncertaintyModel, Uniform
from riskverify.verifier import Scenario


def load_fixture(name: str) -> ScenarioFile:
    return load_scenario(fixture_path(name))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def static_obstacle() -> SafetyConstraint:
    """``x1² + x2² - w1² >= 0`` with ``w1 ~ U[0.3, 0.4]``."""
    return SafetyConstraint(
        "obstacle",
        parse_polynomial("x1^2 + x2^2 - w1^2"),
        UncertaintyModel.of({uncertain(0): Uniform(0.3, 0.4)}),
    )


@pytest.fixture
def static_contour(static_obstacle):
    return build_contour(static_obstacle)


@pytest.fixture
def static_scenario(static_obstacle) -> Scenario:
    return Scenario(2, (0.0, 1.0), (static_obstacle,), 0.1, "static")


@pytest.fixture
def clear_path() -> PolyTrajectory:
    """Stays well away from the static obstacle."""
    return PolyTrajectory((parse_polynomial("t + 1"), parse_polynomial("1")), (0.0, 1.0))


@pytest.fixture
def crossing_path() -> PolyTrajectory:
    """Drives straight through the static obstacle's centre at t = 0.5."""
    return PolyTrajectory((parse_polynomial("t - 0.5"), parse_polynomial("0")), (0.0, 1.0))


@pytest.fixture
def moving_obstacle() -> ScenarioFile:
    return load_fixture("moving_obstacle")


@pytest.fixture
def lane_change() -> ScenarioFile:
    return load_fixture("vehicle_lane_change")


@pytest.fixture
def scenario_loader():
    return load_fixture
