from __future__ import annotations

import copy
import json

import numpy as np
import pytest

from riskverify.polyalg import uncertain
from riskverify.scenario import (
    ScenarioError,
    fixture_path,
    list_fixtures,
    load_scenario,
    parse_scenario,
    resolve_scenario,
)
from riskverify.uncertainty import Gaussian

BASE = {
    "name": "lane",
    "state_dim": 2,
    "horizon": [0, 1],
    "delta": 0.1,
    "constraints": [
        {
            "name": "obstacle_1",
            "g": "(x1 - 0.4 - w1 - 0.8*t)^2 + (x2 - 1)^2 - 0.09",
            "distributions": {"w1": {"type": "uniform", "lower": -0.1, "upper": 0.1}},
        }
    ],
    "trajectory": ["2*t", "3*t^2 - 2*t^3"],
}

SHIPPED = [f.name for f in list_fixtures()]


def _doc(**changes) -> dict:
    doc = copy.deepcopy(BASE)
    for key, value in changes.items():
        if value is None:
            doc.pop(key, None)
        else:
            doc[key] = value
    return doc


def test_fixture_listing() -> None:
    assert set(SHIPPED) >= {
        "static_obstacle",
        "moving_obstacle",
        "moving_obstacle_tube",
        "moving_obstacle_tube_wide",
        "vehicle_lane_change",
        "vehicle_lane_change_slow",
        "vehicle_tube",
        "vehicle_tube_wide",
        "flight_trajectory",
        "flight_tube",
    }
    infos = {f.name: f for f in list_fixtures()}
    assert infos["vehicle_tube_wide"].expected["verify_tube"] == "NOT_VERIFIED"
    assert infos["static_obstacle"].expected == {}
    assert all(f.title for f in infos.values())


@pytest.mark.parametrize("name", SHIPPED)
def test_fixtures_survive_reserialisation(name: str) -> None:
    sf = load_scenario(fixture_path(name))
    again = parse_scenario(json.loads(sf.to_json()), sf.origin)
    assert again.to_dict() == sf.to_dict()
    for a, b in zip(again.scenario.constraints, sf.scenario.constraints):
        assert a.g == b.g
        assert a.model == b.model
    if sf.trajectory is not None:
        assert again.trajectory == sf.trajectory
    if sf.tube is not None:
        np.testing.assert_array_equal(again.tube.Q, sf.tube.Q)


def test_gaussian_std_is_stored_as_variance(moving_obstacle) -> None:
    model = moving_obstacle.scenario.constraints[0].model
    assert isinstance(model[uncertain(1)], Gaussian)
    assert model[uncertain(1)].variance == pytest.approx(0.01)


def test_parse_minimal_document() -> None:
    sf = parse_scenario(_doc())
    assert sf.name == "lane"
    assert sf.scenario.n_x == 2
    assert sf.tube is None
    assert sf.output.resolution == 101
    assert sf.require_trajectory().degree == 3


def test_name_defaults_to_file_stem(tmp_path) -> None:
    path = tmp_path / "my_case.json"
    path.write_text(json.dumps(_doc(name=None)))
    assert load_scenario(path).name == "my_case"


@pytest.mark.parametrize(
    "changes, fragment",
    [
        ({"colour": "red"}, "unknown field"),
        ({"state_dim": None}, "state_dim: missing required field"),
        ({"state_dim": 1.5}, "state_dim: expected an integer"),
        ({"horizon": [0]}, r"horizon: expected \[t0, tf\]"),
        ({"delta": 2.0}, "delta must lie"),
        ({"trajectory": ["2*t"]}, "trajectory: expected 2 components"),
        ({"trajectory": ["2*t", "x1"]}, "only t"),
        ({"tube": {"Q": [[1, 0], [0, -1]]}}, "tube.Q: .*positive definite"),
        ({"tube": {"Q": [[1, 0]]}}, "tube.Q: expected a 2x2"),
        ({"tube": {"R": 1}}, "tube: unknown field"),
        ({"expected": {"verify": "MAYBE"}}, "expected.verify"),
        ({"expected": {"contour": "SAFE"}}, "expected: unknown field"),
        ({"output": {"resolution": 1}}, "output.resolution"),
        ({"output": {"bounds": [[1, -1], [0, 1]]}}, r"output.bounds\[0\]"),
        ({"output": {"deltas": [1.5]}}, r"output.deltas\[0\]"),
        ({"notes": "text"}, "notes: expected an array"),
    ],
)
def test_document_errors_carry_paths(changes, fragment: str) -> None:
    with pytest.raises(ScenarioError, match=fragment):
        parse_scenario(_doc(**changes))


@pytest.mark.parametrize(
    "constraint, fragment",
    [
        ({"name": "c", "g": "x1 +* 2"}, r"constraints\[0\].g"),
        ({"g": "x1"}, r"constraints\[0\].name: missing required field"),
        ({"name": "c", "g": "x1 - w1"}, r"constraints\[0\]: no distribution given for uncertain parameter w1"),
        ({"name": "c", "g": "x1", "distributions": {"x1": {"type": "uniform", "lower": 0, "upper": 1}}},
         r"constraints\[0\].distributions.x1: x1 is not an uncertain"),
        ({"name": "c", "g": "x1 - w1", "distributions": {"w1": {"type": "uniform", "lower": 1, "upper": 0}}},
         r"constraints\[0\].distributions.w1: uniform needs lower < upper"),
        ({"name": "c", "g": "t - 1"}, r"constraints\[0\]: constraint 'c' does not depend on the state"),
        ({"name": "c", "g": "x1", "radius": 2}, r"constraints\[0\]: unknown field"),
    ],
)
def test_constraint_errors_carry_paths(constraint, fragment: str) -> None:
    with pytest.raises(ScenarioError, match=fragment):
        parse_scenario(_doc(constraints=[constraint]))


def test_origin_prefixes_errors(tmp_path) -> None:
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(_doc(delta="high")))
    with pytest.raises(ScenarioError, match=r"broken\.json: delta: expected a number"):
        load_scenario(path)


def test_invalid_json_reports_position(tmp_path) -> None:
    path = tmp_path / "truncated.json"
    path.write_text('{\n  "name": "x",\n  "state_dim": ')
    with pytest.raises(ScenarioError, match="invalid JSON at line 3"):
        load_scenario(path)


def test_missing_parts_are_reported(scenario_loader) -> None:
    with pytest.raises(ScenarioError, match="no trajectory"):
        scenario_loader("static_obstacle").require_trajectory()
    with pytest.raises(ScenarioError, match="no tube"):
        scenario_loader("moving_obstacle").require_tube()


def test_resolve_scenario(tmp_path) -> None:
    path = tmp_path / "case.json"
    path.write_text(json.dumps(_doc()))
    assert resolve_scenario(str(path)) == path
    assert resolve_scenario("vehicle_lane_change") == fixture_path("vehicle_lane_change.json")
    with pytest.raises(ScenarioError, match="unknown fixture 'nope'.*available: .*static_obstacle"):
        resolve_scenario("nope")
