from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import pytest

from riskverify.cli import EXIT_INPUT, EXIT_NOT_VERIFIED, EXIT_OK, main
from riskverify.scenario import fixture_path, list_fixtures, load_scenario

STATIC = {
    "name": "static",
    "state_dim": 2,
    "horizon": [0, 1],
    "delta": 0.1,
    "constraints": [
        {
            "name": "obstacle",
            "g": "x1^2 + x2^2 - w1^2",
            "distributions": {"w1": {"type": "uniform", "lower": 0.3, "upper": 0.4}},
        }
    ],
}


def _write(tmp_path: Path, name: str, trajectory: list[str]) -> str:
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps({**STATIC, "name": name, "trajectory": trajectory}))
    return str(path)


def test_fixtures_listing(capsys) -> None:
    assert main(["fixtures"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "vehicle_lane_change" in out and "verify=SAFE" in out

    assert main(["fixtures", "--json"]) == EXIT_OK
    listing = json.loads(capsys.readouterr().out)
    assert {row["name"] for row in listing} == {f.name for f in list_fixtures()}


def test_verify_exit_codes(tmp_path, capsys) -> None:
    clear = _write(tmp_path, "clear", ["t + 1", "1"])
    assert main(["verify", clear, "--no-timing"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["status"] == "SAFE"
    assert "wall_ms" not in doc

    crossing = _write(tmp_path, "crossing", ["t - 0.5", "0"])
    assert main(["verify", crossing, "--text"]) == EXIT_NOT_VERIFIED
    out = capsys.readouterr().out
    assert "NOT_VERIFIED" in out and "refuted" in out


def test_verify_writes_out_file(tmp_path) -> None:
    clear = _write(tmp_path, "clear", ["t + 1", "1"])
    target = tmp_path / "verdict.json"
    assert main(["verify", clear, "--certificates", "--out", str(target)]) == EXIT_OK
    doc = json.loads(target.read_text())
    assert "certificate" in doc["constraints"][0]["stages"][0]


def test_input_errors_exit_with_two(tmp_path, capsys) -> None:
    assert main(["verify", "static_obstacle"]) == EXIT_INPUT
    assert "no trajectory" in capsys.readouterr().err

    assert main(["verify-tube", "moving_obstacle"]) == EXIT_INPUT
    assert "no tube" in capsys.readouterr().err

    broken = tmp_path / "broken.json"
    broken.write_text('{"name": "x", ')
    assert main(["verify", str(broken)]) == EXIT_INPUT
    assert "invalid JSON" in capsys.readouterr().err

    assert main(["verify", "no_such_fixture"]) == EXIT_INPUT
    assert "unknown fixture" in capsys.readouterr().err


def test_usage_errors_exit_with_two() -> None:
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_INPUT


def test_contour_csv(capsys) -> None:
    args = ["contour", "static_obstacle", "--format", "csv", "--res", "2", "--delta", "0.1"]
    assert main(args) == EXIT_OK
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["x1", "x2", "risk", "member"]
    assert len(rows) == 5


def test_contour_csv_needs_a_single_grid(capsys) -> None:
    assert main(["contour", "static_obstacle", "--format", "csv", "--res", "2"]) == EXIT_INPUT
    assert "single grid" in capsys.readouterr().err


def test_contour_json(capsys) -> None:
    assert main(["contour", "static_obstacle", "--res", "3", "--bounds=-0.5,0.5,-0.5,0.5"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["scenario"] == "static_obstacle"
    assert [g["delta"] for g in doc["grids"]] == [0.5, 0.3, 0.1]
    assert doc["grids"][0]["risk"][1][1] == "inf"
    assert doc["grids"][0]["axes"][0]["min"] == -0.5


def test_contour_in_three_dimensions_needs_fix(capsys) -> None:
    assert main(["contour", "flight_trajectory", "--res", "3"]) == EXIT_INPUT
    assert "--fix" in capsys.readouterr().err
    assert main(["contour", "flight_trajectory", "--res", "3", "--time", "0.5", "--fix", "x3=0.5"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["grids"][0]["fixed"] == {"x3": 0.5}
    assert main(["contour", "flight_trajectory", "--res", "3", "--fix", "w1=0.5"]) == EXIT_INPUT
    assert main(["contour", "static_obstacle", "--constraint", "nope"]) == EXIT_INPUT


def test_mc_check(tmp_path, capsys) -> None:
    crossing = _write(tmp_path, "crossing", ["t - 0.5", "0"])
    args = ["mc-check", crossing, "--at", "0,0.5", "--samples", "2000", "--seed", "9"]
    assert main(args) == EXIT_OK
    first = capsys.readouterr().out
    assert main(args) == EXIT_OK
    assert capsys.readouterr().out == first

    rows = json.loads(first)
    assert [r["t"] for r in rows] == [0.0, 0.5]
    assert rows[1]["mean"] == 1.0 and rows[1]["within_delta"] is False

    out = tmp_path / "mc.json"
    assert main([*args, "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text()) == rows

    assert main(["mc-check", crossing, "--samples", "0"]) == EXIT_INPUT
    assert main(["mc-check", crossing, "--at", "0,5"]) == EXIT_INPUT


@pytest.mark.slow
@pytest.mark.parametrize(
    "name, mode, expected",
    [(f.name, mode, verdict) for f in list_fixtures() for mode, verdict in f.expected.items()],
)
def test_fixture_exit_codes(name: str, mode: str, expected: str, capsys) -> None:
    cmd = "verify" if mode == "verify" else "verify-tube"
    code = main([cmd, name])
    assert code == (EXIT_OK if expected == "SAFE" else EXIT_NOT_VERIFIED)
    assert json.loads(capsys.readouterr().out)["status"] == expected


@pytest.mark.slow
@pytest.mark.parametrize("name", [f.name for f in list_fixtures() if "SAFE" in f.expected.values()])
def test_mc_check_on_safe_fixtures(name: str, capsys) -> None:
    assert main(["mc-check", name, "--times", "20", "--samples", "100000"]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)
    n_constraints = len(load_scenario(fixture_path(name)).scenario.constraints)
    assert len(rows) == 20 * n_constraints
    assert all(r["within_delta"] for r in rows)
