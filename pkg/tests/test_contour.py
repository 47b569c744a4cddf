from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
import pytest

from riskverify.contour import (
    ConstraintError,
    SafetyConstraint,
    build_contour,
    contour_grid,
    member,
    risk_bound,
    risk_bounds,
)
from riskverify.polyalg import TIME, Monomial, VarKind, evaluate_batch, parse_polynomial, state, uncertain
from riskverify.scenario import fixture_path, list_fixtures, load_scenario
from riskverify.uncertainty import MomentError, UncertaintyModel, Uniform

P = parse_polynomial
X1, X2 = state(0), state(1)
M2 = 37 / 300
M4 = (0.4**5 - 0.3**5) / 0.5

FIG_BOUNDS = [(-1.0, 1.0), (-1.0, 1.0)]


def test_static_obstacle_coefficients(static_contour) -> None:
    p1, p2 = static_contour.p1, static_contour.p2
    assert p2.coefficient(Monomial()) == pytest.approx(-M2, abs=1e-12)
    assert p2.coefficient(Monomial({X1: 2})) == 1.0
    assert p2.coefficient(Monomial({X2: 2})) == 1.0

    exact = {
        Monomial(): M4,
        Monomial({X1: 2}): -2 * M2,
        Monomial({X2: 2}): -2 * M2,
        Monomial({X1: 4}): 1.0,
        Monomial({X1: 2, X2: 2}): 2.0,
        Monomial({X2: 4}): 1.0,
    }
    assert set(p1.terms) == set(exact)
    for mono, value in exact.items():
        assert p1.coefficient(mono) == pytest.approx(value, abs=1e-12)


def test_static_obstacle_matches_two_decimal_values(static_contour) -> None:
    # two-decimal rounding of -0.2467 lands 0.0067 away
    printed = {Monomial(): 0.01, Monomial({X1: 2}): -0.24, Monomial({X2: 2}): -0.24}
    for mono, value in printed.items():
        assert static_contour.p1.coefficient(mono) == pytest.approx(value, abs=0.01)
    assert static_contour.p2.coefficient(Monomial()) == pytest.approx(-0.12, abs=0.006)


def test_contour_drops_uncertain_variables(moving_obstacle) -> None:
    for rc in moving_obstacle.scenario.contours:
        for p in (rc.p1, rc.p2):
            assert not p.mentions(VarKind.UNCERTAIN)
            assert p.mentions(VarKind.TIME)


def test_risk_bound_examples(static_contour) -> None:
    p1 = 4 - 4 * M2 + M4
    expected = (p1 - (2 - M2) ** 2) / p1
    assert risk_bound(static_contour, [1.0, 1.0]) == pytest.approx(expected, rel=1e-9)
    assert risk_bound(static_contour, [1.0, 1.0]) == pytest.approx(1.14e-4, rel=0.05)
    assert math.isinf(risk_bound(static_contour, [0.0, 0.0]))


def test_member_examples(static_contour) -> None:
    assert member(static_contour, [1.0, 1.0], 0.0, 0.1)
    assert not member(static_contour, [0.0, 0.0], 0.0, 0.5)
    assert member(static_contour, [0.36, 0.0], 0.0, 1.0)
    with pytest.raises(ConstraintError, match="risk level"):
        member(static_contour, [1.0, 1.0], 0.0, 1.5)


def test_deterministic_constraint_has_zero_risk_where_safe() -> None:
    rc = build_contour(SafetyConstraint("wall", P("x1 - 1")))
    assert rc.p1 == P("(x1 - 1)^2")
    assert rc.p2 == P("x1 - 1")
    assert risk_bound(rc, [2.0]) == 0.0
    assert risk_bound(rc, [1.0]) == 0.0
    assert math.isinf(risk_bound(rc, [0.5]))
    assert member(rc, [3.0], 0.0, 0.0)


def test_bound_lies_in_unit_interval_or_is_infinite(static_contour, rng: np.random.Generator) -> None:
    pts = rng.uniform(-1.5, 1.5, size=(1000, 2))
    bounds = risk_bounds(static_contour, pts, 0.0)
    finite = np.isfinite(bounds)
    assert np.all((bounds[finite] >= 0.0) & (bounds[finite] <= 1.0))
    assert np.all(np.isposinf(bounds[~finite]))


@pytest.mark.parametrize("name", [f.name for f in list_fixtures()])
def test_variance_is_nonnegative_on_every_fixture(name: str, rng: np.random.Generator) -> None:
    s = load_scenario(fixture_path(name)).scenario
    variables = (TIME, *(state(i) for i in range(s.n_x)))
    pts = np.column_stack([rng.uniform(*s.horizon, size=1000), rng.uniform(-2, 2, size=(1000, s.n_x))])
    for rc in s.contours:
        assert evaluate_batch(rc.variance(), variables, pts).min() >= -1e-9, rc.source


def test_bound_dominates_sampled_violation(static_contour, rng: np.random.Generator) -> None:
    w = rng.uniform(0.3, 0.4, size=100_000)
    for r in np.linspace(0.36, 0.6, 13):
        bound = risk_bound(static_contour, [r, 0.0])
        observed = np.mean(r * r - w * w < 0)
        stderr = math.sqrt(max(observed * (1 - observed), 1e-12) / w.size)
        assert observed <= bound + 3 * stderr


# ---------------------------------------------------------------------------
# Constraint validation
# ---------------------------------------------------------------------------

def test_constraint_validation() -> None:
    with pytest.raises(ConstraintError, match="does not depend on the state"):
        SafetyConstraint("clock", P("t - w1"), UncertaintyModel.of({uncertain(0): Uniform(0, 1)}))
    with pytest.raises(ConstraintError, match="offset"):
        SafetyConstraint("tube", P("x1 + z1"))
    with pytest.raises(MomentError, match="w1"):
        SafetyConstraint("unmodelled", P("x1 - w1"))


def test_constraint_properties(static_obstacle) -> None:
    assert static_obstacle.state_dim == 2
    assert static_obstacle.uncertain_vars == (uncertain(0),)
    assert static_obstacle.moment_order == 4


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

def test_grids_are_nested_in_delta(static_contour) -> None:
    grids = {d: contour_grid(static_contour, 0.0, d, FIG_BOUNDS, 201) for d in (0.1, 0.3, 0.5)}
    m1, m3, m5 = (grids[d].member for d in (0.1, 0.3, 0.5))
    assert np.all(m1 <= m3) and np.all(m3 <= m5)
    assert m1.sum() < m3.sum() < m5.sum()

    xs = grids[0.1].xs
    gx, gy = np.meshgrid(xs, grids[0.1].ys, indexing="ij")
    inner_disk = np.hypot(gx, gy) <= 0.3
    ring = np.maximum(np.abs(gx), np.abs(gy)) >= 0.9
    for m in (m1, m3, m5):
        assert not m[inner_disk].any()
        assert m[ring].all()


def test_zero_delta_grid_has_no_members(static_contour) -> None:
    grid = contour_grid(static_contour, 0.0, 0.0, FIG_BOUNDS, 41)
    assert not grid.member.any()


def test_grid_layout_is_row_major(static_contour) -> None:
    grid = contour_grid(static_contour, 0.0, 0.1, [(0.5, 1.0), (-1.0, 0.0)], (2, 3))
    assert grid.risk.shape == (2, 3)
    np.testing.assert_allclose(grid.xs, [0.5, 1.0])
    np.testing.assert_allclose(grid.ys, [-1.0, -0.5, 0.0])
    assert grid.risk[1, 0] == pytest.approx(risk_bound(static_contour, [1.0, -1.0]))
    assert grid.risk[0, 2] == pytest.approx(risk_bound(static_contour, [0.5, 0.0]))


def test_grid_json_marks_unbounded_points(static_contour) -> None:
    doc = contour_grid(static_contour, 0.0, 0.1, FIG_BOUNDS, 3).to_dict()
    assert doc["risk"][1][1] == "inf"
    assert doc["member"][1][1] is False
    assert [a["name"] for a in doc["axes"]] == ["x1", "x2"]
    assert doc["axes"][0]["count"] == 3
    assert "row-major" in doc["order"]
    json.dumps(doc)


def test_grid_csv(static_contour) -> None:
    text = contour_grid(static_contour, 0.0, 0.1, FIG_BOUNDS, 2).to_csv()
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["x1", "x2", "risk", "member"]
    assert len(rows) == 5
    assert rows[1][:2] == ["-1.0", "-1.0"]
    assert rows[1][3] == "1"


def test_three_dimensional_contour_needs_pinning() -> None:
    rc = build_contour(SafetyConstraint("ball", P("x1^2 + x2^2 + x3^2 - 0.25")))
    with pytest.raises(ConstraintError, match="pin x3"):
        contour_grid(rc, 0.0, 0.1, FIG_BOUNDS, 5)
    grid = contour_grid(rc, 0.0, 0.1, FIG_BOUNDS, 5, fixed={2: 0.0})
    assert grid.to_dict()["fixed"] == {"x3": 0.0}
    assert not grid.member[2, 2]
    assert grid.member[0, 0]


@pytest.mark.parametrize(
    "kwargs, fragment",
    [
        ({"resolution": 1}, "resolution"),
        ({"bounds": [(1.0, -1.0), (-1.0, 1.0)]}, "increasing"),
        ({"bounds": [(-1.0, 1.0)]}, "2 axes"),
        ({"delta": -0.1}, "risk level"),
    ],
)
def test_grid_argument_errors(static_contour, kwargs, fragment: str) -> None:
    args = {"t": 0.0, "delta": 0.1, "bounds": FIG_BOUNDS, "resolution": 11} | kwargs
    with pytest.raises(ConstraintError, match=fragment):
        contour_grid(static_contour, **args)
