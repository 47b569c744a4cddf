"""scenario.py – Scenario JSON files: parsing, validation, serialisation, fixtures.

Document layout::

    {
      "name": "vehicle_lane_change",
      "title": "…", "notes": ["…"],
      "state_dim": 2,
      "horizon": [0, 1],
      "delta": 0.1,
      "constraints": [
        {"name": "obstacle_1",
         "g": "(x1 - 0.4 - w1 - 0.8*t)^2 + (x2 - 1)^2 - 0.09",
         "distributions": {"w1": {"type": "uniform", "lower": -0.1, "upper": 0.1}}}
      ],
      "trajectory": ["2*t", "3*t^2 - 2*t^3"],
      "tube": {"Q": [[100, 0], [0, 100]]},
      "output": {"bounds": [[-1, 1], [-1, 1]], "resolution": 201, "times": [0], "deltas": [0.1]},
      "expected": {"verify": "SAFE", "verify_tube": "SAFE"}
    }

``trajectory``, ``tube``, ``output`` and ``expected`` are optional.  Unknown
fields are rejected with their JSON path.
"""
from __future__ import annotations

import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from . import config
from .contour import SafetyConstraint
from .polyalg import PolynomialError, PolyTrajectory, VarId, VarKind, parse_polynomial
from .uncertainty import MomentError, UncertaintyModel, parse_distribution
from .verifier import Scenario, Tube, VerificationError

log = logging.getLogger("riskverify.scenario")

__all__ = [
    "ScenarioError",
    "OutputControls",
    "ScenarioFile",
    "FixtureInfo",
    "load_scenario",
    "parse_scenario",
    "list_fixtures",
    "fixture_path",
    "resolve_scenario",
]

VERDICTS = ("SAFE", "NOT_VERIFIED")


class ScenarioError(ValueError):
    """Malformed scenario document; the message carries the JSON path."""


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutputControls:
    bounds: tuple[tuple[float, float], ...] | None = None
    resolution: int = 101
    times: tuple[float, ...] = ()
    deltas: tuple[float, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"resolution": self.resolution}
        if self.bounds is not None:
            out["bounds"] = [list(b) for b in self.bounds]
        if self.times:
            out["times"] = list(self.times)
        if self.deltas:
            out["deltas"] = list(self.deltas)
        return out


@dataclass(frozen=True, eq=False)
class ScenarioFile:
    scenario: Scenario
    trajectory: PolyTrajectory | None = None
    tube: Tube | None = None
    title: str = ""
    notes: tuple[str, ...] = ()
    output: OutputControls = field(default_factory=OutputControls)
    expected: Mapping[str, str] = field(default_factory=dict)
    origin: str = ""

    @property
    def name(self) -> str:
        return self.scenario.name

    def require_trajectory(self) -> PolyTrajectory:
        if self.trajectory is None:
            raise ScenarioError(f"{self.origin or self.name}: scenario has no trajectory")
        return self.trajectory

    def require_tube(self) -> Tube:
        if self.tube is None:
            raise ScenarioError(f"{self.origin or self.name}: scenario has no tube")
        return self.tube

    def to_dict(self) -> dict[str, Any]:
        s = self.scenario
        out: dict[str, Any] = {"name": s.name}
        if self.title:
            out["title"] = self.title
        if self.notes:
            out["notes"] = list(self.notes)
        out.update({
            "state_dim": s.n_x,
            "horizon": list(s.horizon),
            "delta": s.delta,
            "constraints": [
                {
                    "name": c.name,
                    "g": str(c.g),
                    "distributions": {var.name: dist.to_dict() for var, dist in c.model},
                }
                for c in s.constraints
            ],
        })
        if self.trajectory is not None:
            out["trajectory"] = [str(p) for p in self.trajectory.components]
        if self.tube is not None:
            out["tube"] = {"Q": self.tube.Q.tolist()}
        out["output"] = self.output.to_dict()
        if self.expected:
            out["expected"] = dict(self.expected)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# ---------------------------------------------------------------------------
# Parsing helpers
# ---------------------------------------------------------------------------

class _Ctx:
    def __init__(self, origin: str):
        self.origin = origin

    def error(self, path: str, msg: str) -> ScenarioError:
        where = f"{self.origin}: " if self.origin else ""
        return ScenarioError(f"{where}{path}: {msg}" if path else f"{where}{msg}")

    def only(self, doc: Mapping[str, Any], allowed: set[str], path: str) -> None:
        unknown = sorted(set(doc) - allowed)
        if unknown:
            raise self.error(path or "document", f"unknown field(s) {', '.join(unknown)}")

    def obj(self, value: Any, path: str) -> Mapping[str, Any]:
        if not isinstance(value, Mapping):
            raise self.error(path, f"expected an object, got {type(value).__name__}")
        return value

    def number(self, value: Any, path: str) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(path, f"expected a number, got {value!r}")
        return float(value)

    def integer(self, value: Any, path: str) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.error(path, f"expected an integer, got {value!r}")
        return value

    def string(self, value: Any, path: str) -> str:
        if not isinstance(value, str):
            raise self.error(path, f"expected a string, got {value!r}")
        return value

    def array(self, value: Any, path: str) -> Sequence[Any]:
        if not isinstance(value, list):
            raise self.error(path, f"expected an array, got {type(value).__name__}")
        return value

    def required(self, doc: Mapping[str, Any], key: str, path: str) -> Any:
        if key not in doc:
            raise self.error(f"{path}.{key}" if path else key, "missing required field")
        return doc[key]

    def poly(self, text: Any, path: str):
        try:
            return parse_polynomial(self.string(text, path))
        except PolynomialError as exc:
            raise self.error(path, str(exc)) from None


_TOP = {"name", "title", "notes", "state_dim", "horizon", "delta", "constraints",
        "trajectory", "tube", "output", "expected"}
_CONSTRAINT = {"name", "g", "distributions", "note"}
_OUTPUT = {"bounds", "resolution", "times", "deltas"}
_EXPECTED = {"verify", "verify_tube"}


def _parse_constraint(ctx: _Ctx, raw: Any, path: str) -> SafetyConstraint:
    doc = ctx.obj(raw, path)
    ctx.only(doc, _CONSTRAINT, path)
    name = ctx.string(ctx.required(doc, "name", path), f"{path}.name")
    g = ctx.poly(ctx.required(doc, "g", path), f"{path}.g")
    table = ctx.obj(doc.get("distributions", {}), f"{path}.distributions")
    entries = []
    for key, spec in table.items():
        sub = f"{path}.distributions.{key}"
        try:
            var = VarId.parse(key)
        except PolynomialError as exc:
            raise ctx.error(sub, str(exc)) from None
        if var.kind is not VarKind.UNCERTAIN:
            raise ctx.error(sub, f"{key} is not an uncertain parameter (use w1, w2, …)")
        try:
            entries.append((var, parse_distribution(ctx.obj(spec, sub))))
        except MomentError as exc:
            raise ctx.error(sub, str(exc)) from None
    try:
        return SafetyConstraint(name, g, UncertaintyModel(tuple(entries)))
    except ValueError as exc:
        raise ctx.error(path, str(exc)) from None


def _parse_output(ctx: _Ctx, raw: Any) -> OutputControls:
    doc = ctx.obj(raw, "output")
    ctx.only(doc, _OUTPUT, "output")
    bounds = None
    if "bounds" in doc:
        rows = ctx.array(doc["bounds"], "output.bounds")
        parsed = []
        for i, row in enumerate(rows):
            pair = ctx.array(row, f"output.bounds[{i}]")
            if len(pair) != 2:
                raise ctx.error(f"output.bounds[{i}]", "expected [lower, upper]")
            lo, hi = (ctx.number(v, f"output.bounds[{i}]") for v in pair)
            if not lo < hi:
                raise ctx.error(f"output.bounds[{i}]", f"lower bound must be below upper, got [{lo}, {hi}]")
            parsed.append((lo, hi))
        bounds = tuple(parsed)
    resolution = ctx.integer(doc.get("resolution", 101), "output.resolution")
    if resolution < 2:
        raise ctx.error("output.resolution", f"must be >= 2, got {resolution}")
    times = tuple(ctx.number(v, f"output.times[{i}]") for i, v in enumerate(ctx.array(doc.get("times", []), "output.times")))
    deltas = tuple(ctx.number(v, f"output.deltas[{i}]") for i, v in enumerate(ctx.array(doc.get("deltas", []), "output.deltas")))
    for i, d in enumerate(deltas):
        if not 0.0 <= d <= 1.0:
            raise ctx.error(f"output.deltas[{i}]", f"must lie in [0, 1], got {d}")
    return OutputControls(bounds, resolution, times, deltas)


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def parse_scenario(document: Any, origin: str = "") -> ScenarioFile:
    """Validate a decoded JSON document and build the scenario objects."""
    ctx = _Ctx(origin)
    doc = ctx.obj(document, "")
    ctx.only(doc, _TOP, "")

    name = ctx.string(doc.get("name", Path(origin).stem if origin else ""), "name")
    n_x = ctx.integer(ctx.required(doc, "state_dim", ""), "state_dim")
    if n_x < 1:
        raise ctx.error("state_dim", f"must be >= 1, got {n_x}")
    horizon_raw = ctx.array(ctx.required(doc, "horizon", ""), "horizon")
    if len(horizon_raw) != 2:
        raise ctx.error("horizon", "expected [t0, tf]")
    horizon = tuple(ctx.number(v, "horizon") for v in horizon_raw)
    delta = ctx.number(ctx.required(doc, "delta", ""), "delta")

    raw_constraints = ctx.array(ctx.required(doc, "constraints", ""), "constraints")
    constraints = tuple(_parse_constraint(ctx, c, f"constraints[{i}]") for i, c in enumerate(raw_constraints))
    try:
        scenario = Scenario(n_x, horizon, constraints, delta, name)
    except VerificationError as exc:
        raise ctx.error("", str(exc)) from None

    trajectory = None
    if "trajectory" in doc:
        comps = ctx.array(doc["trajectory"], "trajectory")
        if len(comps) != n_x:
            raise ctx.error("trajectory", f"expected {n_x} components, got {len(comps)}")
        polys = tuple(ctx.poly(text, f"trajectory[{i}]") for i, text in enumerate(comps))
        try:
            trajectory = PolyTrajectory(polys, scenario.horizon)
        except PolynomialError as exc:
            raise ctx.error("trajectory", str(exc)) from None

    tube = None
    if "tube" in doc:
        tube_doc = ctx.obj(doc["tube"], "tube")
        ctx.only(tube_doc, {"Q"}, "tube")
        rows = ctx.array(ctx.required(tube_doc, "Q", "tube"), "tube.Q")
        matrix = [[ctx.number(v, f"tube.Q[{i}]") for v in ctx.array(row, f"tube.Q[{i}]")] for i, row in enumerate(rows)]
        if len(matrix) != n_x or any(len(r) != n_x for r in matrix):
            raise ctx.error("tube.Q", f"expected a {n_x}x{n_x} matrix")
        try:
            tube = Tube(np.array(matrix))
        except VerificationError as exc:
            raise ctx.error("tube.Q", str(exc)) from None

    output = _parse_output(ctx, doc["output"]) if "output" in doc else OutputControls()

    expected: dict[str, str] = {}
    if "expected" in doc:
        exp_doc = ctx.obj(doc["expected"], "expected")
        ctx.only(exp_doc, _EXPECTED, "expected")
        for key, value in exp_doc.items():
            if value not in VERDICTS:
                raise ctx.error(f"expected.{key}", f"must be one of {', '.join(VERDICTS)}, got {value!r}")
            expected[key] = value

    notes = tuple(ctx.string(n, f"notes[{i}]") for i, n in enumerate(ctx.array(doc.get("notes", []), "notes")))
    title = ctx.string(doc.get("title", ""), "title")
    return ScenarioFile(scenario, trajectory, tube, title, notes, output, expected, origin)


def load_scenario(path: str | Path) -> ScenarioFile:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    loaded = parse_scenario(document, str(path))
    log.debug("Loaded scenario %s from %s", loaded.name, path)
    return loaded


class FixtureInfo(NamedTuple):
    name: str
    path: Path
    title: str
    expected: Mapping[str, str]


def list_fixtures() -> list[FixtureInfo]:
    out = []
    for path in sorted(config.FIXTURES_DIR.glob("*.json")):
        doc = json.loads(path.read_text(encoding="utf-8"))
        out.append(FixtureInfo(path.stem, path, doc.get("title", ""), doc.get("expected", {})))
    return out


def fixture_path(name: str) -> Path:
    stem = name[:-5] if name.endswith(".json") else name
    path = config.FIXTURES_DIR / f"{stem}.json"
    if not path.is_file():
        known = ", ".join(f.name for f in list_fixtures())
        raise ScenarioError(f"unknown fixture {name!r} (available: {known})")
    return path


def resolve_scenario(ref: str | Path) -> Path:
    """A filesystem path when it exists, otherwise a shipped fixture name."""
    path = Path(ref)
    if path.exists():
        return path
    return fixture_path(str(ref))
