"""cli.py – Console entry-point for the riskverify package.

Run ``python -m riskverify.cli verify vehicle_lane_change`` to verify a shipped
fixture (or any scenario JSON path), ``… verify-tube …`` for its tube,
``… contour …`` for plot grids, ``… mc-check …`` for a Monte Carlo baseline
and ``… fixtures`` to list the shipped scenarios.

Exit codes: 0 success / SAFE, 1 NOT_VERIFIED, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import config
from .contour import ConstraintError, contour_grid
from .mcoracle import estimate_trajectory_risk
from .polyalg import VarId, VarKind
from .scenario import ScenarioError, ScenarioFile, list_fixtures, load_scenario, resolve_scenario
from .verifier import Verdict, VerifyOptions, verify_trajectory, verify_tube

log = logging.getLogger("riskverify.cli")

EXIT_OK = 0
EXIT_NOT_VERIFIED = 1
EXIT_INPUT = 2


def _load(ref: str) -> ScenarioFile:
    return load_scenario(resolve_scenario(ref))


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
        log.info("Wrote %s", out)
    else:
        sys.stdout.write(text + "\n")


def _floats(raw: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ScenarioError(f"{flag}: expected comma-separated numbers, got {raw!r}") from None


def _fixed(pairs: Sequence[str]) -> dict[int, float]:
    out: dict[int, float] = {}
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if not sep:
            raise ScenarioError(f"--fix expects xk=value, got {pair!r}")
        var = VarId.parse(name.strip())
        if var.kind is not VarKind.STATE:
            raise ScenarioError(f"--fix only pins state coordinates, got {name!r}")
        out[var.index] = _floats(value, "--fix")[0]
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _verify_options(args: argparse.Namespace) -> VerifyOptions:
    return VerifyOptions(
        delta=args.delta,
        degree_boost=args.degree_boost,
        max_escalations=args.max_escalations,
        degree_cap=args.degree_cap,
    )


def _report(verdict: Verdict, args: argparse.Namespace) -> int:
    if args.text:
        _emit(verdict.to_text(), args.out)
    else:
        _emit(verdict.to_json(include_certificates=args.certificates, include_timing=not args.no_timing), args.out)
    return EXIT_OK if verdict.safe else EXIT_NOT_VERIFIED


def cmd_verify(args: argparse.Namespace) -> int:
    sf = _load(args.scenario)
    verdict = verify_trajectory(sf.scenario, sf.require_trajectory(), _verify_options(args))
    return _report(verdict, args)


def cmd_verify_tube(args: argparse.Namespace) -> int:
    sf = _load(args.scenario)
    verdict = verify_tube(sf.scenario, sf.require_trajectory(), sf.require_tube(), _verify_options(args))
    return _report(verdict, args)


def cmd_contour(args: argparse.Namespace) -> int:
    sf = _load(args.scenario)
    s = sf.scenario
    times = _floats(args.time, "--time") if args.time else list(sf.output.times) or [s.horizon[0]]
    deltas = _floats(args.delta, "--delta") if args.delta else list(sf.output.deltas) or [s.delta]
    if args.bounds:
        flat = _floats(args.bounds, "--bounds")
        if len(flat) != 4:
            raise ScenarioError("--bounds expects lo1,hi1,lo2,hi2")
        bounds = [(flat[0], flat[1]), (flat[2], flat[3])]
    elif sf.output.bounds is not None:
        bounds = [tuple(b) for b in sf.output.bounds[:2]]
    else:
        raise ScenarioError("no grid bounds: pass --bounds=lo1,hi1,lo2,hi2 or set output.bounds")
    resolution = args.res or sf.output.resolution
    fixed = _fixed(args.fix)

    wanted = [c for c in s.contours if args.constraint in (None, c.source)]
    if not wanted:
        raise ScenarioError(f"no constraint named {args.constraint!r}")

    grids = []
    for rc in wanted:
        for t in times:
            for delta in deltas:
                try:
                    grids.append(contour_grid(rc, t, delta, bounds, resolution, fixed=fixed, state_dim=s.n_x))
                except ConstraintError as exc:
                    raise ScenarioError(f"{exc} (use --fix xk=value for the extra coordinates)") from None

    if args.format == "csv":
        if len(grids) != 1:
            raise ScenarioError(f"CSV holds a single grid but {len(grids)} were requested; narrow --constraint/--time/--delta")
        _emit(grids[0].to_csv().rstrip("\n"), args.out)
    else:
        doc = {"scenario": s.name, "grids": [g.to_dict() for g in grids]}
        _emit(json.dumps(doc), args.out)
    return EXIT_OK


def cmd_mc_check(args: argparse.Namespace) -> int:
    sf = _load(args.scenario)
    s, traj = sf.scenario, sf.require_trajectory()
    times = _floats(args.at, "--at") if args.at else np.linspace(*s.horizon, args.times).tolist()
    estimates = estimate_trajectory_risk(s, traj, times, args.samples, args.seed)
    rows = []
    for est in estimates:
        row = est.to_dict()
        row["within_delta"] = est.mean <= s.delta + 3.0 * est.stderr
        rows.append(row)
    _emit(json.dumps(rows, indent=2), args.out)
    return EXIT_OK


def cmd_fixtures(args: argparse.Namespace) -> int:
    infos = list_fixtures()
    if args.json:
        _emit(json.dumps([{"name": f.name, "title": f.title, "expected": dict(f.expected),
                           "path": str(f.path)} for f in infos], indent=2), None)
        return EXIT_OK
    for f in infos:
        expected = ", ".join(f"{k}={v}" for k, v in f.expected.items()) or "-"
        sys.stdout.write(f"{f.name:<28} {expected:<40} {f.title}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def build_arg_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description="Risk-bounded trajectory and tube verification")
    p.add_argument("-v", "--verbose", action="store_true", help="Log solver progress at DEBUG level")
    sub = p.add_subparsers(dest="cmd", required=True)

    def verify_flags(cmd: argparse.ArgumentParser) -> None:
        cmd.add_argument("scenario", help="Scenario JSON path or shipped fixture name")
        cmd.add_argument("--delta", type=float, help="Override the scenario risk level")
        cmd.add_argument("--degree-cap", type=int, help="Highest identity degree the retry ladder may try")
        cmd.add_argument("--degree-boost", type=int, default=0, help="Extra (even) degree for the first attempt")
        cmd.add_argument("--max-escalations", type=int, default=2, help="Degree escalations of +2 (default 2)")
        fmt = cmd.add_mutually_exclusive_group()
        fmt.add_argument("--json", action="store_true", help="JSON verdict (default)")
        fmt.add_argument("--text", action="store_true", help="Human-readable verdict")
        cmd.add_argument("--certificates", action="store_true", help="Embed Gram matrices in the JSON verdict")
        cmd.add_argument("--no-timing", action="store_true", help="Omit wall time from the JSON verdict")
        cmd.add_argument("--out", help="Write the verdict to this file instead of stdout")

    verify_flags(sub.add_parser("verify", help="Verify the nominal trajectory"))
    verify_flags(sub.add_parser("verify-tube", help="Verify the ellipsoidal tube around the trajectory"))

    contour = sub.add_parser("contour", help="Emit risk-contour grids")
    contour.add_argument("scenario", help="Scenario JSON path or shipped fixture name")
    contour.add_argument("--time", help="Comma-separated times (default: output.times or t0)")
    contour.add_argument("--delta", help="Comma-separated risk levels (default: output.deltas or scenario delta)")
    contour.add_argument("--bounds", help="Grid bounds lo1,hi1,lo2,hi2 (write as --bounds=-1,1,-1,1)")
    contour.add_argument("--res", type=int, help="Points per axis (>= 2)")
    contour.add_argument("--fix", action="append", default=[], metavar="xk=value",
                         help="Pin a state coordinate outside the grid plane (repeatable)")
    contour.add_argument("--constraint", help="Only this constraint")
    contour.add_argument("--format", choices=("json", "csv"), default="json")
    contour.add_argument("--out", help="Output file (default stdout)")

    mc = sub.add_parser("mc-check", help="Monte Carlo violation estimates along the trajectory")
    mc.add_argument("scenario", help="Scenario JSON path or shipped fixture name")
    mc.add_argument("--times", type=int, default=20, help="Number of uniformly spaced times (default 20)")
    mc.add_argument("--at", help="Explicit comma-separated times instead of --times")
    mc.add_argument("--samples", type=int, default=config.MC_SAMPLES, help="Samples per estimate")
    mc.add_argument("--seed", type=int, default=config.MC_SEED, help="Root seed")
    mc.add_argument("--out", help="Output file (default stdout)")

    fixtures = sub.add_parser("fixtures", help="List shipped scenarios")
    fixtures.add_argument("--json", action="store_true", help="JSON listing")

    return p


COMMANDS = {
    "verify": cmd_verify,
    "verify-tube": cmd_verify_tube,
    "contour": cmd_contour,
    "mc-check": cmd_mc_check,
    "fixtures": cmd_fixtures,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.getLogger("riskverify").setLevel(logging.DEBUG)
    try:
        return COMMANDS[args.cmd](args)
    except (ValueError, OSError) as exc:
        log.debug("Command failed", exc_info=True)
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
