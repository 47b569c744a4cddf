"""config.py – shared configuration, environment variables, and logging."""
from __future__ import annotations

import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

# ---------------------------------------------------------------------------
# Load .env (if present)
# ---------------------------------------------------------------------------
BASE_DIR = Path(__file__).resolve().parent
load_dotenv(BASE_DIR / ".env")  # falls back gracefully if .env is missing

FIXTURES_DIR = BASE_DIR / "fixtures"


def _env_int(name: str, default: int, *, minimum: int = 1) -> int:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"{name} must be an integer, got {raw!r}") from exc
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        value = float(raw)
    except ValueError as exc:
        raise ValueError(f"{name} must be a number, got {raw!r}") from exc
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


# ---------------------------------------------------------------------------
# Runtime settings
# ---------------------------------------------------------------------------
THREADS: int = _env_int("RISKVERIFY_THREADS", min(8, os.cpu_count() or 1))

SDP_MAX_ITER: int = _env_int("RISKVERIFY_SDP_MAX_ITER", 200)
SDP_TOL: float = _env_float("RISKVERIFY_SDP_TOL", 1e-9)

EPS_PSD: float = _env_float("RISKVERIFY_EPS_PSD", 1e-8)
EPS_RES: float = _env_float("RISKVERIFY_EPS_RES", 1e-6)

MC_SAMPLES: int = _env_int("RISKVERIFY_MC_SAMPLES", 100_000)
MC_SEED: int = _env_int("RISKVERIFY_SEED", 20240501, minimum=0)

SDP_DUMP_DIR: Path | None = (
    Path(os.environ["RISKVERIFY_SDP_DUMP_DIR"]) if os.getenv("RISKVERIFY_SDP_DUMP_DIR") else None
)

# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------
# stdout carries JSON verdicts, so log records go to stderr.
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
logging.basicConfig(
    level=LOG_LEVEL,
    format="%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
    stream=sys.stderr,
)
log = logging.getLogger("riskverify")

__all__ = [
    "BASE_DIR",
    "FIXTURES_DIR",
    "THREADS",
    "SDP_MAX_ITER",
    "SDP_TOL",
    "EPS_PSD",
    "EPS_RES",
    "MC_SAMPLES",
    "MC_SEED",
    "SDP_DUMP_DIR",
    "log",
]
