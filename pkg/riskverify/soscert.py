"""soscert.py – Putinar-style SOS certificates compiled to SDP feasibility.

A problem claims ``target >= 0`` on ``{p_j >= 0}`` and is certified by

    target = σ_0 + Σ_j σ_j · p_j,      σ_j = m_jᵀ G_j m_j,  G_j ⪰ 0

where ``m_j`` is the graded-lex monomial basis of degree ``deg(σ_j)/2``.
Matching coefficients gives one equality per monomial and one PSD block per
multiplier.  ``certify`` prescales the data, solves, unscales, re-checks the
identity symbolically and escalates the multiplier degrees when needed.
"""
from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations_with_replacement
from typing import Any, NamedTuple

import numpy as np
from tenacity import Retrying, before_sleep_log, retry_if_result, stop_after_attempt, wait_none

from . import config
from .polyalg import Monomial, Polynomial, VarId
from .sdpcore import SdpFeasibility, SdpOptions, SdpStatus, min_eigenvalue, solve

log = logging.getLogger("riskverify.soscert")

__all__ = [
    "DegreeError",
    "CertificateError",
    "SosProblem",
    "SosCertificate",
    "CertificateCheck",
    "SosStatus",
    "SosResult",
    "monomial_basis",
    "default_degrees",
    "compile",
    "check_certificate",
    "reconstruct",
    "certify",
]


class DegreeError(ValueError):
    """Multiplier degree caps cannot match the target."""


class CertificateError(ValueError):
    """Certificate shapes do not match the problem."""


def _even_ceil(d: int) -> int:
    return 2 * math.ceil(d / 2)


def _even_floor(d: int) -> int:
    return 2 * (d // 2)


# ---------------------------------------------------------------------------
# Problem / certificate types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SosProblem:
    """``target >= 0`` on ``{g >= 0 for g in generators}`` over *variables*.

    ``multiplier_degrees`` holds ``deg σ_0, deg σ_1, …``; ``None`` picks the
    smallest consistent degrees (see ``default_degrees``).
    """

    target: Polynomial
    generators: tuple[Polynomial, ...] = ()
    variables: tuple[VarId, ...] = ()
    multiplier_degrees: tuple[int, ...] | None = None
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "generators", tuple(self.generators))
        variables = tuple(self.variables) or _collect_variables(self.target, self.generators)
        object.__setattr__(self, "variables", tuple(sorted(set(variables))))
        allowed = set(self.variables)
        for label, poly in [("target", self.target), *((f"generator {j + 1}", g) for j, g in enumerate(self.generators))]:
            stray = [v.name for v in poly.variables() if v not in allowed]
            if stray:
                raise DegreeError(f"{label} mentions undeclared variable(s) {', '.join(stray)}")
        if self.multiplier_degrees is not None:
            degrees = tuple(int(d) for d in self.multiplier_degrees)
            object.__setattr__(self, "multiplier_degrees", degrees)

    def degrees(self) -> tuple[int, ...]:
        if self.multiplier_degrees is None:
            return default_degrees(self.target, self.generators)
        return self.multiplier_degrees

    def with_degrees(self, degrees: Sequence[int]) -> SosProblem:
        return SosProblem(self.target, self.generators, self.variables, tuple(degrees), self.name)

    def scaled(self) -> tuple[SosProblem, float, tuple[float, ...]]:
        """Copy with every polynomial divided by its largest |coefficient|."""
        t_scale = self.target.max_abs_coeff() or 1.0
        g_scales = tuple(g.max_abs_coeff() or 1.0 for g in self.generators)
        scaled = SosProblem(
            self.target.scale(1.0 / t_scale),
            tuple(g.scale(1.0 / s) for g, s in zip(self.generators, g_scales)),
            self.variables,
            self.multiplier_degrees,
            self.name,
        )
        return scaled, t_scale, g_scales


def _collect_variables(target: Polynomial, generators: Sequence[Polynomial]) -> tuple[VarId, ...]:
    found = set(target.variables())
    for g in generators:
        found.update(g.variables())
    return tuple(sorted(found))


@dataclass
class SosCertificate:
    """Gram matrices ``G_j`` over monomial bases ``m_j``, one per multiplier."""

    bases: tuple[tuple[Monomial, ...], ...]
    gram_matrices: tuple[np.ndarray, ...]
    residual: float = float("nan")
    min_eigenvalue: float = float("nan")

    def multiplier(self, j: int) -> Polynomial:
        basis, gram = self.bases[j], self.gram_matrices[j]
        acc: dict[Monomial, float] = {}
        for a, ma in enumerate(basis):
            for b, mb in enumerate(basis):
                mono = ma * mb
                acc[mono] = acc.get(mono, 0.0) + float(gram[a, b])
        return Polynomial(acc)

    def to_dict(self) -> dict[str, Any]:
        return {
            "multipliers": [
                {"basis": [str(m) for m in basis], "gram": np.asarray(gram).tolist()}
                for basis, gram in zip(self.bases, self.gram_matrices)
            ],
            "residual": self.residual,
            "min_eigenvalue": self.min_eigenvalue,
        }


class CertificateCheck(NamedTuple):
    accepted: bool
    residual: float
    min_eigenvalue: float


class SosStatus(Enum):
    CERTIFIED = "certified"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"
    REJECTED = "rejected"


@dataclass
class SosResult:
    status: SosStatus
    degrees: tuple[int, ...]
    certificate: SosCertificate | None = None
    attempts: int = 1
    sdp_iterations: int = 0
    reason: str = ""
    escalate: bool = field(default=False, repr=False)

    @property
    def certified(self) -> bool:
        return self.status is SosStatus.CERTIFIED


# ---------------------------------------------------------------------------
# Compilation
# ---------------------------------------------------------------------------

def monomial_basis(variables: Sequence[VarId], degree: int) -> list[Monomial]:
    """All monomials of total degree <= *degree* in *variables*, graded-lex."""
    if degree < 0:
        raise DegreeError(f"basis degree must be nonnegative, got {degree}")
    variables = sorted(set(variables))
    out = [Monomial()]
    for d in range(1, degree + 1):
        out.extend(Monomial((v, 1) for v in combo) for combo in combinations_with_replacement(variables, d))
    return sorted(out, key=Monomial.sort_key)


def default_degrees(target: Polynomial, generators: Sequence[Polynomial], boost: int = 0) -> tuple[int, ...]:
    """``deg σ_0 = 2⌈deg target / 2⌉`` (raised to cover every generator), ``deg σ_j = deg σ_0 - deg p_j`` rounded down to even."""
    d0 = max([_even_ceil(target.degree), *(_even_ceil(g.degree) for g in generators)]) + boost
    return (d0, *(_even_floor(d0 - g.degree) for g in generators))


def identity_degree(degrees: Sequence[int], generators: Sequence[Polynomial]) -> int:
    return max([degrees[0], *(dj + g.degree for dj, g in zip(degrees[1:], generators))])


def _check_degrees(problem: SosProblem) -> tuple[int, ...]:
    degrees = problem.degrees()
    if len(degrees) != 1 + len(problem.generators):
        raise DegreeError(f"expected {1 + len(problem.generators)} multiplier degrees, got {len(degrees)}")
    if any(d < 0 or d % 2 for d in degrees):
        raise DegreeError(f"multiplier degrees must be even and nonnegative, got {degrees}")
    top = identity_degree(degrees, problem.generators)
    if problem.target.degree > top:
        need = default_degrees(problem.target, problem.generators)
        raise DegreeError(
            f"degree caps {degrees} too small: target has degree {problem.target.degree} "
            f"but the identity reaches only degree {top}; minimum workable degrees are {need}"
        )
    return degrees


def _layout(problem: SosProblem) -> tuple[tuple[int, ...], list[list[Monomial]], list[Monomial]]:
    degrees = _check_degrees(problem)
    bases = [monomial_basis(problem.variables, d // 2) for d in degrees]
    monos: set[Monomial] = set(problem.target.terms)
    for basis, poly in zip(bases, (Polynomial.constant(1.0), *problem.generators)):
        for a, ma in enumerate(basis):
            for mb in basis[a:]:
                prod = ma * mb
                monos.update(prod * m for m in poly.terms)
    return degrees, bases, sorted(monos, key=Monomial.sort_key)


def compile(problem: SosProblem) -> SdpFeasibility:  # noqa: A001 - mirrors the operation name
    """One equality per monomial of the identity, one PSD block per multiplier."""
    _, bases, monos = _layout(problem)
    index = {m: k for k, m in enumerate(monos)}
    acc: dict[tuple[int, int, int, int], float] = {}
    for blk, (basis, poly) in enumerate(zip(bases, (Polynomial.constant(1.0), *problem.generators))):
        for a, ma in enumerate(basis):
            for b in range(a, len(basis)):
                prod = ma * basis[b]
                for mono, coef in poly:
                    key = (index[prod * mono], blk, a, b)
                    acc[key] = acc.get(key, 0.0) + coef
    entries = [(*key, value) for key, value in sorted(acc.items()) if value != 0.0]
    rhs = [problem.target.coefficient(m) for m in monos]
    return SdpFeasibility.from_entries([len(b) for b in bases], entries, rhs)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def reconstruct(problem: SosProblem, cert: SosCertificate) -> Polynomial:
    """``σ_0 + Σ σ_j p_j`` as a canonical polynomial."""
    total = cert.multiplier(0)
    for j, g in enumerate(problem.generators, start=1):
        total = total + cert.multiplier(j) * g
    return total


def check_certificate(
    problem: SosProblem,
    cert: SosCertificate,
    *,
    eps_res: float | None = None,
    eps_psd: float | None = None,
) -> CertificateCheck:
    """Rebuild ``Σ m_jᵀ G_j m_j · p_j`` and compare it with the target."""
    eps_res = config.EPS_RES if eps_res is None else eps_res
    eps_psd = config.EPS_PSD if eps_psd is None else eps_psd
    expected = 1 + len(problem.generators)
    if len(cert.bases) != expected or len(cert.gram_matrices) != expected:
        raise CertificateError(f"certificate has {len(cert.gram_matrices)} multipliers, problem needs {expected}")
    for j, (basis, gram) in enumerate(zip(cert.bases, cert.gram_matrices)):
        shape = np.shape(gram)
        if shape != (len(basis), len(basis)):
            raise CertificateError(f"Gram matrix {j} has shape {shape} for a basis of {len(basis)} monomials")
    # raw sums: canonical form would drop mismatches below its relative threshold
    residual = max(
        (abs(problem.target.coefficient(m) - c) for m, c in _raw_terms(problem, cert).items()),
        default=0.0,
    )
    lam = min((min_eigenvalue(0.5 * (g + np.transpose(g))) for g in cert.gram_matrices if np.size(g)), default=0.0)
    accepted = residual <= eps_res and lam >= -eps_psd
    return CertificateCheck(accepted, float(residual), float(lam))


def _raw_terms(problem: SosProblem, cert: SosCertificate) -> dict[Monomial, float]:
    acc: dict[Monomial, float] = {m: 0.0 for m in problem.target.terms}
    for basis, gram, poly in zip(cert.bases, cert.gram_matrices, (Polynomial.constant(1.0), *problem.generators)):
        for a, ma in enumerate(basis):
            for b, mb in enumerate(basis):
                g_ab = float(gram[a, b])
                if g_ab == 0.0:
                    continue
                prod = ma * mb
                for mono, coef in poly:
                    key = prod * mono
                    acc[key] = acc.get(key, 0.0) + g_ab * coef
    return acc


def _project_psd(gram: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (gram + gram.T))
    return (vecs * np.clip(vals, 0.0, None)) @ vecs.T


# ---------------------------------------------------------------------------
# Certification with degree escalation
# ---------------------------------------------------------------------------

def _certify_at(
    problem: SosProblem,
    degrees: tuple[int, ...],
    sdp_opts: SdpOptions,
    eps_res: float,
    eps_psd: float,
) -> SosResult:
    posed = problem.with_degrees(degrees)
    scaled, t_scale, g_scales = posed.scaled()
    _, bases, _ = _layout(scaled)
    sdp = compile(scaled)
    log.debug("%s: solving degrees %s (%d equalities, blocks %s)",
              problem.name or "sos", degrees, sdp.n_constraints, sdp.blocks)
    sol = solve(sdp, sdp_opts)

    if sol.status is SdpStatus.INFEASIBLE:
        return SosResult(SosStatus.INFEASIBLE, degrees, sdp_iterations=sol.iterations,
                         reason=f"no certificate at multiplier degrees {degrees}", escalate=True)
    if sol.status is SdpStatus.NUMERICAL_FAILURE:
        return SosResult(SosStatus.NUMERICAL_FAILURE, degrees, sdp_iterations=sol.iterations,
                         reason=f"SDP solver failed at degrees {degrees}: {sol.message}", escalate=True)

    grams = tuple(np.asarray(X) for X in sol.X or ())
    scaled_cert = SosCertificate(tuple(tuple(b) for b in bases), grams)
    check = check_certificate(scaled, scaled_cert, eps_res=eps_res, eps_psd=eps_psd)
    if not check.accepted:
        # boundary certificates: clip onto the PSD cone and re-check before rejecting
        clipped = SosCertificate(scaled_cert.bases, tuple(_project_psd(g) for g in grams))
        retry = check_certificate(scaled, clipped, eps_res=eps_res, eps_psd=eps_psd)
        if retry.accepted:
            scaled_cert, check = clipped, retry
    if not check.accepted:
        return SosResult(
            SosStatus.REJECTED, degrees, sdp_iterations=sol.iterations, escalate=True,
            reason=f"certificate failed validation (residual {check.residual:.2e}, min eig {check.min_eigenvalue:.2e})",
        )

    factors = (t_scale, *(t_scale / s for s in g_scales))
    cert = SosCertificate(
        scaled_cert.bases,
        tuple(f * g for f, g in zip(factors, scaled_cert.gram_matrices)),
        residual=check.residual,
        min_eigenvalue=check.min_eigenvalue,
    )
    return SosResult(SosStatus.CERTIFIED, degrees, certificate=cert, sdp_iterations=sol.iterations)


def certify(
    problem: SosProblem,
    *,
    sdp_opts: SdpOptions | None = None,
    max_escalations: int = 2,
    boost: int = 0,
    degree_cap: int | None = None,
    eps_res: float | None = None,
    eps_psd: float | None = None,
) -> SosResult:
    """Certify *problem*, raising every multiplier degree by 2 after each failed attempt.

    The certificate residual is measured on the prescaled identity (target
    scaled to unit largest coefficient); Gram matrices are returned unscaled.
    """
    sdp_opts = sdp_opts or SdpOptions()
    eps_res = config.EPS_RES if eps_res is None else eps_res
    eps_psd = config.EPS_PSD if eps_psd is None else eps_psd
    if boost % 2 or boost < 0:
        raise DegreeError(f"degree boost must be even and nonnegative, got {boost}")

    base = problem.degrees()
    attempts = 0

    def _attempt() -> SosResult:
        nonlocal attempts
        extra = boost + 2 * attempts
        attempts += 1
        degrees = tuple(d + extra for d in base)
        result = _certify_at(problem, degrees, sdp_opts, eps_res, eps_psd)
        result.attempts = attempts
        next_degree = degrees[0] + 2
        if degree_cap is not None and next_degree > degree_cap:
            result.escalate = False
        return result

    if degree_cap is not None and base[0] + boost > degree_cap:
        raise DegreeError(f"degree cap {degree_cap} is below the minimum identity degree {base[0] + boost}")

    retrying = Retrying(
        stop=stop_after_attempt(1 + max_escalations),
        wait=wait_none(),
        retry=retry_if_result(lambda r: r.escalate),
        before_sleep=before_sleep_log(log, logging.DEBUG),
        retry_error_callback=lambda state: state.outcome.result(),
        reraise=True,
    )
    result = retrying(_attempt)
    level = logging.DEBUG if result.certified else logging.INFO
    log.log(level, "%s: %s after %d attempt(s) at degrees %s%s", problem.name or "sos", result.status.value,
            result.attempts, result.degrees, f" ({result.reason})" if result.reason else "")
    return result
