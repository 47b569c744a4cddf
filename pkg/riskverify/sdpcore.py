"""sdpcore.py – Dense interior-point solver for block-diagonal SDP feasibility.

Problem form
------------
Find block-diagonal ``X = diag(X_1, …, X_B) ⪰ 0`` with ``<A_k, X> = b_k`` for
``k = 1..m``.  Each ``A_k`` is symmetric and given as sparse upper-triangle
entries ``(k, block, i, j, value)``.

Method
------
Primal-dual path following on the homogeneous self-dual embedding of the
zero-objective problem::

    A(X) - b*tau = 0,   A*(y) + S = 0,   b'y - kappa = 0,
    X, S ⪰ 0,   tau, kappa >= 0

started from ``X = S = I``, ``y = 0``, ``tau = kappa = 1``.  Directions are
HKM with a Mehrotra predictor-corrector, the Schur matrix is factorised by
Cholesky, and one step length shared by all variables follows the
fraction-to-boundary rule.  The loop stops at the first iterate whose
``X / tau`` meets the equalities to tolerance.  Iterates stay near the central
path of the zero-objective embedding, so that ``X`` is strictly interior but
is not the analytic centre itself.  ``tau -> 0`` with ``b'y > 0`` yields a
Farkas ray ``y`` with ``A*(y) ⪯ 0``, which proves infeasibility.
"""
from __future__ import annotations

import hashlib
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import linalg as sla
from scipy import sparse

from . import config

log = logging.getLogger("riskverify.sdpcore")

__all__ = [
    "SdpInputError",
    "SdpStatus",
    "SdpOptions",
    "SdpFeasibility",
    "SdpSolution",
    "solve",
    "min_eigenvalue",
    "dump_problem",
    "load_problem",
]


class SdpInputError(ValueError):
    """Dimension mismatch, asymmetric matrix, or non-finite data."""


class SdpStatus(Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SdpOptions:
    max_iter: int = field(default_factory=lambda: config.SDP_MAX_ITER)
    tol: float = field(default_factory=lambda: config.SDP_TOL)
    step_fraction: float = 0.98
    infeasibility_tol: float = 1e-8
    dump_dir: Path | None = field(default_factory=lambda: config.SDP_DUMP_DIR)


# ---------------------------------------------------------------------------
# Problem data
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SdpFeasibility:
    """Block sizes, COO entries of the constraint matrices, and right-hand side.

    Entry arrays are parallel: entry ``e`` adds ``value[e]`` at
    ``(row[e], col[e])`` (and its mirror) of block ``block[e]`` of ``A_{constraint[e]}``.
    """

    blocks: tuple[int, ...]
    constraint: np.ndarray
    block: np.ndarray
    row: np.ndarray
    col: np.ndarray
    value: np.ndarray
    b: np.ndarray

    @classmethod
    def from_entries(
        cls,
        blocks: Sequence[int],
        entries: Iterable[tuple[int, int, int, int, float]],
        b: Sequence[float],
    ) -> SdpFeasibility:
        rows = list(entries)
        arr = np.array(rows, dtype=float).reshape(-1, 5)
        problem = cls(
            blocks=tuple(int(n) for n in blocks),
            constraint=arr[:, 0].astype(np.int64),
            block=arr[:, 1].astype(np.int64),
            row=arr[:, 2].astype(np.int64),
            col=arr[:, 3].astype(np.int64),
            value=arr[:, 4].copy(),
            b=np.asarray(b, dtype=float).reshape(-1),
        )
        problem.validate()
        return problem

    @classmethod
    def from_dense(
        cls,
        blocks: Sequence[int],
        matrices: Sequence[Sequence[np.ndarray]],
        b: Sequence[float],
    ) -> SdpFeasibility:
        """``matrices[k][blk]`` is the dense symmetric block of ``A_k``."""
        entries: list[tuple[int, int, int, int, float]] = []
        for k, per_block in enumerate(matrices):
            if len(per_block) != len(blocks):
                raise SdpInputError(f"constraint {k} has {len(per_block)} blocks, expected {len(blocks)}")
            for blk, (n, mat) in enumerate(zip(blocks, per_block)):
                mat = np.asarray(mat, dtype=float)
                if mat.shape != (n, n):
                    raise SdpInputError(f"constraint {k} block {blk} has shape {mat.shape}, expected {(n, n)}")
                if not np.all(np.isfinite(mat)):
                    raise SdpInputError(f"constraint {k} block {blk} contains NaN or Inf")
                if np.max(np.abs(mat - mat.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(mat), initial=0.0)):
                    raise SdpInputError(f"constraint {k} block {blk} is not symmetric")
                ii, jj = np.nonzero(np.triu(mat))
                entries.extend((k, blk, int(i), int(j), float(mat[i, j])) for i, j in zip(ii, jj))
        return cls.from_entries(blocks, entries, b)

    @property
    def n_constraints(self) -> int:
        return int(self.b.shape[0])

    @property
    def n_entries(self) -> int:
        return int(self.value.shape[0])

    def validate(self) -> None:
        if not self.blocks or any(n < 1 for n in self.blocks):
            raise SdpInputError(f"block sizes must be positive, got {self.blocks}")
        m = self.n_constraints
        if m == 0:
            raise SdpInputError("equality list is empty")
        if not np.all(np.isfinite(self.b)):
            raise SdpInputError("right-hand side contains NaN or Inf")
        if not np.all(np.isfinite(self.value)):
            raise SdpInputError("constraint matrices contain NaN or Inf")
        lengths = {a.shape[0] for a in (self.constraint, self.block, self.row, self.col, self.value)}
        if len(lengths) != 1:
            raise SdpInputError("entry arrays have different lengths")
        if self.n_entries == 0:
            return
        if self.constraint.min() < 0 or self.constraint.max() >= m:
            raise SdpInputError(f"constraint index out of range 0..{m - 1}")
        if self.block.min() < 0 or self.block.max() >= len(self.blocks):
            raise SdpInputError(f"block index out of range 0..{len(self.blocks) - 1}")
        sizes = np.asarray(self.blocks)[self.block]
        if self.row.min() < 0 or np.any(self.col >= sizes):
            raise SdpInputError("entry index outside its block")
        if np.any(self.row > self.col):
            raise SdpInputError("entries must lie in the upper triangle (i <= j)")

    def digest(self) -> str:
        h = hashlib.sha1()
        h.update(np.asarray(self.blocks, dtype=np.int64).tobytes())
        for arr in (self.constraint, self.block, self.row, self.col, self.value, self.b):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def dense_blocks(self) -> list[np.ndarray]:
        """Per block, the stack ``(m, n, n)`` of symmetric constraint matrices."""
        m = self.n_constraints
        out = []
        for blk, n in enumerate(self.blocks):
            sel = self.block == blk
            k, i, j, v = self.constraint[sel], self.row[sel], self.col[sel], self.value[sel]
            stack = np.zeros((m, n, n))
            np.add.at(stack, (k, i, j), v)
            off = i != j
            np.add.at(stack, (k[off], j[off], i[off]), v[off])
            out.append(stack)
        return out

    def apply(self, X: Sequence[np.ndarray]) -> np.ndarray:
        """``A(X)`` evaluated straight from the entries (independent of solver internals)."""
        out = np.zeros(self.n_constraints)
        for e in range(self.n_entries):
            blk, i, j = self.block[e], self.row[e], self.col[e]
            weight = 1.0 if i == j else 2.0
            out[self.constraint[e]] += weight * self.value[e] * X[blk][i, j]
        return out


@dataclass
class SdpSolution:
    status: SdpStatus
    X: tuple[np.ndarray, ...] | None = None
    infeasibility_certificate: np.ndarray | None = None
    iterations: int = 0
    max_residual: float = float("nan")
    min_eigenvalue: float = float("nan")
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status is SdpStatus.FEASIBLE


# ---------------------------------------------------------------------------
# Linear algebra helpers
# ---------------------------------------------------------------------------

def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def min_eigenvalue(matrix: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    mat = np.asarray(matrix, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise SdpInputError(f"expected a square matrix, got shape {mat.shape}")
    if mat.size == 0:
        return float("inf")
    if not np.all(np.isfinite(mat)):
        raise SdpInputError("matrix contains NaN or Inf")
    if np.max(np.abs(mat - mat.T)) > 1e-12 * max(1.0, float(np.max(np.abs(mat)))):
        raise SdpInputError("matrix is not symmetric")
    return float(sla.eigvalsh(_sym(mat), subset_by_index=[0, 0])[0])


class _BlockOperator:
    """``A``, ``A*`` and the HKM Schur matrix for one problem."""

    def __init__(self, problem: SdpFeasibility):
        self.m = problem.n_constraints
        self.blocks = problem.blocks
        self.stacks: list[np.ndarray] = []
        self.flats: list[sparse.csr_matrix] = []
        self.active: list[np.ndarray] = []
        for n, stack in zip(problem.blocks, problem.dense_blocks()):
            flat = stack.reshape(self.m, n * n)
            rows = np.flatnonzero(np.any(flat != 0.0, axis=1))
            self.active.append(rows)
            self.stacks.append(stack[rows])
            self.flats.append(sparse.csr_matrix(flat))

    def apply(self, mats: Sequence[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.m)
        for flat, mat in zip(self.flats, mats):
            out += flat @ mat.reshape(-1)
        return out

    def adjoint(self, y: np.ndarray) -> list[np.ndarray]:
        return [(flat.T @ y).reshape(n, n) for flat, n in zip(self.flats, self.blocks)]

    def schur(self, X: Sequence[np.ndarray], Sinv: Sequence[np.ndarray]) -> np.ndarray:
        # M_kl = tr(A_k X A_l S^-1)
        M = np.zeros((self.m, self.m))
        for rows, stack, Xb, Si in zip(self.active, self.stacks, X, Sinv):
            if rows.size == 0:
                continue
            W = np.matmul(np.matmul(Xb, stack), Si).reshape(rows.size, -1)
            A = stack.reshape(rows.size, -1)
            M[np.ix_(rows, rows)] += A @ W.T
        return _sym(M)


def _max_step(chols: Sequence[np.ndarray], dirs: Sequence[np.ndarray]) -> float:
    alpha = np.inf
    for L, D in zip(chols, dirs):
        half = sla.solve_triangular(L, D, lower=True)
        W = sla.solve_triangular(L, half.T, lower=True)
        lam = sla.eigvalsh(_sym(W), subset_by_index=[0, 0])[0]
        if lam < 0:
            alpha = min(alpha, -1.0 / lam)
    return alpha


def _inner(A: Sequence[np.ndarray], B: Sequence[np.ndarray]) -> float:
    return float(sum(np.vdot(a, b) for a, b in zip(A, B)))


def _independent_rows(op: _BlockOperator, b: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray | None]:
    """Indices of a maximal independent set of equalities, or a Farkas ray if the others contradict them.

    Works on the Gram matrix ``G_kl = <A_k, A_l>``: its null space holds the
    row dependencies, and ``b`` must be orthogonal to it.
    """
    G = np.zeros((op.m, op.m))
    for flat in op.flats:
        G += (flat @ flat.T).toarray()
    lam, vecs = np.linalg.eigh(_sym(G))
    null = lam <= 1e-12 * max(float(lam[-1]), 1e-300)
    if not np.any(null):
        return np.arange(op.m), None
    N = vecs[:, null]
    proj = N @ (N.T @ b)
    if np.max(np.abs(proj)) > tol:
        # A*(proj) = 0 and b'proj = |N'b|² > 0
        return np.arange(0), proj / float(b @ proj)
    rank = op.m - int(np.count_nonzero(null))
    _, piv = sla.qr(G, mode="r", pivoting=True)
    return np.sort(piv[:rank]), None


def _restrict(problem: SdpFeasibility, rows: np.ndarray) -> SdpFeasibility:
    renumber = np.full(problem.n_constraints, -1, dtype=np.int64)
    renumber[rows] = np.arange(rows.size)
    sel = renumber[problem.constraint] >= 0
    return SdpFeasibility(
        problem.blocks,
        renumber[problem.constraint[sel]],
        problem.block[sel],
        problem.row[sel],
        problem.col[sel],
        problem.value[sel],
        problem.b[rows],
    )


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def solve(problem: SdpFeasibility, opts: SdpOptions | None = None) -> SdpSolution:
    """Decide feasibility of *problem*; see the module docstring for the method."""
    opts = opts or SdpOptions()
    problem.validate()
    if opts.dump_dir is not None:
        dump_problem(problem, Path(opts.dump_dir) / f"sdp_{problem.digest()}.txt")

    op = _BlockOperator(problem)
    b = problem.b
    bscale = max(1.0, float(np.max(np.abs(b))))

    rows, ray = _independent_rows(op, b, opts.tol * bscale)
    if ray is not None:
        log.debug("sdp %s: infeasible, dependent equalities disagree on the right-hand side", problem.digest())
        return SdpSolution(SdpStatus.INFEASIBLE, infeasibility_certificate=ray,
                           message="linearly dependent equalities are inconsistent")
    if rows.size == 0:
        # every A_k is zero and b = 0
        return SdpSolution(SdpStatus.FEASIBLE, X=tuple(np.eye(n) for n in problem.blocks),
                           max_residual=float(np.max(np.abs(b))), min_eigenvalue=1.0)
    if rows.size < problem.n_constraints:
        log.debug("sdp %s: dropping %d dependent equalities", problem.digest(), problem.n_constraints - rows.size)
        reduced = solve(_restrict(problem, rows), replace(opts, dump_dir=None))
        if reduced.status is SdpStatus.FEASIBLE and reduced.X is not None:
            reduced.max_residual = float(np.max(np.abs(problem.apply(reduced.X) - b)))
        elif reduced.infeasibility_certificate is not None:
            full = np.zeros(problem.n_constraints)
            full[rows] = reduced.infeasibility_certificate
            reduced.infeasibility_certificate = full
        return reduced

    nu = sum(problem.blocks) + 1

    X = [np.eye(n) for n in problem.blocks]
    S = [np.eye(n) for n in problem.blocks]
    y = np.zeros(problem.n_constraints)
    tau = kappa = 1.0

    def _fail(it: int, msg: str) -> SdpSolution:
        log.debug("sdp %s: numerical failure after %d iterations: %s", problem.digest(), it, msg)
        return SdpSolution(SdpStatus.NUMERICAL_FAILURE, iterations=it, message=msg)

    for it in range(opts.max_iter + 1):
        AX = op.apply(X)
        pres = float(np.max(np.abs(AX / tau - b)))
        if pres <= opts.tol * bscale:
            Xsol = tuple(_sym(Xb) / tau for Xb in X)
            residual = float(np.max(np.abs(problem.apply(Xsol) - b)))
            lam = min(min_eigenvalue(Xb) for Xb in Xsol)
            log.debug("sdp %s: feasible after %d iterations (residual %.2e, min eig %.2e)",
                      problem.digest(), it, residual, lam)
            return SdpSolution(SdpStatus.FEASIBLE, X=Xsol, iterations=it, max_residual=residual, min_eigenvalue=lam)

        by = float(b @ y)
        if by > 0:
            ray = y / by
            worst = max(float(sla.eigvalsh(Ab, subset_by_index=[Ab.shape[0] - 1] * 2)[0])
                        for Ab in (_sym(a) for a in op.adjoint(ray)))
            if worst <= opts.infeasibility_tol:
                log.debug("sdp %s: infeasible after %d iterations (ray max eig %.2e)", problem.digest(), it, worst)
                return SdpSolution(SdpStatus.INFEASIBLE, infeasibility_certificate=ray, iterations=it,
                                   max_residual=pres, message="dual improving ray found")

        if it == opts.max_iter:
            break

        rp = b * tau - AX
        Rd = [Aty + Sb for Aty, Sb in zip(op.adjoint(y), S)]
        rg = kappa - by
        mu = (_inner(X, S) + tau * kappa) / nu

        try:
            LX = [sla.cholesky(Xb, lower=True) for Xb in X]
            LS = [sla.cholesky(Sb, lower=True) for Sb in S]
            Sinv = [sla.cho_solve((L, True), np.eye(L.shape[0])) for L in LS]
            M = op.schur(X, Sinv)
            factor = sla.cho_factor(M, lower=True)
        except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
            return _fail(it, f"factorisation failed: {exc}")

        v = sla.cho_solve(factor, b)
        XRdSi = op.apply([Xb @ R @ Si for Xb, R, Si in zip(X, Rd, Sinv)])

        def direction(eta: float, Rc: list[np.ndarray], rtk: float):
            h = eta * rp - op.apply(Rc) - eta * XRdSi
            u = sla.cho_solve(factor, h)
            dtau = (eta * rg + rtk / tau - b @ u) / (b @ v + kappa / tau)
            dy = u + v * dtau
            dS = [-Aty - eta * R for Aty, R in zip(op.adjoint(dy), Rd)]
            dX = [Rc_b - _sym(Xb @ dSb @ Si) for Rc_b, Xb, dSb, Si in zip(Rc, X, dS, Sinv)]
            dkappa = (rtk - kappa * dtau) / tau
            return dX, dy, dS, float(dtau), float(dkappa)

        def step_length(dX, dS, dtau, dkappa) -> float:
            alpha = min(_max_step(LX, dX), _max_step(LS, dS))
            if dtau < 0:
                alpha = min(alpha, -tau / dtau)
            if dkappa < 0:
                alpha = min(alpha, -kappa / dkappa)
            return alpha

        # predictor
        dXa, _, dSa, dta, dka = direction(1.0, [-Xb for Xb in X], -tau * kappa)
        alpha_a = min(1.0, step_length(dXa, dSa, dta, dka))
        mu_aff = (_inner([Xb + alpha_a * d for Xb, d in zip(X, dXa)],
                         [Sb + alpha_a * d for Sb, d in zip(S, dSa)])
                  + (tau + alpha_a * dta) * (kappa + alpha_a * dka)) / nu
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

        # corrector
        Rc = [sigma * mu * Si - Xb - _sym(dXab @ dSab @ Si)
              for Si, Xb, dXab, dSab in zip(Sinv, X, dXa, dSa)]
        rtk = sigma * mu - tau * kappa - dta * dka
        dX, dy, dS, dtau, dkappa = direction(1.0 - sigma, Rc, rtk)
        alpha = min(1.0, opts.step_fraction * step_length(dX, dS, dtau, dkappa))
        if not np.isfinite(alpha) or alpha < 1e-12:
            return _fail(it, f"step length collapsed ({alpha:.1e})")

        X = [_sym(Xb + alpha * d) for Xb, d in zip(X, dX)]
        S = [_sym(Sb + alpha * d) for Sb, d in zip(S, dS)]
        y = y + alpha * dy
        tau += alpha * dtau
        kappa += alpha * dkappa
        log.debug("sdp it %3d  mu=%.3e  pres=%.3e  tau=%.3e  kappa=%.3e  sigma=%.3f  alpha=%.3f",
                  it + 1, mu, pres, tau, kappa, sigma, alpha)

    return _fail(opts.max_iter, f"iteration cap {opts.max_iter} reached")


# ---------------------------------------------------------------------------
# Plain-text dump
# ---------------------------------------------------------------------------
# Format (indices 1-based, one upper-triangle entry per line):
#
#   blocks <n_1> <n_2> ...
#   equalities <m>
#   <k> <block> <i> <j> <value>
#   ...
#   b <b_1> <b_2> ... <b_m>

def dump_problem(problem: SdpFeasibility, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        "blocks " + " ".join(str(n) for n in problem.blocks),
        f"equalities {problem.n_constraints}",
    ]
    order = np.lexsort((problem.col, problem.row, problem.block, problem.constraint))
    for e in order:
        lines.append(
            f"{problem.constraint[e] + 1} {problem.block[e] + 1} {problem.row[e] + 1} "
            f"{problem.col[e] + 1} {float(problem.value[e])!r}"
        )
    lines.append("b " + " ".join(repr(float(v)) for v in problem.b))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.debug("Wrote SDP dump → %s", path)
    return path


def load_problem(path: str | Path) -> SdpFeasibility:
    lines = [ln.split() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    try:
        if lines[0][0] != "blocks" or lines[1][0] != "equalities" or lines[-1][0] != "b":
            raise SdpInputError(f"{path}: not an SDP dump")
        blocks = [int(v) for v in lines[0][1:]]
        entries = [
            (int(k) - 1, int(blk) - 1, int(i) - 1, int(j) - 1, float(val))
            for k, blk, i, j, val in lines[2:-1]
        ]
        b = [float(v) for v in lines[-1][1:]]
    except (IndexError, ValueError) as exc:
        if isinstance(exc, SdpInputError):
            raise
        raise SdpInputError(f"{path}: malformed SDP dump ({exc})") from None
    if len(b) != int(lines[1][1]):
        raise SdpInputError(f"{path}: expected {lines[1][1]} right-hand side values, got {len(b)}")
    return SdpFeasibility.from_entries(blocks, entries, b)
