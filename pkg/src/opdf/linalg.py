"""Singular value decomposition by one-sided (Hestenes) Jacobi iteration, plus truncation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceFailure, ExtentMismatch

OFF_DIAGONAL_TOL = 1e-12
MAX_SWEEPS = 60


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray  # m x r, orthonormal columns
    s: np.ndarray  # r, nonincreasing
    vt: np.ndarray  # r x n, orthonormal rows

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


@dataclass(frozen=True)
class TruncatedSvd:
    kept: SvdResult
    epsilon: float
    kept_rank: int


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: every column pair meets exactly once per sweep, disjoint within a round."""
    players = list(range(n + (n % 2)))
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for k in range(m // 2):
            a, b = players[k], players[m - 1 - k]
            if a < n and b < n:
                p.append(min(a, b))
                q.append(max(a, b))
        if p:
            rounds.append((np.array(p), np.array(q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi_tall(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthogonalize the columns of a tall matrix; returns (W, col norms, V) with A V = W."""
    m, n = a.shape
    w = a.copy()
    v = np.eye(n)
    if n < 2:
        return w, np.linalg.norm(w, axis=0), v
    schedule = _round_robin(n)
    for _ in range(MAX_SWEEPS):
        rotated = False
        for p, q in schedule:
            wp, wq = w[:, p], w[:, q]
            alpha = np.einsum("ij,ij->j", wp, wp)
            beta = np.einsum("ij,ij->j", wq, wq)
            gamma = np.einsum("ij,ij->j", wp, wq)
            active = np.abs(gamma) > OFF_DIAGONAL_TOL * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            wp, wq = w[:, p], w[:, q]
            w[:, p] = c * wp - s * wq
            w[:, q] = s * wp + c * wq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            return w, np.linalg.norm(w, axis=0), v
    raise ConvergenceFailure(
        f"one-sided Jacobi did not reach off-diagonal tolerance {OFF_DIAGONAL_TOL} "
        f"within {MAX_SWEEPS} sweeps on a {m}x{n} matrix"
    )


def _complete_orthonormal(u: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Replace the columns of ``u`` not flagged in ``filled`` by an orthonormal completion."""
    m = u.shape[0]
    basis = [u[:, j] for j in np.flatnonzero(filled)]
    e = 0
    for j in np.flatnonzero(~filled):
        while True:
            cand = np.zeros(m)
            cand[e] = 1.0
            e += 1
            for _ in range(2):
                for b in basis:
                    cand -= (b @ cand) * b
            norm = np.linalg.norm(cand)
            if norm > 1e-8:
                break
        cand /= norm
        u[:, j] = cand
        basis.append(cand)
    return u


def _svd_tall(a: np.ndarray) -> SvdResult:
    w, norms, v = _jacobi_tall(a)
    order = np.argsort(-norms, kind="stable")
    s = norms[order]
    w = w[:, order]
    v = v[:, order]
    filled = s > np.finfo(np.float64).tiny
    u = np.zeros_like(w)
    u[:, filled] = w[:, filled] / s[filled]
    if not filled.all():
        u = _complete_orthonormal(u, filled)
        s = np.where(filled, s, 0.0)
    return SvdResult(u=u, s=s, vt=np.ascontiguousarray(v.T))


def _orient(res: SvdResult) -> SvdResult:
    # largest-magnitude entry of each u column is positive; argmax picks the lowest row on ties
    pivot = np.argmax(np.abs(res.u), axis=0)
    signs = np.where(res.u[pivot, np.arange(res.u.shape[1])] < 0, -1.0, 1.0)
    return SvdResult(u=res.u * signs, s=res.s, vt=res.vt * signs[:, None])


def svd(m: np.ndarray) -> SvdResult:
    """Thin SVD ``m = u @ diag(s) @ vt`` with ``r = min(rows, cols)`` singular triplets.

    Deterministic for a fixed input; each singular pair is oriented so that the
    largest-magnitude entry of its ``u`` column is positive.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ExtentMismatch(f"svd expects a 2-order tensor, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("svd input contains non-finite entries")
    rows, cols = m.shape
    if rows >= cols:
        res = _svd_tall(m)
    else:
        t = _svd_tall(m.T)
        res = SvdResult(u=np.ascontiguousarray(t.vt.T), s=t.s, vt=np.ascontiguousarray(t.u.T))
    return _orient(res)


def truncated_svd(m: np.ndarray, max_rank: int | None = None, tol: float | None = None) -> TruncatedSvd:
    """Keep the fewest singular triplets with tail norm <= ``tol``, capped at ``max_rank``.

    With only ``max_rank`` the kept rank is ``min(max_rank, r)``.  ``epsilon`` is the
    Frobenius norm of the discarded tail.
    """
    if max_rank is None and tol is None:
        raise ValueError("truncated_svd needs max_rank or tol")
    if tol is not None and tol < 0:
        raise ValueError(f"tol must be >= 0, got {tol}")
    if max_rank is not None and max_rank < 1:
        raise ValueError(f"max_rank must be >= 1, got {max_rank}")
    full = svd(m)
    r = full.s.size
    # tails[k] = sqrt(sum of s[k:]**2), accumulated from the small end
    sq = full.s[::-1] ** 2
    tails = np.sqrt(np.concatenate([np.cumsum(sq)[::-1], [0.0]]))
    if tol is None:
        keep = r
    else:
        keep = next(k for k in range(1, r + 1) if tails[k] <= tol)
    if max_rank is not None:
        keep = min(keep, max_rank)
    keep = max(1, min(keep, r))
    kept = SvdResult(
        u=np.ascontiguousarray(full.u[:, :keep]),
        s=full.s[:keep].copy(),
        vt=np.ascontiguousarray(full.vt[:keep]),
    )
    return TruncatedSvd(kept=kept, epsilon=float(tails[keep]), kept_rank=keep)
