"""Singular value decomposition via one-sided Jacobi rotations.

Self-contained numerical backbone for the PCA and spectrum analyses.
Intended for desk-scale matrices (thousands of rows, a few hundred
columns); robustness over speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_SWEEPS = 100
OFFDIAG_TOL = 1e-12


class ConvergenceError(Exception):
    """Jacobi sweeps failed to reach the off-diagonal threshold."""


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD: A = U @ diag(S) @ Vt with k = min(n, d).

    U is n x k column-orthonormal, S nonincreasing and nonnegative,
    Vt k x d row-orthonormal.
    """

    U: np.ndarray
    S: np.ndarray
    Vt: np.ndarray


def svd(A: np.ndarray) -> SvdResult:
    """Decompose a real n x d matrix.

    Sign convention: in each row of Vt the element of largest magnitude is
    nonnegative, which makes the result deterministic.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"expected a matrix, got rank {A.ndim}")
    if not np.isfinite(A).all():
        raise ValueError("matrix contains non-finite entries")

    n, d = A.shape
    if n >= d:
        U, S, V = _one_sided_jacobi(A)
        Vt = V.T
    else:
        # Decompose the transpose so columns never outnumber rows.
        U2, S, V2 = _one_sided_jacobi(A.T)
        U, Vt = V2, U2.T

    U, S, Vt = _apply_sign_convention(U, S, Vt)
    return SvdResult(U=U, S=S, Vt=Vt)


def _one_sided_jacobi(A: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-sided Jacobi on an n x d matrix with n >= d.

    Rotates column pairs of a working copy until all pairs are mutually
    orthogonal; singular values are the final column norms.
    """
    n, d = A.shape
    M = A.copy()
    V = np.eye(d)
    scale = float(np.linalg.norm(A))
    if scale == 0.0:
        return _complete_orthonormal(np.zeros((n, d)), np.zeros(d)), np.zeros(d), V

    for _ in range(MAX_SWEEPS):
        off = 0.0
        for p in range(d - 1):
            for q in range(p + 1, d):
                mp = M[:, p]
                mq = M[:, q]
                apq = float(mp @ mq)
                app = float(mp @ mp)
                aqq = float(mq @ mq)
                denom = np.sqrt(app * aqq)
                if denom > 0.0:
                    off = max(off, abs(apq) / denom)
                if abs(apq) <= OFFDIAG_TOL * max(denom, 1e-300):
                    continue
                theta = 0.5 * np.arctan2(2.0 * apq, app - aqq)
                c = np.cos(theta)
                s = np.sin(theta)
                new_p = c * mp + s * mq
                new_q = -s * mp + c * mq
                M[:, p] = new_p
                M[:, q] = new_q
                vp = V[:, p].copy()
                V[:, p] = c * vp + s * V[:, q]
                V[:, q] = -s * vp + c * V[:, q]
        if off <= OFFDIAG_TOL:
            break
    else:
        raise ConvergenceError(
            f"one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps "
            f"(off-diagonal {off:.3e} > {OFFDIAG_TOL:.0e})"
        )

    norms = np.linalg.norm(M, axis=0)
    order = np.argsort(-norms, kind="stable")
    S = norms[order]
    M = M[:, order]
    V = V[:, order]

    U = _complete_orthonormal(M, S)
    return U, S, V


def _complete_orthonormal(M: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Normalize columns of M; replace (near-)null columns so U stays
    column-orthonormal for rank-deficient inputs."""
    n, d = M.shape
    U = np.zeros((n, d))
    tol = max(S[0] if len(S) else 0.0, 1.0) * n * np.finfo(np.float64).eps
    good = []
    degenerate = []
    for j in range(d):
        if S[j] > tol:
            U[:, j] = M[:, j] / S[j]
            good.append(j)
        else:
            degenerate.append(j)
    basis = 0
    for j in degenerate:
        # Gram-Schmidt a canonical basis vector against existing columns.
        while basis < n:
            v = np.zeros(n)
            v[basis] = 1.0
            basis += 1
            for k in good:
                v -= (U[:, k] @ v) * U[:, k]
            norm = np.linalg.norm(v)
            if norm > 0.5:
                U[:, j] = v / norm
                good.append(j)
                break
        else:
            raise ConvergenceError("failed to complete orthonormal basis")
    return U


def _apply_sign_convention(
    U: np.ndarray, S: np.ndarray, Vt: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    U = U.copy()
    Vt = Vt.copy()
    for i in range(Vt.shape[0]):
        j = int(np.argmax(np.abs(Vt[i])))
        if Vt[i, j] < 0:
            Vt[i] = -Vt[i]
            U[:, i] = -U[:, i]
    return U, S, Vt


def dense_layer_spectrum(activations: np.ndarray) -> tuple[SvdResult, np.ndarray]:
    """SVD of a raw (uncentered) n x d activation matrix plus the
    cumulative singular-mass curve cumsum(S) / sum(S)."""
    activations = np.asarray(activations, dtype=np.float64)
    if activations.ndim != 2 or activations.shape[0] < 2:
        raise ValueError("activations must be a matrix with n >= 2 rows")
    if not activations.any():
        raise ValueError("activation matrix is all zero; spectrum undefined")
    result = svd(activations)
    # Same arithmetic order as reduce.explained_variance(singular_mass),
    # so the two paths agree bit-for-bit.
    cumulative = np.cumsum(result.S / result.S.sum())
    return result, cumulative
