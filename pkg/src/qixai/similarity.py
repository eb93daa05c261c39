"""Inner products and cosine-similarity matrices between layer representations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ZERO_NORM_EPS = 1e-300


@dataclass(frozen=True)
class SimilaritySummary:
    """Scalar statistics of one layer-pair cosine-similarity matrix.

    ``diagonal_mean`` is only defined for square matrices (sample-aligned
    comparison) and is None otherwise. ``zero_norm_rows`` counts rows with
    vanishing norm that were mapped to similarity 0.
    """

    layer_pair: tuple[str, str]
    matrix_mean: float
    diagonal_mean: float | None
    min: float
    max: float
    matrix_entry: str | None = None
    zero_norm_rows: int = 0


def cosine_similarity_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity: out[i, j] = <A_i, B_j> / (|A_i| |B_j|).

    Rows with norm <= 1e-300 produce similarity 0 instead of NaN.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ValueError(
            f"feature dimensions differ: {A.shape[1]} vs {B.shape[1]}"
        )
    norm_a = np.linalg.norm(A, axis=1)
    norm_b = np.linalg.norm(B, axis=1)
    safe_a = np.where(norm_a > ZERO_NORM_EPS, norm_a, 1.0)
    safe_b = np.where(norm_b > ZERO_NORM_EPS, norm_b, 1.0)
    out = (A / safe_a[:, None]) @ (B / safe_b[:, None]).T
    out[norm_a <= ZERO_NORM_EPS, :] = 0.0
    out[:, norm_b <= ZERO_NORM_EPS] = 0.0
    return out


def mean_inner_product(A: np.ndarray, B: np.ndarray) -> float:
    """Mean over samples i of <A_i, B_i> for identically shaped matrices."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape != B.shape:
        raise ValueError(f"shapes differ: {A.shape} vs {B.shape}")
    return float(np.einsum("ij,ij->i", A, B).mean())


def layer_similarity_summary(
    A: np.ndarray,
    B: np.ndarray,
    layer_pair: tuple[str, str] = ("a", "b"),
    matrix_entry: str | None = None,
) -> SimilaritySummary:
    """Compute the full similarity matrix and collapse it to scalars.

    ``matrix_mean`` averages all n*m entries; ``diagonal_mean`` averages
    the sample-aligned diagonal when n == m.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    matrix = cosine_similarity_matrix(A, B)
    n, m = matrix.shape
    zero_rows = int(
        (np.linalg.norm(A, axis=1) <= ZERO_NORM_EPS).sum()
        + (np.linalg.norm(B, axis=1) <= ZERO_NORM_EPS).sum()
    )
    return SimilaritySummary(
        layer_pair=tuple(layer_pair),
        matrix_mean=float(matrix.mean()),
        diagonal_mean=float(np.diagonal(matrix).mean()) if n == m else None,
        min=float(matrix.min()),
        max=float(matrix.max()),
        matrix_entry=matrix_entry,
        zero_norm_rows=zero_rows,
    )
