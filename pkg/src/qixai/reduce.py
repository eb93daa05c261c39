"""Dimensionality reduction: global average pooling and PCA.

PCA is backed by the in-house SVD in :mod:`qixai.decomp`. Both
explained-variance conventions are provided: true variance ratios
(s_i^2 / sum s_j^2) and raw singular-value mass (s_i / sum s_j).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import decomp

VARIANCE_MODES = ("variance_ratio", "singular_mass")


@dataclass(frozen=True)
class PcaModel:
    """Fitted principal axes.

    ``components`` is k x d with orthonormal rows; ``mean`` is the
    training mean (zeros when centering was disabled).
    """

    mean: np.ndarray
    components: np.ndarray
    singular_values: np.ndarray
    n_samples: int


def global_average_pool(activations: np.ndarray) -> np.ndarray:
    """Mean over the spatial axes of an NHWC tensor, giving N x C."""
    activations = np.asarray(activations, dtype=np.float64)
    if activations.ndim != 4:
        raise ValueError(f"expected rank-4 NHWC input, got rank {activations.ndim}")
    return activations.mean(axis=(1, 2))


def truncate_channels(pooled: np.ndarray, k: int) -> np.ndarray:
    """Keep the first k columns of a pooled N x C matrix.

    Faithful-replication helper for pipelines that slice channels before
    PCA; discards information and is off by default upstream.
    """
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.ndim != 2:
        raise ValueError(f"expected a pooled matrix, got rank {pooled.ndim}")
    if k < 1 or k > pooled.shape[1]:
        raise ValueError(f"cannot keep {k} of {pooled.shape[1]} channels")
    return pooled[:, :k].copy()


def fit_pca(data: np.ndarray, n_components: int, center: bool = True) -> PcaModel:
    """Fit PCA on an n x d matrix via SVD of the (optionally centered) data."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"expected a matrix, got rank {data.ndim}")
    n, d = data.shape
    if n < 2:
        raise ValueError(f"PCA requires n >= 2 samples, got {n}")
    if n_components < 1 or n_components > min(n, d):
        raise ValueError(
            f"n_components must be in [1, min(n, d)] = [1, {min(n, d)}], "
            f"got {n_components}"
        )
    mean = data.mean(axis=0) if center else np.zeros(d)
    result = decomp.svd(data - mean)
    return PcaModel(
        mean=mean,
        components=result.Vt[:n_components].copy(),
        singular_values=result.S[:n_components].copy(),
        n_samples=n,
    )


def transform_pca(model: PcaModel, data: np.ndarray) -> np.ndarray:
    """Project n x d data onto the fitted axes: (data - mean) @ components.T."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.components.shape[1]:
        raise ValueError(
            f"data must be n x {model.components.shape[1]}, got {data.shape}"
        )
    return (data - model.mean) @ model.components.T


def inverse_transform_pca(model: PcaModel, projected: np.ndarray) -> np.ndarray:
    """Map projected coordinates back to the original space (adds the mean)."""
    projected = np.asarray(projected, dtype=np.float64)
    if projected.ndim != 2 or projected.shape[1] != model.components.shape[0]:
        raise ValueError(
            f"projected data must be n x {model.components.shape[0]}, "
            f"got {projected.shape}"
        )
    return projected @ model.components + model.mean


def explained_variance(
    singular_values: np.ndarray, mode: str = "variance_ratio"
) -> tuple[np.ndarray, np.ndarray]:
    """Per-component ratios and their running sum.

    variance_ratio: s_i^2 / sum s_j^2 (standard PCA explained variance).
    singular_mass:  s_i / sum s_j (raw singular-value fractions).
    """
    if mode not in VARIANCE_MODES:
        raise ValueError(f"mode must be one of {VARIANCE_MODES}, got {mode!r}")
    s = np.asarray(singular_values, dtype=np.float64)
    if s.ndim != 1 or len(s) == 0:
        raise ValueError("singular values must be a nonempty vector")
    if (s < 0).any():
        raise ValueError("singular values must be nonnegative")
    if (np.diff(s) > 0).any():
        raise ValueError("singular values must be nonincreasing")
    if not s.any():
        raise ValueError("all singular values are zero; ratios undefined")
    weights = s * s if mode == "variance_ratio" else s
    ratios = weights / weights.sum()
    return ratios, np.cumsum(ratios)
