"""Histogram digitization, discrete entropy, and mutual information.

Dependencies between layers are measured by binning activations into
uniform-width histograms and computing MI (in nats) over the joint
contingency table. The pairwise feature-map scan finds the most strongly
coupled channel pairs between two convolutional layers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .reduce import global_average_pool

DEFAULT_BINS = 20

# Small negative MI totals are pure accumulation noise; anything below
# this is a genuine bug.
NEGATIVE_MI_GUARD = -1e-9


@dataclass(frozen=True)
class Digitization:
    """Bin assignment of a flat value array over uniform-width bins."""

    bin_index: np.ndarray
    edges: np.ndarray
    n_bins: int


@dataclass(frozen=True)
class MiPair:
    """One channel pair from the pairwise feature-map scan."""

    map_a: tuple[str, int]
    map_b: tuple[str, int]
    mi_nats: float


def thread_cap() -> int:
    """Worker cap from QIXAI_THREADS; 0/unset means implementation default (1)."""
    raw = os.environ.get("QIXAI_THREADS", "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"QIXAI_THREADS must be a nonnegative integer, got {raw!r}")
    if value < 0:
        raise ValueError(f"QIXAI_THREADS must be a nonnegative integer, got {value}")
    return value if value > 0 else 1


def digitize(values: np.ndarray, n_bins: int = DEFAULT_BINS) -> Digitization:
    """Assign each value to a uniform-width bin over [min, max].

    The maximum value lands in the last bin; a constant input maps
    everything to bin 0.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if len(values) == 0:
        raise ValueError("cannot digitize an empty array")
    if not np.isfinite(values).all():
        raise ValueError("values must be finite")
    if n_bins < 2:
        raise ValueError(f"n_bins must be >= 2, got {n_bins}")
    lo = float(values.min())
    hi = float(values.max())
    if hi > lo:
        edges = np.linspace(lo, hi, n_bins + 1)
        width = (hi - lo) / n_bins
        idx = np.floor((values - lo) / width).astype(np.int64)
        np.clip(idx, 0, n_bins - 1, out=idx)
    else:
        # Degenerate constant input: width-1 bins keep the edges ascending.
        edges = lo + np.arange(n_bins + 1, dtype=np.float64)
        idx = np.zeros(len(values), dtype=np.int64)
    return Digitization(bin_index=idx, edges=edges, n_bins=n_bins)


def entropy(d: Digitization) -> float:
    """Shannon entropy H = -sum p ln p over occupied bins, in nats."""
    counts = np.bincount(d.bin_index, minlength=d.n_bins)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def mutual_information(x: Digitization, y: Digitization) -> float:
    """Discrete MI in nats over the joint contingency table of two
    digitizations of equal length; clamped at >= 0."""
    if len(x.bin_index) != len(y.bin_index):
        raise ValueError(
            f"digitizations have different lengths: "
            f"{len(x.bin_index)} vs {len(y.bin_index)}"
        )
    n = len(x.bin_index)
    joint = np.bincount(
        x.bin_index * y.n_bins + y.bin_index, minlength=x.n_bins * y.n_bins
    ).reshape(x.n_bins, y.n_bins)
    pxy = joint / n
    px = pxy.sum(axis=1)
    py = pxy.sum(axis=0)
    mask = pxy > 0
    outer = px[:, None] * py[None, :]
    terms = pxy[mask] * np.log(pxy[mask] / outer[mask])
    total = float(terms.sum())
    if total < NEGATIVE_MI_GUARD:
        raise ValueError(f"mutual information accumulated to {total}, below guard")
    return max(total, 0.0)


def layer_mi(
    pooled_a: np.ndarray, pooled_b: np.ndarray, n_bins: int = DEFAULT_BINS
) -> float:
    """MI between two pooled N x C activation matrices, flattened whole.

    Reproduces the flatten-then-bin procedure: every sample/channel value of
    one layer is paired positionally with the other layer's, so the channel
    counts must match.
    """
    pooled_a = np.atleast_2d(np.asarray(pooled_a, dtype=np.float64))
    pooled_b = np.atleast_2d(np.asarray(pooled_b, dtype=np.float64))
    if pooled_a.shape[0] != pooled_b.shape[0]:
        raise ValueError(
            f"sample counts differ: {pooled_a.shape[0]} vs {pooled_b.shape[0]}"
        )
    if pooled_a.shape[1] != pooled_b.shape[1]:
        raise ValueError(
            f"flattened lengths differ ({pooled_a.shape[1]} vs "
            f"{pooled_b.shape[1]} channels); truncate both matrices to a "
            "common channel count first (see truncate_channels)"
        )
    return mutual_information(
        digitize(pooled_a.ravel(), n_bins), digitize(pooled_b.ravel(), n_bins)
    )


def pairwise_feature_map_mi(
    acts_a: np.ndarray,
    acts_b: np.ndarray,
    n_bins: int = DEFAULT_BINS,
    top_k: int = 10,
    layer_names: tuple[str, str] = ("a", "b"),
    spatial: bool = False,
) -> list[MiPair]:
    """MI between every channel pair of two NHWC activation tensors.

    Each channel is reduced to one scalar per sample by GAP (or flattened
    across space when ``spatial``), digitized, and scored; returns the
    ``top_k`` pairs sorted by descending MI, ties broken lexicographically
    by channel indices.
    """
    acts_a = np.asarray(acts_a, dtype=np.float64)
    acts_b = np.asarray(acts_b, dtype=np.float64)
    if acts_a.ndim != 4 or acts_b.ndim != 4:
        raise ValueError("activations must be rank-4 NHWC tensors")
    if acts_a.shape[0] != acts_b.shape[0]:
        raise ValueError(
            f"sample counts differ: {acts_a.shape[0]} vs {acts_b.shape[0]}"
        )
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")

    def channel_series(acts: np.ndarray) -> np.ndarray:
        if spatial:
            n, h, w, c = acts.shape
            return acts.transpose(3, 0, 1, 2).reshape(c, n * h * w)
        return global_average_pool(acts).T

    series_a = channel_series(acts_a)
    series_b = channel_series(acts_b)
    if spatial and series_a.shape[1] != series_b.shape[1]:
        raise ValueError("spatial flattening requires equal spatial extents")
    dig_a = [digitize(s, n_bins) for s in series_a]
    dig_b = [digitize(s, n_bins) for s in series_b]

    pairs = [(i, j) for i in range(len(dig_a)) for j in range(len(dig_b))]

    def score(pair: tuple[int, int]) -> float:
        return mutual_information(dig_a[pair[0]], dig_b[pair[1]])

    workers = thread_cap()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score, pairs))
    else:
        scores = [score(p) for p in pairs]

    ranked = sorted(zip(pairs, scores), key=lambda t: (-t[1], t[0]))
    return [
        MiPair(map_a=(layer_names[0], i), map_b=(layer_names[1], j), mi_nats=mi)
        for (i, j), mi in ranked[:top_k]
    ]
