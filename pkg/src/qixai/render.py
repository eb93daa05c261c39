"""Heatmap rendering: matrix -> lossless PNG, one pixel per cell.

Two colormaps: "gray" for unsigned data (min-max normalized) and the
diverging blue-white-red "bwr" for signed data, centered at 0 so that
sign survives the color mapping. A constant matrix renders at the
colormap midpoint.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORMAPS = ("gray", "diverging")


def normalize_matrix(matrix: np.ndarray, colormap: str) -> np.ndarray:
    """Map matrix values to [0, 1] for the given colormap.

    gray: min-max; diverging: symmetric around 0 so value 0 maps to 0.5.
    Degenerate (constant) input maps to 0.5 everywhere.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"expected a rank-2 matrix, got rank {matrix.ndim}")
    if colormap not in COLORMAPS:
        raise ValueError(f"colormap must be one of {COLORMAPS}, got {colormap!r}")
    if colormap == "diverging":
        extent = float(np.abs(matrix).max())
        if extent == 0.0:
            return np.full(matrix.shape, 0.5)
        return 0.5 + matrix / (2.0 * extent)
    lo = float(matrix.min())
    hi = float(matrix.max())
    if hi == lo:
        return np.full(matrix.shape, 0.5)
    return (matrix - lo) / (hi - lo)


def render_heatmap(
    matrix: np.ndarray, path, colormap: str = "gray", scale: int = 1
) -> None:
    """Write ``matrix`` as a PNG with one pixel per cell (times ``scale``)."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    normalized = normalize_matrix(matrix, colormap)
    if scale > 1:
        normalized = np.kron(normalized, np.ones((scale, scale)))
    cmap = plt.get_cmap("bwr" if colormap == "diverging" else "gray")
    plt.imsave(path, normalized, cmap=cmap, vmin=0.0, vmax=1.0, format="png")
