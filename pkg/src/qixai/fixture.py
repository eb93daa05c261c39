"""Deterministic synthetic fixture: the "smallcnn" model and a 64-sample
batch, used by the test suite and as a runnable demo.

smallcnn: conv 8 filters 3x3 (same) -> relu -> maxpool 2x2/2 ->
conv 16 filters 3x3 (same) -> relu -> global_avg_pool -> dense 1 ->
sigmoid, over a 32x32x3 input.

``python -m qixai.fixture OUTDIR`` writes the model spec, weights archive,
batch archive, and a ready-to-run analysis config into OUTDIR.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .model import LayerSpec, Model, format_model_spec, load_model
from .tensor import write_archive

SEED = 20240917
INPUT_SHAPE = (32, 32, 3)
BATCH_SIZE = 64

LAYERS = (
    LayerSpec("conv1", "conv2d", {"out_channels": 8, "kernel_h": 3, "kernel_w": 3, "stride": 1, "padding": "same"}),
    LayerSpec("relu1", "relu", {}),
    LayerSpec("pool1", "maxpool2d", {"pool_h": 2, "pool_w": 2, "stride": 2}),
    LayerSpec("conv2", "conv2d", {"out_channels": 16, "kernel_h": 3, "kernel_w": 3, "stride": 1, "padding": "same"}),
    LayerSpec("relu2", "relu", {}),
    LayerSpec("gap", "global_avg_pool", {}),
    LayerSpec("dense", "dense", {"out_features": 1}),
    LayerSpec("out", "sigmoid", {}),
)


def fixture_weights(seed: int = SEED) -> dict[str, np.ndarray]:
    # Conv biases are zero so the pre-GAP network is positively homogeneous:
    # relu masks and maxpool argmaxes are then constant along the straight
    # path from a zero baseline, which keeps attribution paths well behaved.
    rng = np.random.default_rng(seed)
    scale = 0.4
    return {
        "conv1.kernel": rng.normal(0.0, scale, (3, 3, 3, 8)),
        "conv1.bias": np.zeros(8),
        "conv2.kernel": rng.normal(0.0, scale, (3, 3, 8, 16)),
        "conv2.bias": np.zeros(16),
        "dense.kernel": rng.normal(0.0, scale, (16, 1)),
        "dense.bias": rng.normal(0.0, 0.1, (1,)),
    }


def fixture_model(seed: int = SEED) -> Model:
    return load_model(LAYERS, fixture_weights(seed), input_shape=INPUT_SHAPE)


def fixture_batch(n: int = BATCH_SIZE, seed: int = SEED + 1) -> np.ndarray:
    """Synthetic image batch in [0, 1]: smooth blobs plus noise, so
    activations have nontrivial structure."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:INPUT_SHAPE[0], 0:INPUT_SHAPE[1]]
    batch = np.empty((n,) + INPUT_SHAPE)
    for i in range(n):
        img = 0.15 * rng.random(INPUT_SHAPE)
        for _ in range(3):
            cy, cx = rng.uniform(4, 28, size=2)
            radius = rng.uniform(2.0, 6.0)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius**2))
            img += blob[:, :, None] * rng.uniform(0.2, 0.8, size=3)
        batch[i] = np.clip(img, 0.0, 1.0)
    return batch


def fixture_config(fixture_dir: Path, output_dir: Path) -> dict:
    """Analysis run config wired to the fixture files.

    smallcnn's analyzed layers have 8/16/1 features, so pca_components must
    be 1 here (the general default of 32 assumes wider layers).
    """
    return {
        "model_spec": str(fixture_dir / "smallcnn.spec"),
        "weights": str(fixture_dir / "smallcnn_weights.qixt"),
        "batch": {"archive": str(fixture_dir / "batch.qixt"), "entry": "images"},
        "layers": {"conv1": "conv1", "conv2": "conv2", "dense": "dense"},
        "pca_components": 1,
        "center_pca": True,
        "truncate_channels": None,
        "mi_bins": 20,
        "mi_top_k": 10,
        "ig": {
            "enabled": True,
            "steps": 100,
            "sub_batch": 10,
            "baseline": "zeros",
            "samples": [0, 1, 2],
            "output_index": 0,
        },
        "output_dir": str(output_dir),
        "variance_mode": "both",
    }


def write_fixture(fixture_dir, output_dir=None) -> dict[str, Path]:
    """Materialize all fixture files; returns the paths written."""
    fixture_dir = Path(fixture_dir)
    fixture_dir.mkdir(parents=True, exist_ok=True)
    if output_dir is None:
        output_dir = fixture_dir / "analysis"
    paths = {
        "spec": fixture_dir / "smallcnn.spec",
        "weights": fixture_dir / "smallcnn_weights.qixt",
        "batch": fixture_dir / "batch.qixt",
        "config": fixture_dir / "config.json",
    }
    paths["spec"].write_text(format_model_spec(LAYERS, INPUT_SHAPE))
    write_archive(fixture_weights(), paths["weights"])
    write_archive({"images": fixture_batch()}, paths["batch"])
    config = fixture_config(fixture_dir, Path(output_dir))
    paths["config"].write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return paths


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m qixai.fixture OUTDIR", file=sys.stderr)
        return 1
    paths = write_fixture(argv[0])
    for key, path in paths.items():
        print(f"{key}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
