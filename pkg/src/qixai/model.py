"""Declarative CNN definition, forward inference with activation capture,
and reverse-mode gradients with respect to the input.

Layer kinds form a closed set: conv2d, relu, maxpool2d, global_avg_pool,
flatten, dense, sigmoid. Activations use the NHWC convention; conv kernels
are stored HWIO ([kh, kw, in_c, out_c]) and dense kernels [in, out].

The model-spec document is line-oriented text:

    version 1
    input 32 32 3
    layer conv1 conv2d out_channels=8 kernel_h=3 kernel_w=3 stride=1 padding=same
    layer relu1 relu
    ...

Blank lines and '#' comments are ignored. Weights live in a tensor archive
under "<layer>.kernel" / "<layer>.bias".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import read_archive

SPATIAL_KINDS = {"conv2d", "relu", "maxpool2d"}
VECTOR_KINDS = {"dense", "sigmoid"}
BRIDGE_KINDS = {"global_avg_pool", "flatten"}
ALL_KINDS = SPATIAL_KINDS | VECTOR_KINDS | BRIDGE_KINDS
PARAMETRIC_KINDS = {"conv2d", "dense"}

_PARAM_SCHEMA = {
    "conv2d": {"out_channels", "kernel_h", "kernel_w", "stride", "padding"},
    "maxpool2d": {"pool_h", "pool_w", "stride"},
    "dense": {"out_features"},
    "relu": set(),
    "sigmoid": set(),
    "global_avg_pool": set(),
    "flatten": set(),
}


class ModelError(Exception):
    """Invalid model spec, missing/mismatched weights, or bad invocation."""


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Model:
    """Immutable CNN: ordered layer specs, weights, and the declared
    input shape (H, W, C) or (features,) used for shape inference."""

    layers: tuple[LayerSpec, ...]
    weights: dict[str, np.ndarray]
    input_shape: tuple[int, ...]

    @property
    def output_width(self) -> int:
        shapes = infer_shapes(self.layers, self.input_shape)
        return shapes[self.layers[-1].name][-1]


@dataclass(frozen=True)
class ActivationSet:
    """Post-activation output of every layer from one forward pass."""

    by_layer: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.by_layer[name]


# ---------------------------------------------------------------------------
# Spec parsing and validation


def parse_model_spec(text: str) -> tuple[list[LayerSpec], tuple[int, ...]]:
    """Parse the model-spec document into layer specs and the input shape."""
    layers: list[LayerSpec] = []
    input_shape: tuple[int, ...] | None = None
    version_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "version":
            if len(parts) != 2 or parts[1] != "1":
                raise ModelError(f"line {lineno}: unsupported spec version {line!r}")
            version_seen = True
        elif parts[0] == "input":
            try:
                input_shape = tuple(int(p) for p in parts[1:])
            except ValueError:
                raise ModelError(f"line {lineno}: bad input shape {line!r}")
            if not input_shape or any(e < 1 for e in input_shape):
                raise ModelError(f"line {lineno}: input extents must be positive")
        elif parts[0] == "layer":
            if len(parts) < 3:
                raise ModelError(f"line {lineno}: layer needs a name and a kind")
            name, kind = parts[1], parts[2]
            if kind not in ALL_KINDS:
                raise ModelError(f"line {lineno}: unknown layer kind {kind!r}")
            params: dict[str, object] = {}
            for item in parts[3:]:
                if "=" not in item:
                    raise ModelError(f"line {lineno}: expected key=value, got {item!r}")
                key, value = item.split("=", 1)
                params[key] = value if key == "padding" else _parse_positive(
                    lineno, key, value
                )
            expected = _PARAM_SCHEMA[kind]
            if set(params) != expected:
                raise ModelError(
                    f"line {lineno}: layer kind {kind!r} takes parameters "
                    f"{sorted(expected)}, got {sorted(params)}"
                )
            if kind == "conv2d" and params["padding"] not in ("valid", "same"):
                raise ModelError(
                    f"line {lineno}: padding must be 'valid' or 'same'"
                )
            layers.append(LayerSpec(name=name, kind=kind, params=params))
        else:
            raise ModelError(f"line {lineno}: unrecognized directive {parts[0]!r}")
    if not version_seen:
        raise ModelError("model spec missing 'version 1' line")
    if input_shape is None:
        raise ModelError("model spec missing 'input' line")
    if not layers:
        raise ModelError("model spec declares no layers")
    names = [l.name for l in layers]
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise ModelError(f"duplicate layer name {dup!r}")
    _check_layer_ordering(layers, input_shape)
    return layers, input_shape


def _parse_positive(lineno: int, key: str, value: str) -> int:
    try:
        parsed = int(value)
    except ValueError:
        raise ModelError(f"line {lineno}: parameter {key} must be an integer")
    if parsed < 1:
        raise ModelError(f"line {lineno}: parameter {key} must be positive")
    return parsed


def _check_layer_ordering(layers: list[LayerSpec], input_shape: tuple[int, ...]) -> None:
    spatial = len(input_shape) == 3
    for layer in layers:
        if layer.kind in SPATIAL_KINDS and layer.kind != "relu":
            if not spatial:
                raise ModelError(
                    f"layer {layer.name!r} ({layer.kind}) requires spatial input"
                )
        elif layer.kind in BRIDGE_KINDS:
            if not spatial:
                raise ModelError(
                    f"layer {layer.name!r} ({layer.kind}) after the spatial stage"
                )
            spatial = False
        elif layer.kind == "dense":
            if spatial:
                raise ModelError(
                    f"dense layer {layer.name!r} must follow flatten or "
                    "global_avg_pool"
                )


def format_model_spec(layers, input_shape) -> str:
    """Serialize layers back to the model-spec document format."""
    lines = ["version 1", "input " + " ".join(str(e) for e in input_shape)]
    for layer in layers:
        parts = [f"layer {layer.name} {layer.kind}"]
        for key in sorted(layer.params):
            parts.append(f"{key}={layer.params[key]}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def infer_shapes(layers, input_shape) -> dict[str, tuple[int, ...]]:
    """Per-layer output shapes (without the batch axis) for a declared input."""
    shapes: dict[str, tuple[int, ...]] = {}
    shape = tuple(input_shape)
    for layer in layers:
        kind = layer.kind
        if kind == "conv2d":
            h, w, _ = _expect_spatial(layer, shape)
            s = layer.params["stride"]
            kh, kw = layer.params["kernel_h"], layer.params["kernel_w"]
            if layer.params["padding"] == "same":
                oh = -(-h // s)
                ow = -(-w // s)
            else:
                if h < kh or w < kw:
                    raise ModelError(
                        f"layer {layer.name!r}: kernel {kh}x{kw} larger than "
                        f"input {h}x{w}"
                    )
                oh = (h - kh) // s + 1
                ow = (w - kw) // s + 1
            shape = (oh, ow, layer.params["out_channels"])
        elif kind == "maxpool2d":
            h, w, c = _expect_spatial(layer, shape)
            s = layer.params["stride"]
            ph, pw = layer.params["pool_h"], layer.params["pool_w"]
            if h < ph or w < pw:
                raise ModelError(
                    f"layer {layer.name!r}: pool {ph}x{pw} larger than input {h}x{w}"
                )
            shape = ((h - ph) // s + 1, (w - pw) // s + 1, c)
        elif kind == "global_avg_pool":
            _, _, c = _expect_spatial(layer, shape)
            shape = (c,)
        elif kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif kind == "dense":
            if len(shape) != 1:
                raise ModelError(f"dense layer {layer.name!r} needs vector input")
            shape = (layer.params["out_features"],)
        # relu and sigmoid preserve shape
        shapes[layer.name] = shape
    return shapes


def _expect_spatial(layer: LayerSpec, shape) -> tuple[int, int, int]:
    if len(shape) != 3:
        raise ModelError(f"layer {layer.name!r} ({layer.kind}) requires HWC input")
    return shape


def expected_weight_shapes(layers, input_shape) -> dict[str, tuple[int, ...]]:
    """Shapes of "<layer>.kernel" / "<layer>.bias" implied by the spec."""
    expected: dict[str, tuple[int, ...]] = {}
    shape = tuple(input_shape)
    shapes = infer_shapes(layers, input_shape)
    for layer in layers:
        if layer.kind == "conv2d":
            in_c = shape[2]
            expected[f"{layer.name}.kernel"] = (
                layer.params["kernel_h"],
                layer.params["kernel_w"],
                in_c,
                layer.params["out_channels"],
            )
            expected[f"{layer.name}.bias"] = (layer.params["out_channels"],)
        elif layer.kind == "dense":
            expected[f"{layer.name}.kernel"] = (shape[0], layer.params["out_features"])
            expected[f"{layer.name}.bias"] = (layer.params["out_features"],)
        shape = shapes[layer.name]
    return expected


def load_model(spec_text_or_layers, weights, input_shape=None) -> Model:
    """Build a validated Model from a spec document (or parsed layers) and
    a weight archive (mapping or path)."""
    if isinstance(spec_text_or_layers, str):
        layers, input_shape = parse_model_spec(spec_text_or_layers)
    else:
        layers = list(spec_text_or_layers)
        if input_shape is None:
            raise ModelError("input_shape required when passing parsed layers")
        _check_layer_ordering(layers, tuple(input_shape))
    if isinstance(weights, (str, bytes)) or hasattr(weights, "__fspath__"):
        weights = read_archive(weights)

    expected = expected_weight_shapes(layers, input_shape)
    checked: dict[str, np.ndarray] = {}
    for name, shape in expected.items():
        if name not in weights:
            raise ModelError(f"missing weight entry {name!r}")
        arr = np.asarray(weights[name], dtype=np.float64)
        if tuple(arr.shape) != shape:
            layer = name.split(".")[0]
            raise ModelError(
                f"weight {name!r} for layer {layer!r}: expected shape {shape}, "
                f"found {tuple(arr.shape)}"
            )
        checked[name] = arr
    return Model(layers=tuple(layers), weights=checked, input_shape=tuple(input_shape))


# ---------------------------------------------------------------------------
# Forward / backward


def _same_padding(extent: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    lo = total // 2
    return lo, total - lo


def _conv_forward(x, kernel, bias, stride, padding):
    n, h, w, _ = x.shape
    kh, kw, _, out_c = kernel.shape
    if padding == "same":
        (ph_lo, ph_hi) = _same_padding(h, kh, stride)
        (pw_lo, pw_hi) = _same_padding(w, kw, stride)
        x = np.pad(x, ((0, 0), (ph_lo, ph_hi), (pw_lo, pw_hi), (0, 0)))
        h += ph_lo + ph_hi
        w += pw_lo + pw_hi
    else:
        ph_lo = pw_lo = ph_hi = pw_hi = 0
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    out = np.zeros((n, oh, ow, out_c))
    for i in range(kh):
        for j in range(kw):
            patch = x[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :]
            out += np.tensordot(patch, kernel[i, j], axes=([3], [0]))
    out += bias
    cache = (x, (ph_lo, ph_hi, pw_lo, pw_hi), oh, ow)
    return out, cache


def _conv_backward(d_out, kernel, stride, cache, orig_hw):
    x_padded, (ph_lo, _, pw_lo, _), oh, ow = cache
    kh, kw, _, _ = kernel.shape
    d_pad = np.zeros_like(x_padded)
    for i in range(kh):
        for j in range(kw):
            d_pad[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += (
                np.tensordot(d_out, kernel[i, j], axes=([3], [1]))
            )
    h, w = orig_hw
    return d_pad[:, ph_lo : ph_lo + h, pw_lo : pw_lo + w, :]


def _maxpool_forward(x, ph, pw, stride):
    n, h, w, c = x.shape
    oh = (h - ph) // stride + 1
    ow = (w - pw) // stride + 1
    # Window values laid out (pi, pj) row-major so argmax ties pick the
    # first occurrence in the row-major scan of the pool window.
    windows = np.stack(
        [
            x[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :]
            for i in range(ph)
            for j in range(pw)
        ],
        axis=3,
    )
    arg = np.argmax(windows, axis=3)
    out = np.take_along_axis(windows, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return out, (arg, (n, h, w, c), oh, ow)


def _maxpool_backward(d_out, ph, pw, stride, cache):
    arg, (n, h, w, c), oh, ow = cache
    d_in = np.zeros((n, h, w, c))
    pi = arg // pw
    pj = arg % pw
    ni, oi, oj, ci = np.indices((n, oh, ow, c), sparse=False)
    np.add.at(d_in, (ni, oi * stride + pi, oj * stride + pj, ci), d_out)
    return d_in


def _forward_with_caches(model: Model, batch: np.ndarray):
    batch = np.asarray(batch, dtype=np.float64)
    if tuple(batch.shape[1:]) != model.input_shape:
        raise ModelError(
            f"batch shape {tuple(batch.shape[1:])} does not match model input "
            f"shape {model.input_shape}"
        )
    x = batch
    activations: dict[str, np.ndarray] = {}
    caches: list[tuple] = []
    for layer in model.layers:
        kind = layer.kind
        if kind == "conv2d":
            kernel = model.weights[f"{layer.name}.kernel"]
            bias = model.weights[f"{layer.name}.bias"]
            orig_hw = x.shape[1:3]
            x, cache = _conv_forward(
                x, kernel, bias, layer.params["stride"], layer.params["padding"]
            )
            caches.append(("conv2d", layer, cache, orig_hw))
        elif kind == "relu":
            caches.append(("relu", layer, x > 0, None))
            x = np.maximum(x, 0.0)
        elif kind == "maxpool2d":
            x, cache = _maxpool_forward(
                x,
                layer.params["pool_h"],
                layer.params["pool_w"],
                layer.params["stride"],
            )
            caches.append(("maxpool2d", layer, cache, None))
        elif kind == "global_avg_pool":
            caches.append(("global_avg_pool", layer, x.shape, None))
            x = x.mean(axis=(1, 2))
        elif kind == "flatten":
            caches.append(("flatten", layer, x.shape, None))
            x = x.reshape(x.shape[0], -1)
        elif kind == "dense":
            kernel = model.weights[f"{layer.name}.kernel"]
            bias = model.weights[f"{layer.name}.bias"]
            caches.append(("dense", layer, x, None))
            x = x @ kernel + bias
        elif kind == "sigmoid":
            x = 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))
            caches.append(("sigmoid", layer, x, None))
        activations[layer.name] = x
    return x, activations, caches


def forward(model: Model, batch: np.ndarray) -> tuple[np.ndarray, ActivationSet]:
    """Run the network on an NHWC (or NC) batch, capturing every layer's
    post-activation output."""
    output, activations, _ = _forward_with_caches(model, batch)
    return output, ActivationSet(by_layer=activations)


def gradient_batch(model: Model, batch: np.ndarray, output_index: int) -> np.ndarray:
    """Per-sample d f[output_index] / d input over a batch, by reverse mode."""
    output, _, caches = _forward_with_caches(model, batch)
    if output.ndim != 2:
        raise ModelError(
            "gradient target must be a vector output; end the model with "
            "global_avg_pool/flatten before dense"
        )
    if output_index < 0 or output_index >= output.shape[-1]:
        raise ModelError(
            f"output_index {output_index} out of range for width {output.shape[-1]}"
        )
    grad = np.zeros_like(output)
    grad[:, output_index] = 1.0
    for kind, layer, cache, extra in reversed(caches):
        if kind == "conv2d":
            kernel = model.weights[f"{layer.name}.kernel"]
            grad = _conv_backward(grad, kernel, layer.params["stride"], cache, extra)
        elif kind == "relu":
            grad = grad * cache
        elif kind == "maxpool2d":
            grad = _maxpool_backward(
                grad,
                layer.params["pool_h"],
                layer.params["pool_w"],
                layer.params["stride"],
                cache,
            )
        elif kind == "global_avg_pool":
            n, h, w, c = cache
            grad = np.broadcast_to(grad[:, None, None, :] / (h * w), (n, h, w, c)).copy()
        elif kind == "flatten":
            grad = grad.reshape(cache)
        elif kind == "dense":
            kernel = model.weights[f"{layer.name}.kernel"]
            grad = grad @ kernel.T
        elif kind == "sigmoid":
            s = cache
            grad = grad * s * (1.0 - s)
    return grad


def gradient_wrt_input(model: Model, input_: np.ndarray, output_index: int) -> np.ndarray:
    """Gradient of one scalar output with respect to a single input sample.

    Maxpool routes gradient to the argmax element, first occurrence in the
    row-major window scan on ties.
    """
    input_ = np.asarray(input_, dtype=np.float64)
    if tuple(input_.shape) == model.input_shape:
        batch = input_[None, ...]
    elif input_.shape[0] == 1 and tuple(input_.shape[1:]) == model.input_shape:
        batch = input_
    else:
        raise ModelError(
            f"input shape {tuple(input_.shape)} is not a single sample of "
            f"shape {model.input_shape}"
        )
    grad = gradient_batch(model, batch, output_index)
    return grad.reshape(input_.shape)


def logit_of(model: Model) -> Model:
    """Truncate a sigmoid-terminated model before its final sigmoid, so
    downstream attribution targets the raw logit."""
    if model.layers[-1].kind != "sigmoid":
        raise ModelError(
            "model does not end in sigmoid; attribute the raw output instead"
        )
    return Model(
        layers=model.layers[:-1],
        weights=model.weights,
        input_shape=model.input_shape,
    )
