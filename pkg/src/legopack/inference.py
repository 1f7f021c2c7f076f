"""Minimal deterministic forward-pass evaluator.

Five layer kinds are supported: dense, conv2d (direct cross-correlation via
im2col), relu, maxpool2d, and flatten. Matrix products run through np.einsum
without BLAS dispatch, accumulating in float64 with a fixed summation order and
casting back to float32 after each parametric layer, so outputs are
bit-identical across runs and thread counts.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .container import (
    DatasetBundle,
    KIND_CONV2D,
    KIND_DENSE,
    KIND_FLATTEN,
    KIND_MAXPOOL2D,
    KIND_RELU,
    LayerSpec,
    ModelBundle,
    Tensor,
)
from .errors import ShapeMismatch, ValidationError


def _batch_f32(inputs) -> np.ndarray:
    if isinstance(inputs, Tensor):
        inputs = inputs.data
    x = np.asarray(inputs, dtype=np.float32)
    if x.ndim < 2:
        raise ShapeMismatch(f"inputs must be batched [N, ...], got shape {x.shape}")
    return x


def _dense(x: np.ndarray, model: ModelBundle, spec: LayerSpec) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ShapeMismatch(f"dense expects [N, {spec.in_dim}], got {x.shape}")
    w = model.tensor(spec.weight_name).data.astype(np.float64)
    y = np.einsum("ni,oi->no", x.astype(np.float64), w)
    if spec.bias_name:
        y += model.tensor(spec.bias_name).data.astype(np.float64)
    return y.astype(np.float32)


def _conv2d(x: np.ndarray, model: ModelBundle, spec: LayerSpec) -> np.ndarray:
    if x.ndim != 4 or x.shape[1] != spec.in_ch:
        raise ShapeMismatch(f"conv2d expects [N, {spec.in_ch}, H, W], got {x.shape}")
    pad = spec.padding or 0
    n, _, h, w = x.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    if spec.kh > hp or spec.kw > wp:
        raise ShapeMismatch(f"kernel {spec.kh}x{spec.kw} exceeds padded input {hp}x{wp}")
    x64 = x.astype(np.float64)
    if pad:
        x64 = np.pad(x64, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(x64, (spec.kh, spec.kw), axis=(2, 3))
    windows = windows[:, :, :: spec.stride, :: spec.stride, :, :]
    kernel = model.tensor(spec.weight_name).data.astype(np.float64)
    y = np.einsum("ncxykl,ockl->noxy", windows, kernel)
    if spec.bias_name:
        y += model.tensor(spec.bias_name).data.astype(np.float64)[None, :, None, None]
    return y.astype(np.float32)


def _maxpool2d(x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    if x.ndim != 4:
        raise ShapeMismatch(f"maxpool2d expects [N, C, H, W], got {x.shape}")
    if spec.kh > x.shape[2] or spec.kw > x.shape[3]:
        raise ShapeMismatch(f"pool window {spec.kh}x{spec.kw} exceeds input {x.shape[2:]}")
    windows = sliding_window_view(x, (spec.kh, spec.kw), axis=(2, 3))
    windows = windows[:, :, :: spec.stride, :: spec.stride, :, :]
    return windows.max(axis=(-2, -1))


def forward(model: ModelBundle, inputs) -> np.ndarray:
    """Run the manifest end to end; returns f32 logits of shape [N, classes]."""
    if not model.arch_manifest:
        raise ValidationError("model has no architecture manifest")
    x = _batch_f32(inputs)
    for spec in model.arch_manifest:
        if spec.kind == KIND_DENSE:
            x = _dense(x, model, spec)
        elif spec.kind == KIND_CONV2D:
            x = _conv2d(x, model, spec)
        elif spec.kind == KIND_RELU:
            x = np.maximum(x, np.float32(0.0))
        elif spec.kind == KIND_MAXPOOL2D:
            x = _maxpool2d(x, spec)
        elif spec.kind == KIND_FLATTEN:
            x = np.ascontiguousarray(x).reshape(x.shape[0], -1)
        else:  # unreachable: LayerSpec validates kind
            raise ValidationError(f"unknown layer kind {spec.kind!r}")
    return x


def top1_accuracy(model: ModelBundle, dataset: DatasetBundle) -> float:
    """Top-1 accuracy in percent; argmax ties go to the lowest class index."""
    logits = forward(model, dataset.inputs.data)
    if logits.ndim != 2:
        raise ShapeMismatch(f"expected [N, classes] logits, got {logits.shape}")
    predictions = np.argmax(logits, axis=1)
    return float(np.mean(predictions == dataset.labels) * 100.0)


def output_deviation(m1: ModelBundle, m2: ModelBundle, probe_inputs) -> float:
    """Mean L2 distance between the two models' logits over the probe batch."""
    if m1.arch_manifest != m2.arch_manifest:
        raise ValidationError("models must share an architecture manifest")
    y1 = forward(m1, probe_inputs).astype(np.float64)
    y2 = forward(m2, probe_inputs).astype(np.float64)
    if y1.shape != y2.shape:
        raise ShapeMismatch(f"logit shapes differ: {y1.shape} vs {y2.shape}")
    diff = (y1 - y2).reshape(y1.shape[0], -1)
    return float(np.mean(np.sqrt(np.sum(diff * diff, axis=1))))


def _trace_shapes(manifest: tuple[LayerSpec, ...], shape: tuple[int, ...]) -> bool:
    """Propagate a single-sample shape through the manifest; False on mismatch."""
    for spec in manifest:
        if spec.kind == KIND_DENSE:
            if shape != (spec.in_dim,):
                return False
            shape = (spec.out_dim,)
        elif spec.kind == KIND_CONV2D:
            pad = spec.padding or 0
            if len(shape) != 3 or shape[0] != spec.in_ch:
                return False
            hp, wp = shape[1] + 2 * pad, shape[2] + 2 * pad
            if spec.kh > hp or spec.kw > wp:
                return False
            shape = (spec.out_ch, (hp - spec.kh) // spec.stride + 1, (wp - spec.kw) // spec.stride + 1)
        elif spec.kind == KIND_MAXPOOL2D:
            if len(shape) != 3 or spec.kh > shape[1] or spec.kw > shape[2]:
                return False
            shape = (shape[0], (shape[1] - spec.kh) // spec.stride + 1, (shape[2] - spec.kw) // spec.stride + 1)
        elif spec.kind == KIND_FLATTEN:
            shape = (int(np.prod(shape)),)
    return True


def probe_shape(model: ModelBundle) -> tuple[int, ...]:
    """Single-sample input shape consistent with the whole manifest."""
    if not model.arch_manifest:
        raise ValidationError("model has no architecture manifest")
    first = model.arch_manifest[0]
    if first.kind == KIND_DENSE:
        return (first.in_dim,)
    if first.kind == KIND_CONV2D:
        # Square spatial inputs only; smallest side that satisfies every layer.
        for side in range(1, 257):
            shape = (first.in_ch, side, side)
            if _trace_shapes(model.arch_manifest, shape):
                return shape
        raise ValidationError("no square input side in 1..=256 fits the manifest")
    raise ValidationError(f"cannot derive probe shape from a {first.kind} first layer")


def probe_inputs(model: ModelBundle, count: int = 128, seed: int = 0) -> np.ndarray:
    """Deterministic standard-normal probe batch shaped for the manifest."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal((count, *probe_shape(model))).astype(np.float32)
