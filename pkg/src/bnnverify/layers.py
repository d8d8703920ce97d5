"""Layer types and exact forward semantics for binarized networks.

Arrays are float64 throughout.  Image activations are channel-last
``(H, W, C)``; flattening therefore enumerates entries in the order
``(row * W + col) * C + channel``, which is also the pixel-variable order
used by the property format.  Every forward function accepts arbitrary
leading batch dimensions in front of the documented trailing shape.

Conventions baked into the semantics:

* ``sign(0) = +1``
* convolutions use valid padding and stride 1, no bias
* max pooling is 2x2 with stride 2; an odd trailing row/column is dropped
* batch normalization runs in inference mode on the stored moving statistics
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidModelError, ShapeMismatchError

__all__ = [
    "QConv",
    "MaxPool",
    "BatchNorm",
    "Flatten",
    "QDense",
    "Layer",
    "DEFAULT_BN_EPS",
    "sign_quantize",
    "qconv_forward",
    "maxpool_forward",
    "batchnorm_forward",
    "flatten_forward",
    "qdense_forward",
    "layer_forward",
    "output_shape",
]

# Training-framework default (1e-3), held at 32-bit float precision because
# that is how the interchange format stores it; model files may override.
DEFAULT_BN_EPS = float(np.float32(1e-3))


def _frozen_array(values, dtype=np.float64):
    arr = np.ascontiguousarray(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


def _check_signed_binary(weights, what):
    if not np.all(np.abs(weights) == 1.0):
        bad = weights[np.abs(weights) != 1.0]
        raise InvalidModelError(
            f"{what} weights must be +1/-1; found value {bad.flat[0]!r}"
        )


@dataclass(frozen=True)
class QConv:
    """Binarized convolution.

    ``weights`` has shape ``(kh, kw, in_channels, out_channels)`` with
    entries in {-1, +1}.  When ``quantize_input`` is set the input is
    sign-quantized before the cross-correlation.
    """

    out_channels: int
    kernel_h: int
    kernel_w: int
    weights: np.ndarray
    quantize_input: bool

    def __post_init__(self):
        w = _frozen_array(self.weights)
        if w.ndim != 4 or w.shape[:2] != (self.kernel_h, self.kernel_w):
            raise InvalidModelError(
                f"QConv weights shape {w.shape} does not match kernel "
                f"{self.kernel_h}x{self.kernel_w}"
            )
        if w.shape[3] != self.out_channels:
            raise InvalidModelError(
                f"QConv weights have {w.shape[3]} output channels, "
                f"declared {self.out_channels}"
            )
        _check_signed_binary(w, "QConv")
        object.__setattr__(self, "weights", w)

    @property
    def in_channels(self):
        return self.weights.shape[2]

    def __eq__(self, other):
        if not isinstance(other, QConv):
            return NotImplemented
        return (
            self.out_channels == other.out_channels
            and self.kernel_h == other.kernel_h
            and self.kernel_w == other.kernel_w
            and self.quantize_input == other.quantize_input
            and np.array_equal(self.weights, other.weights)
        )


@dataclass(frozen=True)
class MaxPool:
    """2x2 max pooling with stride 2 (the only pooling the networks use)."""

    pool: int = 2
    stride: int = 2

    def __post_init__(self):
        if self.pool != 2 or self.stride != 2:
            raise InvalidModelError("only 2x2 stride-2 max pooling is supported")


@dataclass(frozen=True)
class BatchNorm:
    """Per-channel affine normalization using moving statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    moving_mean: np.ndarray
    moving_variance: np.ndarray
    eps: float = DEFAULT_BN_EPS

    def __post_init__(self):
        vectors = {}
        for name in ("gamma", "beta", "moving_mean", "moving_variance"):
            v = _frozen_array(getattr(self, name))
            if v.ndim != 1:
                raise InvalidModelError(f"BatchNorm {name} must be a vector")
            vectors[name] = v
        lengths = {v.shape[0] for v in vectors.values()}
        if len(lengths) != 1:
            raise InvalidModelError(
                f"BatchNorm parameter vectors disagree on length: {sorted(lengths)}"
            )
        if np.any(vectors["moving_variance"] < 0):
            raise InvalidModelError("BatchNorm moving_variance has negative entries")
        for name, v in vectors.items():
            object.__setattr__(self, name, v)

    @property
    def channels(self):
        return self.gamma.shape[0]

    def __eq__(self, other):
        if not isinstance(other, BatchNorm):
            return NotImplemented
        return (
            self.eps == other.eps
            and np.array_equal(self.gamma, other.gamma)
            and np.array_equal(self.beta, other.beta)
            and np.array_equal(self.moving_mean, other.moving_mean)
            and np.array_equal(self.moving_variance, other.moving_variance)
        )


@dataclass(frozen=True)
class Flatten:
    """Reshape (H, W, C) activations to a vector in row-major channel-last order."""


@dataclass(frozen=True)
class QDense:
    """Binarized dense layer.  ``weights`` has shape ``(in, out)``, entries
    in {-1, +1}; no bias."""

    out_features: int
    weights: np.ndarray
    quantize_input: bool = field(default=True)

    def __post_init__(self):
        w = _frozen_array(self.weights)
        if w.ndim != 2 or w.shape[1] != self.out_features:
            raise InvalidModelError(
                f"QDense weights shape {w.shape} does not match "
                f"out_features={self.out_features}"
            )
        _check_signed_binary(w, "QDense")
        object.__setattr__(self, "weights", w)

    @property
    def in_features(self):
        return self.weights.shape[0]

    def __eq__(self, other):
        if not isinstance(other, QDense):
            return NotImplemented
        return (
            self.out_features == other.out_features
            and self.quantize_input == other.quantize_input
            and np.array_equal(self.weights, other.weights)
        )


Layer = QConv | MaxPool | BatchNorm | Flatten | QDense


def sign_quantize(t):
    """Binarize to {-1, +1}; zero maps to +1."""
    t = np.asarray(t, dtype=np.float64)
    return np.where(t >= 0, 1.0, -1.0)


def qconv_forward(t, layer, layer_index=None):
    """Valid-padding stride-1 cross-correlation with +-1 kernels.

    ``t`` has trailing shape (H, W, C); output trailing shape is
    (H - kh + 1, W - kw + 1, out_channels).
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim < 3:
        raise ShapeMismatchError(
            "QConv input must have (H, W, C) trailing dims",
            layer_index=layer_index, expected="(H, W, C)", actual=t.shape,
        )
    h, w, c = t.shape[-3:]
    if c != layer.in_channels:
        raise ShapeMismatchError(
            "QConv channel mismatch",
            layer_index=layer_index, expected=layer.in_channels, actual=c,
        )
    if h < layer.kernel_h or w < layer.kernel_w:
        raise ShapeMismatchError(
            "QConv input smaller than kernel",
            layer_index=layer_index,
            expected=f">= {layer.kernel_h}x{layer.kernel_w}", actual=f"{h}x{w}",
        )
    if layer.quantize_input:
        t = sign_quantize(t)
    # windows: (..., H', W', C, kh, kw); contract (kh, kw, C) against kernels
    windows = sliding_window_view(t, (layer.kernel_h, layer.kernel_w), axis=(-3, -2))
    return np.einsum("...cij,ijco->...o", windows, layer.weights, optimize=True)


def maxpool_forward(t, layer=None, layer_index=None):
    """Per-channel 2x2 stride-2 max; odd trailing row/column dropped."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim < 3 or t.shape[-3] < 2 or t.shape[-2] < 2:
        raise ShapeMismatchError(
            "MaxPool input needs spatial dims >= 2",
            layer_index=layer_index, expected="(H>=2, W>=2, C)",
            actual=t.shape[-3:] if t.ndim >= 3 else t.shape,
        )
    h, w, c = t.shape[-3:]
    ho, wo = h // 2, w // 2
    t = t[..., : 2 * ho, : 2 * wo, :]
    t = t.reshape(t.shape[:-3] + (ho, 2, wo, 2, c))
    return t.max(axis=(-2, -4))


def batchnorm_forward(t, layer, layer_index=None):
    """gamma * (x - mean) / sqrt(var + eps) + beta, per trailing channel."""
    t = np.asarray(t, dtype=np.float64)
    if t.shape[-1] != layer.channels:
        raise ShapeMismatchError(
            "BatchNorm channel mismatch",
            layer_index=layer_index, expected=layer.channels, actual=t.shape[-1],
        )
    if np.any(layer.moving_variance < 0):
        raise InvalidModelError("BatchNorm moving_variance has negative entries")
    scale = layer.gamma / np.sqrt(layer.moving_variance + layer.eps)
    return scale * (t - layer.moving_mean) + layer.beta


def flatten_forward(t, layer=None, layer_index=None):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim < 3:
        raise ShapeMismatchError(
            "Flatten input must have (H, W, C) trailing dims",
            layer_index=layer_index, expected="(H, W, C)", actual=t.shape,
        )
    h, w, c = t.shape[-3:]
    return t.reshape(t.shape[:-3] + (h * w * c,))


def qdense_forward(t, layer, layer_index=None):
    t = np.asarray(t, dtype=np.float64)
    if t.shape[-1] != layer.in_features:
        raise ShapeMismatchError(
            "QDense input length mismatch",
            layer_index=layer_index, expected=layer.in_features, actual=t.shape[-1],
        )
    if layer.quantize_input:
        t = sign_quantize(t)
    return t @ layer.weights


def layer_forward(t, layer, layer_index=None):
    """Dispatch to the forward function for ``layer``."""
    if isinstance(layer, QConv):
        return qconv_forward(t, layer, layer_index)
    if isinstance(layer, MaxPool):
        return maxpool_forward(t, layer, layer_index)
    if isinstance(layer, BatchNorm):
        return batchnorm_forward(t, layer, layer_index)
    if isinstance(layer, Flatten):
        return flatten_forward(t, layer, layer_index)
    if isinstance(layer, QDense):
        return qdense_forward(t, layer, layer_index)
    raise TypeError(f"unknown layer type {type(layer).__name__}")


def output_shape(layer, in_shape, layer_index=None):
    """Shape produced by ``layer`` on an input of shape ``in_shape``
    (trailing dims only, no batch)."""
    if isinstance(layer, QConv):
        if len(in_shape) != 3:
            raise ShapeMismatchError(
                "QConv expects an image input",
                layer_index=layer_index, expected="(H, W, C)", actual=in_shape,
            )
        h, w, c = in_shape
        if c != layer.in_channels:
            raise ShapeMismatchError(
                "QConv channel mismatch",
                layer_index=layer_index, expected=layer.in_channels, actual=c,
            )
        if h < layer.kernel_h or w < layer.kernel_w:
            raise ShapeMismatchError(
                "QConv input smaller than kernel",
                layer_index=layer_index,
                expected=f">= {layer.kernel_h}x{layer.kernel_w}",
                actual=f"{h}x{w}",
            )
        return (h - layer.kernel_h + 1, w - layer.kernel_w + 1, layer.out_channels)
    if isinstance(layer, MaxPool):
        if len(in_shape) != 3 or in_shape[0] < 2 or in_shape[1] < 2:
            raise ShapeMismatchError(
                "MaxPool input needs spatial dims >= 2",
                layer_index=layer_index, expected="(H>=2, W>=2, C)", actual=in_shape,
            )
        return (in_shape[0] // 2, in_shape[1] // 2, in_shape[2])
    if isinstance(layer, BatchNorm):
        if in_shape[-1] != layer.channels:
            raise ShapeMismatchError(
                "BatchNorm channel mismatch",
                layer_index=layer_index, expected=layer.channels, actual=in_shape[-1],
            )
        return tuple(in_shape)
    if isinstance(layer, Flatten):
        if len(in_shape) != 3:
            raise ShapeMismatchError(
                "Flatten expects an image input",
                layer_index=layer_index, expected="(H, W, C)", actual=in_shape,
            )
        return (in_shape[0] * in_shape[1] * in_shape[2],)
    if isinstance(layer, QDense):
        if len(in_shape) != 1 or in_shape[0] != layer.in_features:
            raise ShapeMismatchError(
                "QDense input length mismatch",
                layer_index=layer_index, expected=(layer.in_features,), actual=in_shape,
            )
        return (layer.out_features,)
    raise TypeError(f"unknown layer type {type(layer).__name__}")
