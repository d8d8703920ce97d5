"""Interval bound propagation and BN+sign threshold folding.

Bounds are computed with the same float64 primitives as exact inference, so
a zero-width box propagates to exactly the ``network_forward`` logits on
integer-valued inputs.
"""

import time
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatchError
from ..layers import (
    BatchNorm,
    Flatten,
    MaxPool,
    QConv,
    QDense,
    batchnorm_forward,
    flatten_forward,
    maxpool_forward,
    sign_quantize,
)
from ..network import image_from_flat
from .verdict import UNKNOWN, VERIFIED, Verdict

__all__ = [
    "IntervalTensor",
    "FoldedSign",
    "check_property_shapes",
    "property_box",
    "ibp_trace",
    "ibp_propagate",
    "verify_ibp",
    "fold_bn_sign",
]


@dataclass(frozen=True)
class IntervalTensor:
    """Entrywise box: every concrete tensor t with lo <= t <= hi."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=np.float64)
        hi = np.array(self.hi, dtype=np.float64)
        if lo.shape != hi.shape:
            raise ShapeMismatchError(
                "interval bounds differ in shape", expected=lo.shape, actual=hi.shape
            )
        if np.any(lo > hi):
            raise ValueError("interval has lo > hi somewhere")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, values):
        """Zero-width box around one concrete tensor."""
        v = np.asarray(values, dtype=np.float64)
        return cls(v, v.copy())

    @property
    def shape(self):
        return self.lo.shape

    def width(self):
        return self.hi - self.lo

    def contains(self, values):
        v = np.asarray(values, dtype=np.float64)
        return (
            v.shape == self.shape
            and bool(np.all(self.lo <= v))
            and bool(np.all(v <= self.hi))
        )


def _conv_raw(t, layer, weights):
    # same contraction as the exact forward, arbitrary-sign weights
    windows = sliding_window_view(t, (layer.kernel_h, layer.kernel_w), axis=(-3, -2))
    return np.einsum("...cij,ijco->...o", windows, weights, optimize=True)


def _linear_bounds(box, layer, layer_index):
    lo, hi = box.lo, box.hi
    if layer.quantize_input:
        # sign is monotone, so quantizing both corners is exact
        lo = sign_quantize(lo)
        hi = sign_quantize(hi)
    wpos = np.maximum(layer.weights, 0.0)
    wneg = np.minimum(layer.weights, 0.0)
    if isinstance(layer, QConv):
        if lo.ndim != 3 or lo.shape[-1] != layer.in_channels:
            raise ShapeMismatchError(
                "QConv interval input mismatch",
                layer_index=layer_index,
                expected=layer.in_channels,
                actual=lo.shape,
            )
        out_lo = _conv_raw(lo, layer, wpos) + _conv_raw(hi, layer, wneg)
        out_hi = _conv_raw(hi, layer, wpos) + _conv_raw(lo, layer, wneg)
    else:
        out_lo = lo @ wpos + hi @ wneg
        out_hi = hi @ wpos + lo @ wneg
    return IntervalTensor(out_lo, out_hi)


def _layer_bounds(box, layer, layer_index):
    if isinstance(layer, (QConv, QDense)):
        return _linear_bounds(box, layer, layer_index)
    if isinstance(layer, MaxPool):
        return IntervalTensor(
            maxpool_forward(box.lo, layer, layer_index),
            maxpool_forward(box.hi, layer, layer_index),
        )
    if isinstance(layer, BatchNorm):
        a = batchnorm_forward(box.lo, layer, layer_index)
        b = batchnorm_forward(box.hi, layer, layer_index)
        # negative gamma flips the interval; min/max handles both slopes
        return IntervalTensor(np.minimum(a, b), np.maximum(a, b))
    if isinstance(layer, Flatten):
        return IntervalTensor(
            flatten_forward(box.lo, layer, layer_index),
            flatten_forward(box.hi, layer, layer_index),
        )
    raise TypeError(f"unknown layer type {type(layer).__name__}")


def ibp_trace(net, box):
    """Boxes before each layer plus the final logit box (len(layers)+1)."""
    if box.shape != net.input_shape:
        raise ShapeMismatchError(
            "box shape does not match network input",
            expected=net.input_shape,
            actual=box.shape,
        )
    trace = [box]
    for i, layer in enumerate(net.layers):
        trace.append(_layer_bounds(trace[-1], layer, i))
    return trace


def ibp_propagate(net, box):
    """Sound logit bounds for every concrete input inside ``box``."""
    return ibp_trace(net, box)[-1]


def check_property_shapes(net, prop):
    if net.num_inputs != prop.num_inputs or net.num_classes != prop.num_outputs:
        raise ShapeMismatchError(
            "network and property disagree on dimensions",
            expected=(net.num_inputs, net.num_classes),
            actual=(prop.num_inputs, prop.num_outputs),
        )


def property_box(net, prop):
    """Input box of a robustness property, reshaped to the image layout."""
    check_property_shapes(net, prop)
    lo, hi = prop.bounds_arrays()
    return IntervalTensor(
        image_from_flat(lo, net.input_shape), image_from_flat(hi, net.input_shape)
    )


def verify_ibp(net, prop):
    """One-shot interval verification.

    Verified iff the target's lower bound strictly exceeds every rival's
    upper bound; ties are counterexamples under the >=-disjunction, so
    anything weaker stays Unknown.
    """
    start = time.perf_counter()
    out = ibp_propagate(net, property_box(net, prop))
    t = prop.target_label
    rivals = np.delete(out.hi, t)
    status = VERIFIED if bool(np.all(out.lo[t] > rivals)) else UNKNOWN
    return Verdict(status, nodes=1, seconds=time.perf_counter() - start)


@dataclass(frozen=True)
class FoldedSign:
    """Per-channel threshold rule equal to sign(batchnorm(x)).

    direction +1: output +1 iff x >= threshold (positive gamma)
    direction -1: output +1 iff x <= threshold (negative gamma)
    direction  0: constant ``constant`` (zero gamma)

    Thresholds are exact at float64 resolution: ``apply`` agrees with the
    composed forward functions on every float input, including the
    threshold itself and its neighbours.
    """

    direction: np.ndarray
    threshold: np.ndarray
    constant: np.ndarray

    def __post_init__(self):
        d = np.array(self.direction, dtype=np.int8)
        t = np.array(self.threshold, dtype=np.float64)
        c = np.array(self.constant, dtype=np.float64)
        if not (d.ndim == 1 and d.shape == t.shape == c.shape):
            raise ShapeMismatchError(
                "folded rule arrays must share one 1-D shape",
                expected=d.shape,
                actual=(t.shape, c.shape),
            )
        for arr in (d, t, c):
            arr.setflags(write=False)
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "threshold", t)
        object.__setattr__(self, "constant", c)

    @property
    def channels(self):
        return self.direction.size

    def apply(self, x):
        """Evaluate the rule on (..., channels) data; returns +-1 values."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.channels:
            raise ShapeMismatchError(
                "channel mismatch", expected=self.channels, actual=x.shape[-1]
            )
        with np.errstate(invalid="ignore"):
            up = np.where(x >= self.threshold, 1.0, -1.0)
            down = np.where(x <= self.threshold, 1.0, -1.0)
        out = np.where(self.direction > 0, up, down)
        return np.where(self.direction == 0, self.constant, out)


def _least_true(pred, guess):
    """Smallest float64 x with pred(x) true; pred weakly nondecreasing.

    Returns -inf when pred holds across the whole search range, +inf when
    it never holds.  Bisection over the float lattice, seeded around the
    closed-form guess when that brackets the boundary.
    """
    limit = np.float64(1e300)
    if pred(-limit):
        return -np.inf
    if not pred(limit):
        return np.inf
    lo, hi = -limit, limit
    if np.isfinite(guess):
        pad = np.float64(max(1.0, abs(float(guess)) * 1e-9))
        a = np.float64(max(-limit, guess - pad))
        b = np.float64(min(limit, guess + pad))
        if not pred(a):
            lo = a
        if pred(b):
            hi = b
    while True:
        mid = lo + (hi - lo) * np.float64(0.5)
        if not (lo < mid < hi):
            return float(hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid


def fold_bn_sign(layer):
    """Collapse ``sign(batchnorm(x))`` into per-channel thresholds.

    The nominal threshold is mean - beta*sqrt(var+eps)/gamma; the returned
    value is nudged to the exact float where the composed forward flips,
    so downstream integer comparisons never disagree with inference.
    """
    gamma = np.asarray(layer.gamma, dtype=np.float64)
    direction = np.sign(gamma).astype(np.int8)
    threshold = np.full(layer.channels, np.nan)
    constant = np.full(layer.channels, np.nan)

    zero = direction == 0
    constant[zero] = np.where(layer.beta[zero] >= 0, 1.0, -1.0)

    with np.errstate(over="ignore", invalid="ignore"):
        for ch in np.nonzero(~zero)[0]:
            g = np.float64(layer.gamma[ch])
            b = np.float64(layer.beta[ch])
            m = np.float64(layer.moving_mean[ch])
            v = np.float64(layer.moving_variance[ch])
            e = np.float64(layer.eps)
            root = np.sqrt(v + e)
            scale = g / root  # same op order as batchnorm_forward

            def bn(x, _s=scale, _m=m, _b=b):
                return _s * (x - _m) + _b

            guess = m - b * root / g
            if g > 0:
                # least x with bn(x) >= 0
                threshold[ch] = _least_true(lambda x, _f=bn: _f(x) >= 0, guess)
            else:
                # greatest x with bn(x) >= 0 sits just below the least x
                # with bn(x) < 0
                u = _least_true(lambda x, _f=bn: _f(x) < 0, guess)
                if np.isinf(u):
                    threshold[ch] = u
                else:
                    threshold[ch] = np.nextafter(u, -np.inf)
    return FoldedSign(direction=direction, threshold=threshold, constant=constant)
