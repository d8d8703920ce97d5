"""Network container, exact inference, and parameter accounting."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidModelError, ShapeMismatchError
from .layers import (
    BatchNorm,
    Flatten,
    Layer,
    MaxPool,
    QConv,
    QDense,
    layer_forward,
    output_shape,
)

__all__ = [
    "Network",
    "ParamCount",
    "network_forward",
    "network_forward_batch",
    "predict",
    "count_params",
    "flatten_image",
    "image_from_flat",
]


@dataclass(frozen=True)
class Network:
    """An ordered layer chain from an (H, W, 3) image to class logits.

    Immutable after construction; shapes are validated eagerly so that a
    constructed network is always runnable.
    """

    input_shape: tuple
    layers: tuple
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 3:
            raise InvalidModelError(f"input shape must be (H, W, C), got {self.input_shape}")
        if not self.layers:
            raise InvalidModelError("network has no layers")
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            shapes.append(output_shape(layer, shapes[-1], layer_index=i))
        final = self.layers[-1]
        if not isinstance(final, QDense):
            raise InvalidModelError(
                f"final layer must be QDense, got {type(final).__name__}"
            )
        if shapes[-1] != (self.num_classes,):
            raise InvalidModelError(
                f"network ends in shape {shapes[-1]}, expected ({self.num_classes},)"
            )
        object.__setattr__(self, "_shapes", tuple(shapes))

    def layer_shapes(self):
        """Activation shape before each layer plus the final output shape."""
        return self._shapes

    @property
    def num_inputs(self):
        h, w, c = self.input_shape
        return h * w * c


def _check_image(net, image, batched):
    image = np.asarray(image, dtype=np.float64)
    want = net.input_shape
    got = image.shape[-3:] if batched else image.shape
    if got != want or (batched and image.ndim < 4):
        raise ShapeMismatchError("image shape mismatch", expected=want, actual=image.shape)
    return image


def network_forward(net, image):
    """Run one image through the chain; returns the logits vector."""
    t = _check_image(net, image, batched=False)
    for i, layer in enumerate(net.layers):
        t = layer_forward(t, layer, layer_index=i)
    return t


def network_forward_batch(net, images):
    """Run a batch shaped (N, H, W, C); returns (N, num_classes) logits."""
    t = _check_image(net, images, batched=True)
    for i, layer in enumerate(net.layers):
        t = layer_forward(t, layer, layer_index=i)
    return t


def predict(net, image):
    """Predicted label: argmax of the logits, ties broken by lowest index."""
    return int(np.argmax(network_forward(net, image)))


@dataclass(frozen=True)
class ParamCount:
    """Trainable-parameter tally: +-1 weights vs real batch-norm scales."""

    binary: int
    real: int

    @property
    def total(self):
        return self.binary + self.real


def count_params(net):
    """Count +-1 weights and real (gamma, beta) parameters.

    Moving statistics are not trainable and are excluded from the real
    count.
    """
    binary = 0
    real = 0
    for layer in net.layers:
        if isinstance(layer, QConv):
            kh, kw, cin, cout = layer.weights.shape
            binary += kh * kw * cin * cout
        elif isinstance(layer, QDense):
            fin, fout = layer.weights.shape
            binary += fin * fout
        elif isinstance(layer, BatchNorm):
            real += 2 * layer.channels
    return ParamCount(binary=binary, real=real)


def flatten_image(image):
    """Flatten (H, W, C) to the pixel-variable order (row*W + col)*C + ch."""
    return np.asarray(image, dtype=np.float64).reshape(-1)


def image_from_flat(values, shape):
    """Inverse of :func:`flatten_image` for a known image shape."""
    values = np.asarray(values, dtype=np.float64)
    h, w, c = shape
    if values.size != h * w * c:
        raise ShapeMismatchError(
            "flat pixel vector has wrong length", expected=h * w * c, actual=values.size
        )
    return values.reshape(h, w, c)
