"""
Interval bound propagation and threshold folding
================================================

IBP pushes a box through the network layer by layer.  The output box is
sound: every input in the box lands inside it.  On a zero-width box it
degenerates to exact inference.  Folding turns sign(batchnorm(x)) into
a single per-channel threshold test that agrees with the float
composition everywhere, including at the threshold itself.
"""

import numpy as np

from bnnverify.arch import random_tiny_network
from bnnverify.layers import BatchNorm, sign_quantize
from bnnverify.network import network_forward, network_forward_batch
from bnnverify.verify import (
    IntervalTensor,
    fold_bn_sign,
    ibp_propagate,
    verify_ibp,
)
from bnnverify.vnnlib import make_property
from bnnverify.verify import property_box

rng = np.random.default_rng(3)
net = random_tiny_network(rng, max_side=4)
image = rng.integers(0, 9, size=net.input_shape).astype(np.float64)

# point box: bounds collapse onto the exact logits
point = IntervalTensor(image, image)
out = ibp_propagate(net, point)
exact = network_forward(net, image)
print(f"point box is exact: {np.array_equal(out.lo, exact) and np.array_equal(out.hi, exact)}")

# widen the box and watch the output bounds widen too, never unsoundly
for eps in (1, 2, 4):
    box = IntervalTensor(image - eps, image + eps)
    out = ibp_propagate(net, box)
    samples = rng.uniform(box.lo, box.hi, size=(2000,) + net.input_shape)
    logits = network_forward_batch(net, samples)
    ok = np.all(logits >= out.lo) and np.all(logits <= out.hi)
    spread = float(np.max(out.hi - out.lo))
    print(f"eps={eps}: max logit spread {spread:.0f}, 2000 samples inside: {ok}")

# when the target's lower bound clears every rival's upper bound the
# instance is verified outright
prop = make_property(image, epsilon=0, label=int(np.argmax(exact)),
                     num_outputs=net.num_classes)
print(f"eps=0 verdict: {verify_ibp(net, prop).status}")
print(f"property_box shape: {property_box(net, prop).shape}")

# threshold folding: sign(batchnorm(x)) becomes direction + threshold.
# agreement is float-exact, threshold included
bn = BatchNorm(gamma=np.array([2.0, -1.5]), beta=np.array([0.3, 0.7]),
               moving_mean=np.array([1.0, -2.0]),
               moving_variance=np.array([0.9, 0.4]))
fold = fold_bn_sign(bn)
print(f"fold directions {fold.direction.tolist()}, "
      f"thresholds {np.round(fold.threshold, 6).tolist()}")
xs = rng.uniform(-6, 6, size=(5000, 2))
composed = sign_quantize(bn.gamma / np.sqrt(bn.moving_variance + bn.eps)
                         * (xs - bn.moving_mean) + bn.beta)
print(f"fold agrees on 5000 random points: "
      f"{np.array_equal(fold.apply(xs), composed)}")
t0 = fold.threshold[0]
probes = np.array([[np.nextafter(t0, -np.inf), 0.0], [t0, 0.0],
                   [np.nextafter(t0, np.inf), 0.0]])
print(f"at the threshold and one ulp either side: "
      f"{fold.apply(probes)[:, 0].tolist()}")
