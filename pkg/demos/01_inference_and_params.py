"""
Exact inference through the three classifier architectures
===========================================================

Builds the two binarized convnets and the XNOR variant, checks their
parameter budgets, and pushes one random traffic-sign-sized image
through each.  Everything is float64 and exact; sign(0) is +1.
"""

import numpy as np

from bnnverify.arch import build_arch_a, build_arch_b, build_arch_xnor, \
    with_random_weights
from bnnverify.network import count_params, network_forward, predict

rng = np.random.default_rng(0)

for name, net in [
    ("arch A 64x64", with_random_weights(build_arch_a(64, 64), rng)),
    ("arch B 48x48", with_random_weights(build_arch_b(48, 48), rng)),
    ("XNOR 30x30", with_random_weights(build_arch_xnor(30, 30), rng)),
]:
    counts = count_params(net)
    print(f"{name}: binary={counts.binary} real={counts.real} "
          f"total={counts.total}")

    # raw pixels, 0..255, channel-last
    image = rng.integers(0, 256, size=net.input_shape).astype(np.float64)
    logits = network_forward(net, image)
    print(f"  logits are integers: {np.all(logits == np.floor(logits))}")
    print(f"  predicted class: {predict(net, image)} of {net.num_classes}")

# the layer chain is inspectable; shapes thread through exactly
net = build_arch_b(48, 48)
shapes = net.layer_shapes()
print("\narch B shape chain:")
for layer, shape in zip(net.layers, shapes[1:]):
    print(f"  {type(layer).__name__:<10} -> {shape}")
