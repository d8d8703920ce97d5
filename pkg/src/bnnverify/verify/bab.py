"""Best-first branch-and-bound over input sub-boxes.

Each node carries one sub-box.  A node is pruned when interval propagation
proves strict target dominance on it, falsified when the concrete forward
pass at its centre violates the property, and split otherwise along the
widest input dimension.  In integer-grid mode (the benchmark default)
every box eventually shrinks to single grid points, so the search is
complete; verdicts then coincide with brute-force enumeration.

Nodes are expanded one at a time in a deterministic priority order
(largest IBP violation margin first, FIFO among ties), which makes the
verdict and any witness independent of timing.
"""

import heapq
import itertools
import time

import numpy as np

from ..network import image_from_flat, network_forward
from ..vnnlib import check_witness, witness_from_flat
from .brute import integer_grid_bounds
from .intervals import IntervalTensor, check_property_shapes, ibp_propagate
from .verdict import FALSIFIED, TIMEOUT, UNKNOWN, VERIFIED, Verdict

__all__ = ["bab_verify"]


def bab_verify(net, prop, timeout=None, max_nodes=None, integer_grid=True):
    """Branch-and-bound verification.

    timeout      wall-clock seconds; checked between nodes, so a node in
                 flight always completes (0 means give up immediately)
    max_nodes    bound on boxes bounded before answering Unknown
    integer_grid restrict the search to integer inputs (benchmark mode);
                 continuous mode splits at real midpoints and may answer
                 Unknown when boxes stop shrinking
    """
    start = time.perf_counter()
    check_property_shapes(net, prop)
    if timeout is not None and timeout <= 0:
        return Verdict(TIMEOUT, nodes=0, seconds=time.perf_counter() - start)

    if integer_grid:
        root_lo, root_hi = integer_grid_bounds(prop)
    else:
        root_lo, root_hi = prop.bounds_arrays()
    target = prop.target_label
    shape = net.input_shape
    nodes = 0

    def margin(lo, hi):
        # worst rival upper bound minus target lower bound; < 0 proves the box
        nonlocal nodes
        nodes += 1
        box = IntervalTensor(image_from_flat(lo, shape), image_from_flat(hi, shape))
        out = ibp_propagate(net, box)
        return float(np.max(np.delete(out.hi, target) - out.lo[target]))

    def done(status, witness=None):
        return Verdict(
            status, witness=witness, nodes=nodes, seconds=time.perf_counter() - start
        )

    root_margin = margin(root_lo, root_hi)
    if root_margin < 0:
        return done(VERIFIED)

    tiebreak = itertools.count()
    heap = [(-root_margin, next(tiebreak), root_lo, root_hi)]
    stuck = False

    while heap:
        if timeout is not None and time.perf_counter() - start >= timeout:
            return done(TIMEOUT)
        if max_nodes is not None and nodes >= max_nodes:
            return done(UNKNOWN)
        _, _, lo, hi = heapq.heappop(heap)

        widths = hi - lo
        if integer_grid:
            centre = lo + np.floor(widths * 0.5)
        else:
            centre = (lo + hi) * 0.5
        logits = network_forward(net, image_from_flat(centre, shape))
        rivals = np.delete(logits, target)
        if np.any(rivals >= logits[target]):
            w = witness_from_flat(centre, logits=logits)
            if not check_witness(net, prop, w):
                raise RuntimeError("internal error: probe witness failed its own check")
            return done(FALSIFIED, witness=w)

        d = int(np.argmax(widths))
        if widths[d] <= 0:
            continue  # single point, and its probe just passed: proven
        if integer_grid:
            mid = np.floor((lo[d] + hi[d]) * 0.5)
            pairs = ((lo[d], mid), (mid + 1.0, hi[d]))
        else:
            mid = (lo[d] + hi[d]) * 0.5
            if not (lo[d] < mid < hi[d]):
                stuck = True  # float resolution exhausted; box not a point
                continue
            pairs = ((lo[d], mid), (mid, hi[d]))
        for child_lo_d, child_hi_d in pairs:
            child_lo = lo.copy()
            child_hi = hi.copy()
            child_lo[d] = child_lo_d
            child_hi[d] = child_hi_d
            m = margin(child_lo, child_hi)
            if m >= 0:
                heapq.heappush(heap, (-m, next(tiebreak), child_lo, child_hi))

    return done(UNKNOWN if stuck else VERIFIED)
