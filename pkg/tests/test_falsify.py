"""Attack determinism, witness soundness, and greedy sweep semantics."""

import itertools

import numpy as np
import pytest

from bnnverify.arch import random_tiny_network
from bnnverify.errors import ShapeMismatchError
from bnnverify.falsify import AttackConfig, falsify, greedy_attack, random_attack
from bnnverify.layers import Flatten, QDense
from bnnverify.network import Network, network_forward, predict
from bnnverify.vnnlib import check_witness, make_property
from bnnverify.verify import brute_force_verify, integer_grid_bounds


# 4-pixel toy that flips its argmax inside the eps=1 ball (rediscovered
# from scratch below before any attack runs against it)
BRITTLE_W = [[1.0, 1.0, -1.0], [-1.0, 1.0, 1.0], [1.0, -1.0, 1.0], [-1.0, -1.0, 1.0]]
BRITTLE_IMG = [1.0, 1.0, 3.0, 3.0]
BRITTLE_LABEL = 2


def toy(weights):
    w = np.asarray(weights, dtype=np.float64)
    return Network(
        input_shape=(1, w.shape[0], 1),
        layers=(Flatten(), QDense(w.shape[1], w, quantize_input=False)),
        num_classes=w.shape[1],
    )


def toy_prop(weights, image, epsilon, label):
    return make_property(
        np.asarray(image).reshape(1, -1, 1),
        epsilon=epsilon,
        label=label,
        num_outputs=np.asarray(weights).shape[1],
    )


def grid_witnesses(net, prop):
    """Exhaustive ball scan: all integer points whose margin is >= 0."""
    g_lo, g_hi = integer_grid_bounds(prop)
    t = prop.target_label
    found = []
    ranges = [range(int(a), int(b) + 1) for a, b in zip(g_lo, g_hi)]
    for point in itertools.product(*ranges):
        x = np.array(point, dtype=np.float64)
        logits = network_forward(net, x.reshape(net.input_shape))
        if np.max(np.delete(logits, t)) >= logits[t]:
            found.append(point)
    return found


class TestRandomAttack:
    def test_zero_epsilon_correct_label_finds_nothing(self):
        checked = 0
        for seed in range(30):
            rng = np.random.default_rng(seed)
            net = random_tiny_network(rng, max_side=3)
            img = rng.integers(0, 9, size=net.input_shape).astype(float)
            logits = network_forward(net, img)
            label = int(np.argmax(logits))
            if np.max(np.delete(logits, label)) >= logits[label]:
                continue  # tie at the centre would itself be a witness
            prop = make_property(img, epsilon=0, label=label,
                                 num_outputs=net.num_classes)
            cfg = AttackConfig(max_samples=50, seed=seed)
            assert random_attack(net, prop, cfg) is None
            assert greedy_attack(net, prop, cfg) is None
            checked += 1
        assert checked >= 8

    def test_brittle_toy_yields_checked_witness(self):
        net = toy(BRITTLE_W)
        prop = toy_prop(BRITTLE_W, BRITTLE_IMG, 1, BRITTLE_LABEL)
        assert grid_witnesses(net, prop)  # the ball provably contains one
        w = random_attack(net, prop, AttackConfig(max_samples=5000, seed=7))
        assert w is not None
        assert check_witness(net, prop, w)
        assert tuple(w.input_values) in set(grid_witnesses(net, prop))

    def test_same_seed_same_witness(self):
        net = toy(BRITTLE_W)
        prop = toy_prop(BRITTLE_W, BRITTLE_IMG, 1, BRITTLE_LABEL)
        cfg = AttackConfig(max_samples=5000, seed=3)
        a = random_attack(net, prop, cfg)
        b = random_attack(net, prop, cfg)
        assert a is not None
        assert a.input_values == b.input_values
        assert a.output_values == b.output_values

    def test_budget_extension_keeps_early_witness(self):
        # found inside the shared batch prefix, so a larger budget must
        # return the identical sample
        net = toy(BRITTLE_W)
        prop = toy_prop(BRITTLE_W, BRITTLE_IMG, 2, BRITTLE_LABEL)
        small = random_attack(net, prop, AttackConfig(max_samples=5000, seed=1))
        large = random_attack(net, prop, AttackConfig(max_samples=10000, seed=1))
        assert small is not None
        assert small.input_values == large.input_values

    def test_continuous_mode_samples_floats_in_bounds(self):
        net = toy(BRITTLE_W)
        prop = toy_prop(BRITTLE_W, BRITTLE_IMG, 2, BRITTLE_LABEL)
        cfg = AttackConfig(max_samples=10000, seed=5, integer_grid=False)
        w = random_attack(net, prop, cfg)
        assert w is not None
        assert check_witness(net, prop, w)
        assert any(v != int(v) for v in w.input_values)

    def test_integer_grid_samples_are_integral(self):
        net = toy(BRITTLE_W)
        prop = toy_prop(BRITTLE_W, BRITTLE_IMG, 1, BRITTLE_LABEL)
        w = random_attack(net, prop, AttackConfig(max_samples=5000, seed=7))
        assert all(v == int(v) for v in w.input_values)

    def test_shape_mismatch_rejected(self):
        net = toy(BRITTLE_W)
        bad = make_property(np.zeros((1, 3, 1)), epsilon=1, label=0, num_outputs=3)
        with pytest.raises(ShapeMismatchError):
            random_attack(net, bad)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AttackConfig(max_samples=0)
        with pytest.raises(ValueError):
            AttackConfig(seed=-1)
        with pytest.raises(ValueError):
            AttackConfig(greedy_passes=-1)


# 6-pixel linear toy: two rival columns are the exact negation of the
# target column, so every margin is -2 * sum(x) and the one falsifying
# point is the all-lower-bound vertex
VERTEX_W = [
    [1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
]
VERTEX_IMG = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0]


def sweep_oracle(net, prop, passes):
    """Plain-loop restatement of the greedy sweep; returns (point, margins)."""
    g_lo, g_hi = integer_grid_bounds(prop)
    lo, hi = prop.bounds_arrays()
    t = prop.target_label

    def margin_at(x):
        logits = network_forward(net, x.reshape(net.input_shape))
        return float(np.max(np.delete(logits, t)) - logits[t])

    x = np.clip(np.floor((lo + hi) * 0.5 + 0.5), g_lo, g_hi)
    margins = [margin_at(x)]
    if margins[-1] >= 0:
        return x, margins
    for _ in range(passes):
        improved = False
        for d in range(x.size):
            cands = [v for v in (float(g_lo[d]), float(g_hi[d])) if v != x[d]]
            scores = []
            for v in cands:
                y = x.copy()
                y[d] = v
                scores.append(margin_at(y))
            if scores and max(scores) > margins[-1]:
                x[d] = cands[int(np.argmax(scores))]
                margins.append(max(scores))
                improved = True
                if margins[-1] >= 0:
                    return x, margins
        if not improved:
            break
    return None, margins


class TestGreedyAttack:
    def test_vertex_toy_found_within_pixel_count_moves(self):
        net = toy(VERTEX_W)
        prop = toy_prop(VERTEX_W, VERTEX_IMG, 1, 0)
        vertices = [
            p for p in grid_witnesses(net, prop)
            if all(v in (0, 2) for v in p)
        ]
        assert vertices == [(0, 0, 0, 0, 0, 0)]  # vertex witness exists
        oracle_point, oracle_margins = sweep_oracle(net, prop, passes=5)
        assert oracle_point is not None
        assert len(oracle_margins) - 1 <= 6  # moves bounded by pixel count
        w = greedy_attack(net, prop, AttackConfig())
        assert w is not None
        assert check_witness(net, prop, w)
        assert np.array_equal(w.input_values, oracle_point)

    def test_objective_non_decreasing_and_matches_oracle(self):
        agree_hit = agree_miss = 0
        for seed in range(25):
            rng = np.random.default_rng(900 + seed)
            net = random_tiny_network(rng, max_side=3)
            img = rng.integers(0, 9, size=net.input_shape).astype(float)
            prop = make_property(img, epsilon=1, label=predict(net, img),
                                 num_outputs=net.num_classes)
            point, margins = sweep_oracle(net, prop, passes=5)
            assert margins == sorted(margins)  # accepted moves never regress
            w = greedy_attack(net, prop, AttackConfig())
            if point is None:
                assert w is None
                agree_miss += 1
            else:
                assert w is not None
                assert np.array_equal(w.input_values, point)
                agree_hit += 1
        assert agree_hit > 0
        assert agree_miss > 0

    def test_robust_instance_yields_none(self):
        verified = 0
        for seed in range(30):
            rng = np.random.default_rng(40 + seed)
            net = random_tiny_network(rng, max_side=3)
            img = rng.integers(0, 9, size=net.input_shape).astype(float)
            prop = make_property(img, epsilon=1, label=predict(net, img),
                                 num_outputs=net.num_classes)
            if not brute_force_verify(net, prop).is_verified:
                continue
            assert greedy_attack(net, prop, AttackConfig()) is None
            verified += 1
            if verified >= 5:
                break
        assert verified >= 5

    def test_centre_tie_is_an_immediate_witness(self):
        w = np.ones((4, 2))
        net = toy(w)
        prop = toy_prop(w, [2.0, 2.0, 2.0, 2.0], 0, 0)
        got = greedy_attack(net, prop, AttackConfig())
        assert got is not None
        assert got.input_values == (2.0, 2.0, 2.0, 2.0)


class TestFalsifyVerdicts:
    def test_falsifiable_reports_sat(self):
        net = toy(BRITTLE_W)
        prop = toy_prop(BRITTLE_W, BRITTLE_IMG, 1, BRITTLE_LABEL)
        v = falsify(net, prop, AttackConfig(max_samples=5000, seed=2))
        assert v.status == "falsified"
        assert v.result_string() == "sat"
        assert check_witness(net, prop, v.witness)

    def test_exhausted_budget_reports_unknown_not_verified(self):
        found = 0
        for seed in range(30):
            rng = np.random.default_rng(200 + seed)
            net = random_tiny_network(rng, max_side=3)
            img = rng.integers(0, 9, size=net.input_shape).astype(float)
            prop = make_property(img, epsilon=1, label=predict(net, img),
                                 num_outputs=net.num_classes)
            if not brute_force_verify(net, prop).is_verified:
                continue
            v = falsify(net, prop, AttackConfig(max_samples=200, seed=seed))
            assert v.status == "unknown"
            assert v.result_string() == "unknown"
            found += 1
            if found >= 3:
                break
        assert found >= 3

    def test_zero_timeout(self):
        net = toy(BRITTLE_W)
        prop = toy_prop(BRITTLE_W, BRITTLE_IMG, 1, BRITTLE_LABEL)
        v = falsify(net, prop, AttackConfig(), timeout=0)
        assert v.status == "timeout"
        assert v.result_string() == "timeout"

    def test_deterministic_wrapper(self):
        net = toy(BRITTLE_W)
        prop = toy_prop(BRITTLE_W, BRITTLE_IMG, 1, BRITTLE_LABEL)
        cfg = AttackConfig(max_samples=5000, seed=11)
        a = falsify(net, prop, cfg)
        b = falsify(net, prop, cfg)
        assert a.status == b.status == "falsified"
        assert a.witness.input_values == b.witness.input_values
