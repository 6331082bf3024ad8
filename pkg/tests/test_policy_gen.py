"""Dataset labeling, class weighting, and softmax policy training."""

import math

import numpy as np
import pytest

from edgeplace.context_model import Memory
from edgeplace.policy_gen import (
    Policy,
    TrainingStrategy,
    build_dataset,
    default_strategies,
    generate_policies,
    softmax_loss_grad,
    train_policy,
)


def memory_from(points, n_arms=2, entities=("s",)):
    """points: iterable of (context tuple, arm, cost)."""
    mem = Memory(entities, n_arms=n_arms)
    for t, (ctx, arm, cost) in enumerate(points):
        mem.append(t, np.zeros(len(entities)), arm, cost, context=tuple(ctx))
    return mem


class TestDatasetLabels:
    def test_cheapest_arm_wins(self):
        mem = memory_from([((1,), 0, 0.3), ((1,), 1, 0.2)])
        ds = build_dataset(mem)
        assert ds.labels.tolist() == [1]

    def test_tie_goes_to_lowest_arm_index(self):
        mem = memory_from([((1,), 1, 0.5), ((1,), 0, 0.5)])
        ds = build_dataset(mem)
        assert ds.labels.tolist() == [0]

    def test_minimum_cost_represents_repeated_pairs(self):
        # arm 0 was seen at 0.9 and 0.1; the 0.1 sample should beat arm 1's 0.4.
        mem = memory_from([((2,), 0, 0.9), ((2,), 1, 0.4), ((2,), 0, 0.1)])
        ds = build_dataset(mem)
        assert ds.labels.tolist() == [0]

    def test_contexts_deduplicated_and_sorted(self):
        mem = memory_from(
            [((2,), 0, 1.0), ((1,), 0, 1.0), ((2,), 1, 0.5), ((1,), 0, 0.9)]
        )
        ds = build_dataset(mem)
        assert ds.contexts.tolist() == [[1], [2]]
        assert ds.labels.tolist() == [0, 1]

    def test_share_sums_to_one(self):
        mem = memory_from(
            [((1,), 0, 1.0), ((2,), 1, 1.0), ((3,), 1, 1.0), ((4,), 1, 1.0)]
        )
        ds = build_dataset(mem)
        assert ds.arm_share.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(ds.arm_share, [0.25, 0.75])

    def test_single_arm_dataset_weight(self):
        # Every context labeled the same arm: rho = 1, weight exp(-1) at sigma 1.
        mem = memory_from([((1,), 0, 1.0), ((2,), 0, 2.0)])
        ds = build_dataset(mem, sigma=1.0)
        assert ds.arm_weights[0] == pytest.approx(math.exp(-1.0))

    def test_unused_arm_keeps_weight_one(self):
        mem = memory_from([((1,), 0, 1.0)])
        ds = build_dataset(mem, sigma=1.0)
        assert ds.arm_share[1] == 0.0
        assert ds.arm_weights[1] == pytest.approx(1.0)

    def test_sigma_controls_flattening(self):
        mem = memory_from([((1,), 0, 1.0), ((2,), 1, 1.0)])
        sharp = build_dataset(mem, sigma=0.5)
        flat = build_dataset(mem, sigma=5.0)
        # Larger sigma pushes every weight toward 1.
        assert np.all(flat.arm_weights > sharp.arm_weights)

    def test_context_without_discretization_rejected(self):
        mem = Memory(("s",), n_arms=1)
        mem.append(0, np.array([1.0]), 0, 1.0)   # no context attached
        with pytest.raises(ValueError):
            build_dataset(mem)

    def test_bad_sigma_rejected(self):
        mem = memory_from([((1,), 0, 1.0)])
        with pytest.raises(ValueError):
            build_dataset(mem, sigma=0.0)


class TestTraining:
    def separable_memory(self):
        # Context (1, 2) wants arm 0, context (2, 1) wants arm 1: linearly
        # separable by the sign of feature difference.
        return memory_from(
            [((1, 2), 0, 0.1), ((1, 2), 1, 0.9), ((2, 1), 1, 0.1), ((2, 1), 0, 0.9)],
            n_arms=2,
            entities=("s", "e"),
        )

    def test_separable_data_fits_exactly(self):
        ds = build_dataset(self.separable_memory(), levels=2)
        policy = train_policy(ds, TrainingStrategy(0.5, 300), seed=0)
        assert policy.predict((1, 2)) == 0
        assert policy.predict((2, 1)) == 1

    def test_single_class_memorized(self):
        mem = memory_from([((1,), 0, 0.1), ((2,), 0, 0.2)])
        ds = build_dataset(mem, levels=2)
        policy = train_policy(ds, TrainingStrategy(0.5, 200), seed=1)
        assert policy.predict((1,)) == 0
        assert policy.predict((2,)) == 0

    def test_same_seed_reproduces_parameters(self):
        ds = build_dataset(self.separable_memory(), levels=2)
        a = train_policy(ds, TrainingStrategy(0.2, 100), seed=7)
        b = train_policy(ds, TrainingStrategy(0.2, 100), seed=7)
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.bias, b.bias)

    def test_different_settings_give_different_parameters(self):
        ds = build_dataset(self.separable_memory(), levels=2)
        a = train_policy(ds, TrainingStrategy(0.2, 100), seed=7)
        b = train_policy(ds, TrainingStrategy(0.05, 100), seed=7)
        assert not np.array_equal(a.weights, b.weights)

    def test_prediction_total_over_context_space(self):
        ds = build_dataset(self.separable_memory(), levels=2)
        policy = train_policy(ds, TrainingStrategy(0.3, 100), seed=3)
        for ctx in [(1, 1), (1, 2), (2, 1), (2, 2)]:
            assert 0 <= policy.predict(ctx) < 2

    def test_dimension_mismatch_rejected(self):
        ds = build_dataset(self.separable_memory(), levels=2)
        policy = train_policy(ds, TrainingStrategy(0.3, 50), seed=3)
        with pytest.raises(ValueError):
            policy.predict((1,))

    def test_argmax_tie_breaks_to_lowest_index(self):
        policy = Policy(
            policy_id="zero",
            weights=np.zeros((3, 2)),
            bias=np.zeros(3),
            levels=2,
            sigma=1.0,
            strategy=TrainingStrategy(),
        )
        assert policy.predict((1, 2)) == 0


class TestGradients:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(42)
        n, f, k = 12, 3, 4
        feats = rng.random((n, f))
        labels = rng.integers(k, size=n)
        sample_w = rng.uniform(0.5, 1.5, size=n)
        weights = rng.standard_normal((k, f))
        bias = rng.standard_normal(k)
        _, d_w, d_b = softmax_loss_grad(weights, bias, feats, labels, sample_w)
        h = 1e-6
        for idx in np.ndindex(k, f):
            bumped = weights.copy(); bumped[idx] += h
            dipped = weights.copy(); dipped[idx] -= h
            lo = softmax_loss_grad(dipped, bias, feats, labels, sample_w)[0]
            hi = softmax_loss_grad(bumped, bias, feats, labels, sample_w)[0]
            fd = (hi - lo) / (2 * h)
            assert d_w[idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)
        for j in range(k):
            bumped = bias.copy(); bumped[j] += h
            dipped = bias.copy(); dipped[j] -= h
            fd = (
                softmax_loss_grad(weights, bumped, feats, labels, sample_w)[0]
                - softmax_loss_grad(weights, dipped, feats, labels, sample_w)[0]
            ) / (2 * h)
            assert d_b[j] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_loss_decreases_under_training(self):
        rng = np.random.default_rng(0)
        feats = rng.random((30, 2))
        labels = (feats[:, 0] > feats[:, 1]).astype(int)
        sample_w = np.ones(30)
        weights = np.zeros((2, 2)); bias = np.zeros(2)
        losses = []
        for _ in range(50):
            loss, d_w, d_b = softmax_loss_grad(weights, bias, feats, labels, sample_w)
            losses.append(loss)
            weights -= 0.5 * d_w
            bias -= 0.5 * d_b
        assert losses[-1] < losses[0]


class TestGeneratePolicies:
    def covering_memory(self):
        # Full L=2 coverage of a 2-entity space; the first entity's level
        # decides the cheap arm, which any linear model separates quickly.
        points = []
        for a in (1, 2):
            for b in (1, 2):
                good = 0 if a == 1 else 1
                points.append(((a, b), good, 0.1))
                points.append(((a, b), 1 - good, 0.8))
        return memory_from(points, n_arms=2, entities=("s", "e"))

    def test_count_matches_strategies(self):
        mem = self.covering_memory()
        policies = generate_policies(mem, 3, default_strategies(3), seed=0, levels=2)
        assert len(policies) == 3
        assert len({p.policy_id for p in policies}) == 3

    def test_fully_covered_space_policies_agree_with_labels(self):
        mem = self.covering_memory()
        ds = build_dataset(mem, levels=2)
        policies = generate_policies(mem, 4, default_strategies(4), seed=1, levels=2)
        for policy in policies:
            for ctx, label in zip(ds.contexts, ds.labels):
                assert policy.predict(tuple(ctx)) == label

    def test_strategy_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            generate_policies(self.covering_memory(), 2, default_strategies(3), seed=0)

    def test_deterministic_given_seed(self):
        mem = self.covering_memory()
        a = generate_policies(mem, 2, default_strategies(2), seed=9, levels=2)
        b = generate_policies(mem, 2, default_strategies(2), seed=9, levels=2)
        for p1, p2 in zip(a, b):
            np.testing.assert_array_equal(p1.weights, p2.weights)


class TestSerialization:
    def test_json_round_trip(self):
        mem = memory_from([((1,), 0, 0.2), ((2,), 1, 0.1)])
        ds = build_dataset(mem, levels=2)
        policy = train_policy(ds, TrainingStrategy(0.2, 80), seed=5, policy_id="rt")
        back = Policy.from_json(policy.to_json())
        assert back.policy_id == "rt"
        assert back.levels == policy.levels
        np.testing.assert_array_equal(back.weights, policy.weights)
        np.testing.assert_array_equal(back.bias, policy.bias)
        for ctx in [(1,), (2,)]:
            assert back.predict(ctx) == policy.predict(ctx)

    def test_unknown_version_rejected(self):
        with pytest.raises(ValueError):
            Policy.from_json('{"format_version": 99}')
