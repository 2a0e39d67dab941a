import numpy as np
import pytest

from cgssl.confidence import softmax
from cgssl.errors import InvalidInputError, InvalidSpecError
from cgssl.mixmatch import (
    MixMatchConfig,
    MixedBatch,
    guess_labels,
    mixmatch_batch,
    mixmatch_loss,
    mixup,
    sharpen,
)
from cgssl.models import build_classifier, forward_logits


def entropy(p):
    p = np.asarray(p)
    terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


def random_simplex(rng, n, k):
    raw = rng.gamma(1.0, size=(n, k))
    return raw / raw.sum(axis=1, keepdims=True)


class TestSharpen:
    def test_identity_at_t1_exact(self):
        rng = np.random.default_rng(0)
        p = random_simplex(rng, 200, 6)
        out = sharpen(p, 1.0)
        assert np.array_equal(out, p)

    def test_uniform_stays_uniform(self):
        p = np.full(5, 0.2)
        for t in (0.25, 0.5, 2.0):
            assert np.abs(sharpen(p, t) - 0.2).max() < 1e-12

    def test_hand_computed_value(self):
        # [0.6^2, 0.4^2] / (0.36 + 0.16)
        out = sharpen([0.6, 0.4], 0.5)
        assert np.abs(out - [0.36 / 0.52, 0.16 / 0.52]).max() < 1e-9

    def test_simplex_argmax_entropy_suite(self):
        rng = np.random.default_rng(1)
        p = random_simplex(rng, 1000, 8)
        out = sharpen(p, 0.5)
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-6
        assert np.array_equal(out.argmax(axis=1), p.argmax(axis=1))
        assert np.all(entropy(out) <= entropy(p) + 1e-12)

    def test_rejects_bad_inputs(self):
        with pytest.raises(InvalidSpecError):
            sharpen([0.5, 0.5], 0.0)
        with pytest.raises(InvalidSpecError):
            sharpen([0.5, 0.5], -1.0)
        with pytest.raises(InvalidInputError):
            sharpen([0.9, 0.3], 0.5)


class TestMixup:
    def test_max_rule_and_convexity(self):
        x1 = np.zeros((2, 2, 1))
        x2 = np.ones((2, 2, 1))
        for seed in range(40):
            mixed, target, lam = mixup(x1, [1.0, 0.0], x2, [0.0, 1.0], 0.5, seed)
            assert 0.5 <= lam <= 1.0
            assert np.abs(target - [lam, 1 - lam]).max() < 1e-12
            assert np.abs(mixed - (1 - lam)).max() < 1e-12

    def test_equal_operands_fixed_point(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(size=(3, 3, 2))
        t = np.array([0.3, 0.7])
        mixed, target, _ = mixup(x, t, x, t, 0.5, seed=9)
        assert np.abs(mixed - x).max() < 1e-12
        assert np.abs(target - t).max() < 1e-12

    def test_target_stays_on_simplex(self):
        rng = np.random.default_rng(3)
        for seed in range(50):
            t1 = random_simplex(rng, 1, 5)[0]
            t2 = random_simplex(rng, 1, 5)[0]
            x = rng.uniform(size=(2, 2, 1))
            _, target, _ = mixup(x, t1, x, t2, 0.5, seed)
            assert abs(target.sum() - 1.0) < 1e-9
            assert target.min() >= -1e-12

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            mixup(np.zeros((2, 2, 1)), [1, 0], np.zeros((3, 3, 1)), [0, 1], 0.5, 0)


class TestGuessLabels:
    def test_degenerate_is_plain_softmax(self, toy_spec, toy_data):
        model = build_classifier(toy_spec, seed=4)
        x = toy_data.images[:6]
        got = guess_labels(model, x, k_aug=1, temperature=1.0, seed=0, augment=False)
        expect = softmax(forward_logits(model, x))
        assert np.abs(got - expect).max() < 1e-12

    def test_rows_on_simplex(self, toy_spec, toy_data):
        model = build_classifier(toy_spec, seed=4)
        got = guess_labels(model, toy_data.images[:8], k_aug=2, temperature=0.5, seed=3)
        assert np.abs(got.sum(axis=1) - 1.0).max() < 1e-6

    def test_constant_model_gives_sharpened_constant(self, toy_spec, toy_data):
        model = build_classifier(toy_spec, seed=5)
        model.head.w[...] = 0.0
        model.head.b[...] = np.array([1.0, 0.5, 0.0, -0.5], dtype=model.dtype)
        got = guess_labels(model, toy_data.images[:5], k_aug=2, temperature=0.5, seed=1)
        from cgssl.mixmatch import sharpen as _sharpen

        expect = _sharpen(softmax(np.array([1.0, 0.5, 0.0, -0.5])), 0.5)
        assert np.abs(got - expect).max() < 1e-5


class TestMixMatchBatch:
    def _batches(self, toy_data, n=6):
        x = toy_data.images[:n]
        y = np.eye(4)[toy_data.labels[:n]]
        u = toy_data.images[n : 2 * n]
        return x, y, u

    def test_size_bookkeeping(self, toy_spec, toy_data):
        model = build_classifier(toy_spec, seed=6)
        x, y, u = self._batches(toy_data)
        config = MixMatchConfig(k_aug=2, batch_size=6)
        x_prime, u_prime = mixmatch_batch(model, (x, y), u, config, seed=0)
        assert x_prime.inputs.shape[0] == len(x)
        assert u_prime.inputs.shape[0] == config.k_aug * len(u)

    def test_targets_on_simplex(self, toy_spec, toy_data):
        model = build_classifier(toy_spec, seed=6)
        x, y, u = self._batches(toy_data)
        x_prime, u_prime = mixmatch_batch(model, (x, y), u, MixMatchConfig(), seed=1)
        for mb in (x_prime, u_prime):
            assert np.abs(mb.targets.sum(axis=1) - 1.0).max() < 1e-6
            assert mb.targets.min() >= -1e-9

    def test_degenerate_trace_returns_labeled_batch(self, toy_spec, toy_data):
        model = build_classifier(toy_spec, seed=6)
        x, y, u = self._batches(toy_data)
        config = MixMatchConfig(k_aug=1, temperature=1.0, augment=False, mixup_enabled=False)
        x_prime, u_prime = mixmatch_batch(model, (x, y), u, config, seed=2)
        assert np.array_equal(x_prime.inputs, x)
        assert np.array_equal(x_prime.targets, y)

    def test_trace_payload(self, toy_spec, toy_data):
        model = build_classifier(toy_spec, seed=6)
        x, y, u = self._batches(toy_data)
        _, _, trace = mixmatch_batch(model, (x, y), u, MixMatchConfig(k_aug=2), seed=3,
                                     return_trace=True)
        assert set(trace) == {"guessed_labels", "lambdas", "labeled_targets_mixed",
                              "unlabeled_targets_mixed"}
        assert len(trace["guessed_labels"]) == len(u)
        assert len(trace["lambdas"]) == len(x) + 2 * len(u)
        assert all(0.5 <= lam <= 1.0 for lam in trace["lambdas"])


class TestMixMatchLoss:
    def test_beta_zero_is_pure_cross_entropy(self):
        rng = np.random.default_rng(7)
        pred = rng.normal(size=(5, 4))
        targets = random_simplex(rng, 5, 4)
        total, l_x, l_u = mixmatch_loss(pred, targets, pred, targets, 0.0)
        assert total == l_x

    def test_perfect_consistency_zeroes_l_u(self):
        rng = np.random.default_rng(8)
        pred_u = rng.normal(size=(6, 3))
        targets_u = softmax(pred_u)
        _, _, l_u = mixmatch_loss(pred_u, targets_u, pred_u, targets_u, 1.0)
        assert l_u < 1e-12

    def test_hand_case(self):
        # softmax(pred_u) = [0.5, 0.5] against target [1, 0]
        pred_u = np.array([[3.0, 3.0]])
        targets_u = np.array([[1.0, 0.0]])
        pred_x = np.array([[0.0, 0.0]])
        targets_x = np.array([[0.5, 0.5]])
        _, _, l_u = mixmatch_loss(pred_x, targets_x, pred_u, targets_u, 1.0)
        assert abs(l_u - 0.25) < 1e-12

    def test_total_nonnegative(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            px, pu = rng.normal(size=(4, 5)), rng.normal(size=(6, 5))
            tx, tu = random_simplex(rng, 4, 5), random_simplex(rng, 6, 5)
            total, l_x, l_u = mixmatch_loss(px, tx, pu, tu, rng.uniform(0, 100))
            assert total >= 0.0 and l_x >= 0.0 and l_u >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            mixmatch_loss(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 3)), np.zeros((2, 3)), 1.0)


class TestMixedBatchType:
    def test_rejects_off_simplex_targets(self):
        with pytest.raises(InvalidInputError):
            MixedBatch(np.zeros((1, 2, 2, 1)), np.array([[0.9, 0.3]]))

    def test_config_invariants(self):
        with pytest.raises(InvalidSpecError):
            MixMatchConfig(alpha=0.0)
        with pytest.raises(InvalidSpecError):
            MixMatchConfig(temperature=0.0)
        with pytest.raises(InvalidSpecError):
            MixMatchConfig(beta=-1.0)
        with pytest.raises(InvalidSpecError):
            MixMatchConfig(k_aug=0)
