import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from verid.errors import InvalidLabel, LabelOutOfRange, ShapeMismatch
from verid.nn.losses import (
    ContrastiveConfig,
    contrastive_loss,
    contrastive_terms,
    embedding_distance,
    l2_penalty,
    softmax_xent,
)

from conftest import numeric_grad, rel_error


def mp_softmax_xent(logits, labels):
    mpmath.mp.dps = 50
    n, s = logits.shape
    loss = mpmath.mpf(0)
    grad = np.zeros((n, s))
    for i in range(n):
        z = sum(mpmath.exp(mpmath.mpf(float(v))) for v in logits[i])
        loss += mpmath.log(z) - mpmath.mpf(float(logits[i, labels[i]]))
        for k in range(s):
            p = mpmath.exp(mpmath.mpf(float(logits[i, k]))) / z
            grad[i, k] = float((p - (1 if k == labels[i] else 0)) / n)
    return float(loss / n), grad


class TestSoftmax:
    def test_uniform(self):
        loss, _ = softmax_xent(np.zeros((3, 4)), np.array([0, 1, 3]))
        assert loss == pytest.approx(math.log(4), abs=1e-15)

    def test_stabilized(self):
        loss, grad = softmax_xent(np.array([[1000.0, 0.0]]), np.array([0]))
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(grad))

    @pytest.mark.parametrize("seed", range(5))
    def test_against_high_precision(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.standard_normal((3, 5)) * 3
        labels = rng.integers(0, 5, 3)
        loss, grad = softmax_xent(logits, labels)
        ref_loss, ref_grad = mp_softmax_xent(logits, labels)
        assert loss == pytest.approx(ref_loss, abs=1e-10)
        np.testing.assert_allclose(grad, ref_grad, atol=1e-10)

    def test_grad_rows_sum_to_zero(self):
        rng = np.random.default_rng(9)
        _, grad = softmax_xent(rng.standard_normal((6, 7)), rng.integers(0, 7, 6))
        np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-15)

    def test_label_range(self):
        with pytest.raises(LabelOutOfRange):
            softmax_xent(np.zeros((2, 3)), np.array([0, 3]))


class TestDistance:
    def test_identity_and_axes(self):
        e = np.array([[1.0, 0.0]])
        assert embedding_distance(e, e)[0] == 0
        assert embedding_distance(e, np.array([[0.0, 1.0]]))[0] == pytest.approx(math.sqrt(2))

    def test_against_elementwise_sum(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((6, 9)), rng.standard_normal((6, 9))
        ref = [math.sqrt(sum((a[i, k] - b[i, k]) ** 2 for k in range(9))) for i in range(6)]
        np.testing.assert_allclose(embedding_distance(a, b), ref, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            embedding_distance(np.zeros((2, 3)), np.zeros((2, 4)))


def pair_at_distance(d):
    return np.array([[0.0, 0.0]]), np.array([[d, 0.0]])


class TestContrastive:
    cfg = ContrastiveConfig(margin=1.0, lam=0.0)

    @pytest.mark.parametrize(
        "y,d,expected",
        [(1, 0.0, 0.0), (0, 1.0, 0.0), (0, 2.5, 0.0), (1, 0.5, 0.125), (0, 0.25, 0.28125)],
    )
    def test_hand_values(self, y, d, expected):
        e1, e2 = pair_at_distance(d)
        loss, _, _ = contrastive_loss(e1, e2, np.array([y]), self.cfg)
        assert loss == pytest.approx(expected, abs=1e-9)

    def test_mean_over_pairs_plus_penalty(self):
        e1 = np.array([[0.0, 0.0], [0.0, 0.0]])
        e2 = np.array([[0.5, 0.0], [0.25, 0.0]])
        w = [np.array([1.0, 2.0]), np.array([[3.0]])]
        loss, _, _ = contrastive_loss(e1, e2, np.array([1, 0]), ContrastiveConfig(1.0, 0.01), w)
        assert loss == pytest.approx((0.125 + 0.28125) / 2 + 0.01 * 14, abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients_away_from_kinks(self, seed):
        rng = np.random.default_rng(seed)
        cfg = ContrastiveConfig(margin=2.0, lam=0.0)
        e1 = rng.standard_normal((6, 4))
        e2 = rng.standard_normal((6, 4))
        y = np.array([1, 0, 1, 0, 0, 1])
        d = embedding_distance(e1, e2)
        assert np.all(np.abs(d - cfg.margin) > 1e-3)
        _, g1, g2 = contrastive_loss(e1, e2, y, cfg)
        f = lambda: contrastive_loss(e1, e2, y, cfg)[0]
        assert rel_error(g1, numeric_grad(f, e1)) < 1e-6
        assert rel_error(g2, numeric_grad(f, e2)) < 1e-6

    def test_impostor_subgradient_at_zero_distance(self):
        e = np.array([[1.0, 1.0]])
        _, g1, g2 = contrastive_loss(e, e.copy(), np.array([0]), self.cfg)
        assert np.all(g1 == 0) and np.all(g2 == 0)

    def test_zero_margin_removes_impostor_term(self):
        e1, e2 = pair_at_distance(0.3)
        loss, g1, _ = contrastive_loss(e1, e2, np.array([0]), ContrastiveConfig(0.0, 0.0))
        assert loss == 0 and np.all(g1 == 0)

    def test_invalid_label(self):
        e1, e2 = pair_at_distance(0.3)
        with pytest.raises(InvalidLabel):
            contrastive_loss(e1, e2, np.array([2]), self.cfg)

    def test_penalty_gradient(self):
        w = np.random.default_rng(0).standard_normal((3, 4))
        value, (grad,) = l2_penalty([w], 0.1)
        assert value == pytest.approx(0.1 * np.sum(w ** 2))
        assert rel_error(grad, numeric_grad(lambda: l2_penalty([w], 0.1)[0], w)) < 1e-6

    @given(st.one_of(st.just(0.0), st.floats(1e-6, 10)), st.floats(0.01, 5), st.integers(0, 1))
    @settings(max_examples=200, deadline=None)
    def test_term_nonnegative_and_zero_iff(self, d, margin, y):
        term = contrastive_terms(np.array([d]), np.array([y]), margin)[0]
        assert term >= 0
        assert (term == 0) == ((y == 1 and d == 0) or (y == 0 and d >= margin))

    @given(st.floats(0.01, 5), st.floats(0.01, 5))
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_distance(self, d, delta):
        smaller, larger = d, d + delta
        gen = contrastive_terms(np.array([smaller, larger]), np.array([1, 1]), 2.0)
        imp = contrastive_terms(np.array([smaller, larger]), np.array([0, 0]), 2.0)
        assert gen[0] < gen[1]
        assert imp[0] >= imp[1]
