import math

import mpmath
import numpy as np
import pytest

from verid.errors import TooFewFrames, VeridError
from verid.gmm_ubm import DiagGmm, gmm_loglik, llr_score, load_gmm, map_adapt, save_gmm, train_ubm


def mp_loglik(gmm, frame):
    mpmath.mp.dps = 40
    total = mpmath.mpf(0)
    for w, mu, var in zip(gmm.weights, gmm.means, gmm.variances):
        log_n = mpmath.mpf(0)
        for x, m, v in zip(frame, mu, var):
            x, m, v = (mpmath.mpf(float(a)) for a in (x, m, v))
            log_n += -0.5 * mpmath.log(2 * mpmath.pi * v) - (x - m) ** 2 / (2 * v)
        total += mpmath.mpf(float(w)) * mpmath.exp(log_n)
    return float(mpmath.log(total))


def random_gmm(rng, k=3, dim=4):
    w = rng.uniform(0.2, 1.0, k)
    return DiagGmm(w / w.sum(), rng.standard_normal((k, dim)), rng.uniform(0.3, 2.0, (k, dim)))


def two_clusters(seed=0, n=500):
    rng = np.random.default_rng(seed)
    return np.concatenate([rng.normal(-5, 0.3, n), rng.normal(5, 0.3, n)])[:, None]


class TestLoglik:
    def test_standard_normal_peak(self):
        gmm = DiagGmm(np.ones(1), np.zeros((1, 1)), np.ones((1, 1)))
        assert gmm_loglik(gmm, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)

    def test_mixture_bound(self):
        single = DiagGmm(np.ones(1), np.full((1, 2), 1.0), np.ones((1, 2)))
        mix = DiagGmm(np.full(2, 0.5), np.array([[1.0, 1.0], [50.0, 50.0]]), np.ones((2, 2)))
        diff = gmm_loglik(single, [1.0, 1.0]) - gmm_loglik(mix, [1.0, 1.0])
        assert 0 <= diff <= math.log(2) + 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_against_high_precision(self, seed):
        rng = np.random.default_rng(seed)
        gmm = random_gmm(rng)
        frame = rng.standard_normal(4) * 2
        assert gmm_loglik(gmm, frame) == pytest.approx(mp_loglik(gmm, frame), abs=1e-10)

    def test_far_frame_stays_finite(self):
        gmm = DiagGmm(np.ones(1), np.zeros((1, 1)), np.full((1, 1), 1e-4))
        assert np.isfinite(gmm_loglik(gmm, [100.0]))


class TestTrain:
    def test_em_monotone_and_invariants(self):
        x = np.random.default_rng(0).standard_normal((2000, 3)) * [1, 2, 0.5]
        x[:700] += 4
        gmm = train_ubm(x, n_components=8, n_iters=20, seed=1)
        assert len(gmm.trace) == 20
        assert np.all(np.diff(gmm.trace) >= -1e-8)
        assert gmm.weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(gmm.weights >= 0) and np.all(gmm.variances >= 1e-4)

    def test_two_cluster_recovery(self):
        gmm = train_ubm(two_clusters(), n_components=2, n_iters=20, seed=0)
        order = np.argsort(gmm.means[:, 0])
        np.testing.assert_allclose(gmm.means[order, 0], [-5, 5], atol=0.05)
        np.testing.assert_allclose(gmm.weights[order], [0.5, 0.5], atol=0.05)

    def test_single_component_closed_form(self):
        x = np.random.default_rng(2).standard_normal((100, 3)) * 3 + 1
        gmm = train_ubm(x, n_components=1, n_iters=1, seed=0)
        np.testing.assert_allclose(gmm.means[0], x.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(gmm.variances[0], x.var(axis=0), rtol=1e-10)

    def test_too_few_frames(self):
        with pytest.raises(TooFewFrames):
            train_ubm(np.zeros((79, 2)), n_components=8)

    def test_seeded(self):
        x = two_clusters(3)
        a = train_ubm(x, n_components=4, n_iters=3, seed=5)
        b = train_ubm(x, n_components=4, n_iters=3, seed=5)
        assert np.array_equal(a.means, b.means) and a.trace == b.trace

    def test_more_components_than_distinct_points(self):
        # only two distinct values for four components: k-means++ has to repeat centres
        x = np.zeros((40, 1))
        x[20:] = 1.0
        gmm = train_ubm(x, n_components=4, n_iters=3, seed=0)
        assert gmm.weights.sum() == pytest.approx(1.0)
        assert np.all(np.isfinite(gmm.means))


class TestMap:
    def test_fixed_point(self):
        ubm = DiagGmm(np.full(2, 0.5), np.array([[-5.0], [5.0]]), np.full((2, 1), 0.1))
        frames = np.array([[-5.0], [5.0]] * 10)
        np.testing.assert_allclose(map_adapt(ubm, frames).means, ubm.means, atol=1e-12)

    def test_huge_relevance(self):
        rng = np.random.default_rng(0)
        ubm = random_gmm(rng)
        adapted = map_adapt(ubm, rng.standard_normal((50, 4)) + 3, relevance=1e12)
        np.testing.assert_allclose(adapted.means, ubm.means, atol=1e-9)

    def test_single_component_blend(self):
        ubm = DiagGmm(np.ones(1), np.array([[2.0, -1.0]]), np.ones((1, 2)))
        frames = np.random.default_rng(1).standard_normal((30, 2))
        expected = (30 * frames.mean(axis=0) + 16 * ubm.means[0]) / (30 + 16)
        np.testing.assert_allclose(map_adapt(ubm, frames, relevance=16).means[0], expected, rtol=1e-12)

    def test_zero_relevance_gives_weighted_means(self):
        rng = np.random.default_rng(2)
        ubm = random_gmm(rng, k=2, dim=2)
        frames = rng.standard_normal((40, 2))
        adapted = map_adapt(ubm, frames, relevance=0)
        logp = np.stack([[math.log(w) + sum(-0.5 * math.log(2 * math.pi * v) - (x - m) ** 2 / (2 * v)
                                            for x, m, v in zip(f, mu, var))
                          for w, mu, var in zip(ubm.weights, ubm.means, ubm.variances)] for f in frames])
        resp = np.exp(logp - logp.max(axis=1, keepdims=True))
        resp /= resp.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(adapted.means, (resp.T @ frames) / resp.sum(axis=0)[:, None], rtol=1e-9)

    def test_weights_and_variances_copied(self):
        rng = np.random.default_rng(3)
        ubm = random_gmm(rng)
        adapted = map_adapt(ubm, rng.standard_normal((10, 4)))
        assert np.array_equal(adapted.weights, ubm.weights)
        assert np.array_equal(adapted.variances, ubm.variances)


class TestLlr:
    def test_identical_models(self):
        rng = np.random.default_rng(0)
        ubm = random_gmm(rng)
        assert llr_score(ubm, ubm, rng.standard_normal((20, 4))) == 0.0

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_positive_for_own_frames(self, seed):
        rng = np.random.default_rng(seed)
        ubm = random_gmm(rng)
        speaker = DiagGmm(ubm.weights, ubm.means + 4.0, ubm.variances)
        comp = rng.choice(3, size=200, p=speaker.weights)
        frames = speaker.means[comp] + rng.standard_normal((200, 4)) * np.sqrt(speaker.variances[comp])
        assert llr_score(speaker, ubm, frames) > 0

    def test_self_concatenation(self):
        rng = np.random.default_rng(4)
        ubm = random_gmm(rng)
        spk = map_adapt(ubm, rng.standard_normal((30, 4)))
        frames = rng.standard_normal((25, 4))
        assert llr_score(spk, ubm, np.concatenate([frames, frames])) == pytest.approx(
            llr_score(spk, ubm, frames), abs=1e-12
        )


class TestFile:
    def test_roundtrip(self, tmp_path):
        gmm = random_gmm(np.random.default_rng(0))
        save_gmm(tmp_path / "g.gmm", gmm)
        raw = (tmp_path / "g.gmm").read_bytes()
        assert raw.startswith(b"SVGM1\nK 3 dim 4\n")
        back = load_gmm(tmp_path / "g.gmm")
        np.testing.assert_allclose(back.means, gmm.means, rtol=1e-6)
        np.testing.assert_allclose(back.weights, gmm.weights, rtol=1e-6)

    def test_truncated(self, tmp_path):
        gmm = random_gmm(np.random.default_rng(0))
        save_gmm(tmp_path / "g.gmm", gmm)
        (tmp_path / "g.gmm").write_bytes((tmp_path / "g.gmm").read_bytes()[:-4])
        with pytest.raises(VeridError):
            load_gmm(tmp_path / "g.gmm")
