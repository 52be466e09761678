import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import central_difference, random_policy, relative_error
from grpokit.policy import (
    Head,
    PolicyParams,
    QueryContext,
    grad_log_prob,
    kl_divergence,
    kl_logit_grad,
    load_policy,
    log_prob,
    log_probs,
    probabilities,
    sample_group,
    save_policy,
    snapshot,
)


def single_head(logits_bias, d=1):
    K = len(logits_bias)
    return PolicyParams({"match": Head(np.zeros((K, d)), np.array(logits_bias, dtype=float))})


def ctx(x, kind="match"):
    return QueryContext(kind, np.array(x, dtype=float))


class TestLogProb:
    def test_uniform(self):
        p = PolicyParams.zeros({"match": (4, 3)})
        for i in range(4):
            assert log_prob(p, ctx([0.3, -1, 2]), i) == pytest.approx(math.log(0.25), abs=1e-15)

    def test_direct_softmax(self):
        p = single_head([1.0, 0.0, 0.0])
        expected = math.log(math.e / (math.e + 2))
        assert log_prob(p, ctx([0.0]), 0) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(-0.551444, abs=1e-6)

    def test_normalized(self, rng):
        p = random_policy(rng, {"match": (7, 4)}, scale=3)
        c = ctx(rng.normal(size=4))
        assert np.exp(log_probs(p, c)).sum() == pytest.approx(1.0, abs=1e-12)

    def test_stable_for_huge_logits(self):
        p = single_head([1000.0, 0.0, -1000.0])
        lp = log_probs(p, ctx([0.0]))
        assert np.all(np.isfinite(lp))
        assert lp[0] == 0.0

    @pytest.mark.parametrize("idx", [-1, 3])
    def test_index_out_of_range(self, idx):
        with pytest.raises(ValueError):
            log_prob(single_head([0, 0, 0]), ctx([0.0]), idx)

    def test_feature_dimension_checked(self):
        with pytest.raises(ValueError):
            log_prob(PolicyParams.zeros({"match": (3, 2)}), ctx([1.0]), 0)

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            log_prob(PolicyParams.zeros({"match": (3, 1)}), ctx([1.0], kind="box"), 0)

    @settings(max_examples=50)
    @given(st.integers(1, 9), st.integers(1, 5), st.integers(0, 2**31))
    def test_probabilities_positive_and_sum_to_one(self, K, d, seed):
        r = np.random.default_rng(seed)
        p = random_policy(r, {"match": (K, d)}, scale=5)
        pr = probabilities(p, ctx(r.normal(size=d)))
        assert np.all(pr > 0)
        assert pr.sum() == pytest.approx(1.0, abs=1e-12)


class TestSampleGroup:
    def test_reproducible(self):
        p = PolicyParams.zeros({"match": (4, 1)})
        a = sample_group(p, ctx([1.0]), 4, np.random.default_rng(7))
        b = sample_group(p, ctx([1.0]), 4, np.random.default_rng(7))
        assert a.tolist() == b.tolist()
        assert a.shape == (4,)

    def test_dominant_logit(self):
        p = single_head([0.0, 20.0, 0.0, 0.0])
        draws = sample_group(p, ctx([0.0]), 10**4, np.random.default_rng(1))
        assert np.all(draws == 1)

    def test_frequencies_match_probabilities(self):
        p = single_head([0.5, -1.0, 1.5, 0.0, 0.2])
        n = 10**5
        draws = sample_group(p, ctx([0.0]), n, np.random.default_rng(3))
        pr = probabilities(p, ctx([0.0]))
        freq = np.bincount(draws, minlength=5) / n
        se = np.sqrt(pr * (1 - pr) / n)
        assert np.all(np.abs(freq - pr) < 3 * se)
        chi2 = np.sum((freq * n - pr * n) ** 2 / (pr * n))
        assert chi2 < 18.47  # chi-square 0.999 quantile, 4 dof

    def test_rejects_empty_group(self):
        with pytest.raises(ValueError):
            sample_group(single_head([0, 0]), ctx([0.0]), 0, np.random.default_rng(0))


class TestGradLogProb:
    def test_uniform_two_candidates(self):
        g = grad_log_prob(PolicyParams.zeros({"match": (2, 1)}), ctx([1.0]), 0)
        np.testing.assert_allclose(g.heads["match"].b, [0.5, -0.5])
        np.testing.assert_allclose(g.heads["match"].W, [[0.5], [-0.5]])

    def test_matches_finite_differences(self, rng):
        for _ in range(25):
            K, d = rng.integers(2, 8), rng.integers(1, 5)
            p = random_policy(rng, {"match": (K, d), "box": (3, 2)})
            c = ctx(rng.normal(size=d))
            idx = int(rng.integers(K))
            fd = central_difference(lambda v: log_prob(p.with_vector(v), c, idx), p.to_vector())
            assert relative_error(grad_log_prob(p, c, idx).to_vector(), fd) < 1e-5

    def test_components_sum_to_zero(self, rng):
        p = random_policy(rng, {"match": (5, 3)})
        g = grad_log_prob(p, ctx(rng.normal(size=3)), 2).heads["match"]
        np.testing.assert_allclose(g.b.sum(), 0.0, atol=1e-14)
        np.testing.assert_allclose(g.W.sum(axis=0), 0.0, atol=1e-14)

    def test_other_heads_untouched(self, rng):
        p = random_policy(rng, {"match": (3, 2), "box": (4, 2)})
        g = grad_log_prob(p, ctx([0.1, 0.2]), 0)
        assert not g.heads["box"].W.any() and not g.heads["box"].b.any()


class TestKL:
    def test_identical_is_zero(self, rng):
        p = random_policy(rng, {"match": (5, 2)})
        assert kl_divergence(p, snapshot(p, "reference"), ctx([0.3, 0.4])) == 0.0

    def test_known_value(self):
        p = single_head([math.log(3.0), 0.0])  # (0.75, 0.25)
        q = single_head([0.0, 0.0])
        expected = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
        assert kl_divergence(p, q, ctx([0.0])) == pytest.approx(expected, abs=1e-14)
        assert expected == pytest.approx(0.130812, abs=1e-6)

    def test_non_negative(self, rng):
        for _ in range(1000):
            K, d = rng.integers(2, 6), 2
            p = random_policy(rng, {"match": (K, d)}, 2)
            q = random_policy(rng, {"match": (K, d)}, 2)
            assert kl_divergence(p, q, ctx(rng.normal(size=d))) >= 0.0

    def test_sampled_estimator_agrees(self, rng):
        p = random_policy(rng, {"match": (6, 2)})
        q = random_policy(rng, {"match": (6, 2)})
        c = ctx([0.5, -0.2])
        draws = sample_group(p, c, 10**5, rng)
        ratio = log_probs(p, c)[draws] - log_probs(q, c)[draws]
        se = ratio.std() / math.sqrt(ratio.size)
        assert abs(ratio.mean() - kl_divergence(p, q, c)) < 4 * se

    def test_logit_gradient(self, rng):
        p = random_policy(rng, {"match": (5, 1)})
        q = random_policy(rng, {"match": (5, 1)})
        c = ctx([0.0])

        def f(z):
            return kl_divergence(PolicyParams({"match": Head(np.zeros((5, 1)), z)}), q, c)

        z = p.heads["match"].b
        fd = central_difference(f, z)
        assert relative_error(kl_logit_grad(p, q, c), fd) < 1e-6

    def test_mismatched_candidates(self):
        with pytest.raises(ValueError):
            kl_divergence(PolicyParams.zeros({"match": (3, 1)}), PolicyParams.zeros({"match": (4, 1)}), ctx([0.0]))


class TestSnapshotAndCheckpoint:
    def test_snapshot_is_independent(self, rng):
        p = random_policy(rng, {"match": (3, 2)})
        s = snapshot(p, "old-snapshot")
        before = s.to_vector().copy()
        p.heads["match"].W += 1.0
        np.testing.assert_array_equal(s.to_vector(), before)
        assert s.version == "old-snapshot"

    def test_unknown_version(self):
        with pytest.raises(ValueError):
            snapshot(PolicyParams.zeros({"match": (2, 1)}), "latest")

    def test_vector_round_trip(self, rng):
        p = random_policy(rng, {"match": (3, 2), "temporal": (5, 3)})
        v = p.to_vector()
        np.testing.assert_array_equal(p.with_vector(v).to_vector(), v)
        with pytest.raises(ValueError):
            p.with_vector(np.zeros(v.size + 1))

    def test_checkpoint_round_trip(self, rng, tmp_path):
        p = snapshot(random_policy(rng, {"match": (3, 2), "temporal": (90, 3)}), "reference")
        path = tmp_path / "policy.json"
        save_policy(p, path)
        q = load_policy(path)
        assert q.version == "reference"
        assert q.shapes() == p.shapes()
        np.testing.assert_array_equal(q.to_vector(), p.to_vector())

    def test_head_shape_validation(self):
        with pytest.raises(ValueError):
            Head(np.zeros((3, 2)), np.zeros(2))
