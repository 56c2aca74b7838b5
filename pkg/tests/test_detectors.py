import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oodgen.detectors import (
    ArgmaxDetector,
    Decision,
    DocThresholds,
    MspDetector,
    composed_decide,
    doc_decide,
    fit_doc_thresholds,
    lof_fit,
    lof_score,
    msp_decide,
)


# ---------------------------------------------------------------------------
# independent O(n^2) LOF reference, straight from the definition


def brute_force_lof(points: np.ndarray, queries: np.ndarray, k: int,
                    floor: float = 1e-12) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    n = len(points)

    def dist(a, b):
        d = a - b
        return np.sqrt(np.sum(d * d))

    k_distance = np.empty(n)
    hoods = []
    for i in range(n):
        dists = np.array([dist(points[i], points[j]) if j != i else np.inf for j in range(n)])
        k_distance[i] = np.sort(dists)[k - 1]
        hoods.append(np.nonzero(dists <= k_distance[i])[0])

    lrd = np.empty(n)
    for i in range(n):
        reach = np.array([max(k_distance[j], dist(points[i], points[j])) for j in hoods[i]])
        lrd[i] = 1.0 / max(reach.mean(), floor)

    scores = []
    for q in np.asarray(queries, dtype=np.float64):
        dists = np.array([dist(q, points[j]) for j in range(n)])
        kd = np.sort(dists)[k - 1]
        hood = np.nonzero(dists <= kd)[0]
        reach = np.array([max(k_distance[j], dists[j]) for j in hood])
        lrd_q = 1.0 / max(reach.mean(), floor)
        scores.append(lrd[hood].mean() / lrd_q)
    return np.array(scores)


class TestMsp:
    def test_dominant_logit_accepts(self):
        d = msp_decide(np.array([10.0, -10.0]), ["a", "b"])
        assert not d.reject and d.label == "a" and d.score > 0.99

    def test_uniform_three_way_rejects(self):
        d = msp_decide(np.zeros(3), ["a", "b", "c"])
        assert d.reject and d.score == pytest.approx(1 / 3)

    def test_exact_boundary_accepts(self):
        d = msp_decide(np.array([0.0, 0.0]), ["a", "b"])
        assert not d.reject and d.score == pytest.approx(0.5)

    def test_needs_two_logits(self):
        with pytest.raises(ValueError):
            msp_decide(np.array([1.0]), ["a"])

    @given(arrays(np.float64, (4,), elements=st.floats(-30, 30)))
    @settings(max_examples=60, deadline=None)
    def test_accepted_label_is_raw_argmax(self, logits):
        d = msp_decide(logits, ["c0", "c1", "c2", "c3"])
        if not d.reject:
            assert d.label == f"c{int(np.argmax(logits))}"


class TestDocFit:
    def test_all_perfect_scores(self):
        t = fit_doc_thresholds([np.array([1.0, 1.0, 1.0])])
        assert t.thresholds[0] == pytest.approx(1.0 - 1e-6)

    def test_hand_computed_sigma(self):
        # mirrored set [0.6 0.8 1.0 1.4 1.2 1.0]: population sigma around the
        # mean 1.0 is sqrt(0.4/6); 1 - 3*sigma < 0.5 so the threshold clamps.
        sigma = math.sqrt(0.4 / 6)
        t = fit_doc_thresholds([np.array([0.6, 0.8, 1.0])])
        assert t.thresholds[0] == pytest.approx(max(0.5, 1 - 3 * sigma))
        assert t.thresholds[0] == 0.5

    def test_unclamped_branch(self):
        # deviations 0.05/0.02/0.01 -> sigma = sqrt(0.001)
        t = fit_doc_thresholds([np.array([0.95, 0.98, 0.99])])
        assert t.thresholds[0] == pytest.approx(1 - 3 * math.sqrt(0.001), abs=1e-12)

    def test_noisy_scores_clamp_to_half(self):
        t = fit_doc_thresholds([np.array([0.1, 0.9, 0.2, 0.8, 0.5])])
        assert t.thresholds[0] == 0.5

    def test_tiny_class_falls_back(self, caplog):
        with caplog.at_level("WARNING"):
            t = fit_doc_thresholds([np.array([0.9, 0.9])])
        assert t.thresholds[0] == 0.5
        assert "falls back" in caplog.text

    @given(st.permutations(list(range(6))))
    @settings(max_examples=30, deadline=None)
    def test_order_invariance(self, perm):
        scores = np.array([0.91, 0.97, 0.84, 0.99, 0.88, 0.95])
        base = fit_doc_thresholds([scores]).thresholds[0]
        shuffled = fit_doc_thresholds([scores[perm]]).thresholds[0]
        assert shuffled == pytest.approx(base, abs=1e-15)


class TestDocDecide:
    def test_all_zero_rejects(self):
        t = DocThresholds(np.array([0.5, 0.5]), 3.0)
        assert doc_decide(np.zeros(2), t, ["a", "b"]).reject

    def test_single_passing_class(self):
        t = DocThresholds(np.array([0.9, 0.9]), 3.0)
        d = doc_decide(np.array([0.95, 0.2]), t, ["a", "b"])
        assert not d.reject and d.label == "a"

    def test_argmax_among_passing(self):
        t = DocThresholds(np.array([0.5, 0.5, 0.99]), 3.0)
        d = doc_decide(np.array([0.8, 0.9, 0.98]), t, ["a", "b", "c"])
        assert d.label == "b"  # c fails its threshold despite the top score


class TestLof:
    def test_duplicate_of_cluster_member_is_inlier(self):
        rng = np.random.default_rng(5)
        points = rng.normal(size=(60, 3))
        model = lof_fit(points, k=8)
        score = lof_score(model, points[17])
        assert abs(score - 1.0) < 0.1

    def test_far_point_is_outlier(self):
        rng = np.random.default_rng(6)
        points = rng.uniform(-1, 1, size=(100, 2))
        model = lof_fit(points, k=10)
        score = lof_score(model, np.array([10.0, 10.0]))
        oracle = brute_force_lof(points, np.array([[10.0, 10.0]]), k=10)[0]
        assert score > 1.5
        assert score == oracle

    def test_simplex_scores_exactly_one(self):
        # all pairwise-equidistant points: every LOF is exactly 1
        points = np.eye(6)
        model = lof_fit(points, k=3)
        scores = np.array([lof_score(model, p) for p in points])
        np.testing.assert_array_equal(scores, np.ones(6))
        np.testing.assert_array_equal(brute_force_lof(points, points, k=3), np.ones(6))

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(7)
        for trial in range(50):
            n = int(rng.integers(20, 200))
            dim = int(rng.integers(2, 6))
            k = int(rng.integers(2, min(n - 1, 25)))
            points = rng.normal(size=(n, dim)) * rng.uniform(0.5, 3)
            queries = rng.normal(size=(5, dim)) * 2
            model = lof_fit(points, k)
            mine = np.array([lof_score(model, q) for q in queries])
            oracle = brute_force_lof(points, queries, k)
            np.testing.assert_array_equal(mine, oracle)

    def test_k_bounds(self):
        with pytest.raises(ValueError):
            lof_fit(np.zeros((5, 2)), k=5)
        with pytest.raises(ValueError):
            lof_fit(np.zeros((5, 2)), k=0)

    def test_duplicate_points_no_blowup(self):
        points = np.vstack([np.zeros((6, 2)), np.ones((6, 2))])
        model = lof_fit(points, k=3)
        score = lof_score(model, np.zeros(2))
        assert np.isfinite(score)


class TestComposition:
    def test_ood_argmax_short_circuits(self):
        detector = MspDetector(["a", "b"], 0.5)
        d = composed_decide(np.array([0.0, 0.1, 5.0]), None, detector, num_known=2)
        assert d.reject and d.detector == "ood+msp"

    def test_in_domain_confident_accepts(self):
        detector = MspDetector(["a", "b"], 0.5)
        d = composed_decide(np.array([5.0, 0.0, -1.0]), None, detector, num_known=2)
        assert not d.reject and d.label == "a"

    def test_in_domain_unconfident_rejects(self):
        detector = MspDetector(["a", "b", "c"], 0.5)
        d = composed_decide(np.array([0.1, 0.0, 0.05, -3.0]), None, detector, num_known=3)
        assert d.reject

    @given(arrays(np.float64, (4,), elements=st.floats(-20, 20)))
    @settings(max_examples=60, deadline=None)
    def test_never_returns_rejected_label(self, logits):
        detector = MspDetector(["a", "b", "c"], 0.5)
        d = composed_decide(logits, None, detector, num_known=3)
        inner = detector.decide(logits[:3], None)
        if d.label is not None:
            assert not inner.reject
            assert d.label == inner.label

    def test_argmax_detector_never_rejects(self):
        d = ArgmaxDetector(["a", "b"]).decide(np.array([-5.0, -9.0]), None)
        assert not d.reject and d.label == "a"
