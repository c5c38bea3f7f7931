import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from oracles import best_permutation_accuracy, nmi_oracle, recall_oracle
from zerosight.evaluation import (Clustering, EvalReport, KMeans, evaluate_embeddings, gzsl_report,
                                  harmonic_mean, kmeans, neighbor_ranking, nmi, nmi_score, topk_retrieval)
from zerosight.exceptions import ConfigurationError, ShapeError

partitions = st.integers(1, 40).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 5), min_size=n, max_size=n),
                        st.lists(st.integers(0, 5), min_size=n, max_size=n)))


class TestKMeans:
    def test_two_separated_pairs(self):
        x = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [5.0, 5.0]])
        c = kmeans(x, 2, seed=0)
        assert c.inertia == 0.0
        assert c.predicted[0] == c.predicted[1] != c.predicted[2] == c.predicted[3]

    def test_k_equals_n(self):
        x = np.random.default_rng(0).standard_normal((6, 3))
        c = kmeans(x, 6, seed=0)
        assert c.inertia == 0.0
        assert sorted(c.predicted) == list(range(6))

    def test_three_gaussians_match_truth_up_to_relabeling(self):
        rng = np.random.default_rng(1)
        centers = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
        truth = np.repeat(np.arange(3), 20)
        x = centers[truth] + rng.normal(0, 0.05, (60, 2))
        c = kmeans(x, 3, seed=7)
        assert best_permutation_accuracy(c.predicted, truth, 3) == 1.0

    def test_objective_non_increasing(self):
        x = np.random.default_rng(2).standard_normal((80, 4))
        for seed in range(5):
            hist = kmeans(x, 6, seed=seed).history
            assert all(b <= a * (1 + 1e-12) for a, b in zip(hist, hist[1:]))

    def test_deterministic(self):
        x = np.random.default_rng(3).standard_normal((50, 3))
        assert np.array_equal(kmeans(x, 4, seed=9).predicted, kmeans(x, 4, seed=9).predicted)

    def test_k_larger_than_n(self):
        with pytest.raises(ConfigurationError):
            kmeans(np.zeros((3, 2)), 4)

    def test_coincident_points(self):
        c = kmeans(np.ones((5, 2)), 3, seed=0)
        assert c.inertia == 0.0

    def test_estimator_api(self):
        x = np.random.default_rng(4).standard_normal((30, 2))
        est = KMeans(n_clusters=3, random_state=1)
        assert clone(est).get_params() == est.get_params()
        labels = est.fit_predict(x)
        assert np.array_equal(labels, kmeans(x, 3, seed=1).predicted)
        assert np.array_equal(est.predict(x), labels)


class TestNmi:
    def test_identical(self):
        assert nmi_score([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0

    def test_independent(self):
        assert nmi_score([0, 1, 0, 1], [0, 0, 1, 1]) == 0.0

    def test_single_cluster_both_sides(self):
        assert nmi_score([0, 0, 0], [4, 4, 4]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            nmi_score([0, 1], [0])
        with pytest.raises(ShapeError):
            Clustering([0, 1], [0, 1, 1], 2)

    def test_clustering_wrapper(self):
        assert nmi(Clustering([1, 1, 0, 0], [0, 0, 1, 1], 2)) == 1.0

    @settings(max_examples=100, deadline=None)
    @given(partitions)
    def test_matches_oracle(self, pair):
        a, b = pair
        assert abs(nmi_score(a, b) - nmi_oracle(a, b)) <= 1e-9

    @settings(max_examples=60, deadline=None)
    @given(partitions, st.permutations(range(6)))
    def test_label_permutation_invariant(self, pair, perm):
        a, b = pair
        relabeled = [perm[v] for v in a]
        assert nmi_score(relabeled, b) == pytest.approx(nmi_score(a, b), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(partitions)
    def test_symmetric_and_bounded(self, pair):
        a, b = pair
        v = nmi_score(a, b)
        assert abs(v - nmi_score(b, a)) <= 1e-12
        assert 0.0 <= v <= 1.0


class TestRetrieval:
    def test_duplicated_pairs_perfect(self):
        base = np.random.default_rng(5).standard_normal((4, 3))
        emb = np.repeat(base, 2, axis=0)
        assert topk_retrieval(emb, np.repeat(np.arange(4), 2))[1] == 100.0

    def test_ties_broken_by_index(self):
        emb = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, -1.0]])
        assert list(neighbor_ranking(emb)[0]) == [1, 2, 3]

    def test_singleton_queries_excluded(self):
        emb = np.array([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0]])
        recall, excluded = topk_retrieval(emb, [0, 0, 1], ks=[1], return_excluded=True)
        assert excluded == 1 and recall[1] == 100.0

    def test_random_sets_match_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            emb, labels = rng.standard_normal((20, 4)), rng.integers(0, 5, 20)
            assert topk_retrieval(emb, labels) == recall_oracle(emb, labels, (1, 2, 4, 8))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 30), c=st.integers(1, 6))
    def test_monotone_in_k_and_bounded(self, seed, n, c):
        rng = np.random.default_rng(seed)
        r = topk_retrieval(rng.standard_normal((n, 3)), rng.integers(0, c, n))
        vals = [r[k] for k in (1, 2, 4, 8)]
        assert all(0.0 <= v <= 100.0 for v in vals)
        assert vals == sorted(vals)

    def test_scale_invariant(self):
        rng = np.random.default_rng(7)
        emb, labels = rng.standard_normal((15, 3)), rng.integers(0, 3, 15)
        scaled = emb * rng.uniform(0.1, 10, (15, 1))
        assert topk_retrieval(emb, labels) == topk_retrieval(scaled, labels)


class TestGzsl:
    def test_published_gzsl_row(self):
        assert harmonic_mean(54.44, 84.26) == pytest.approx(66.14, abs=0.01)

    def test_equal_inputs(self):
        assert harmonic_mean(40.0, 40.0) == pytest.approx(40.0)

    def test_zero_unseen(self):
        assert harmonic_mean(0.0, 90.0) == 0.0
        assert harmonic_mean(0.0, 0.0) == 0.0

    def test_report_perfect_separation(self):
        emb = np.eye(4)[np.repeat(np.arange(4), 3)]
        labels = np.repeat(np.arange(4), 3)
        seen = labels < 2
        assert gzsl_report(emb, labels, seen) == {"u": 100.0, "s": 100.0, "H": 100.0}

    def test_empty_partition(self):
        with pytest.raises(ValueError):
            gzsl_report(np.eye(3), [0, 0, 1], [True, True, True])


class TestReport:
    def test_one_hot_embeddings(self):
        labels = np.repeat(np.arange(5), 4)
        report = evaluate_embeddings(np.eye(5)[labels], labels)
        assert report.nmi == 1.0 and report.recall_at[1] == 100.0

    def test_csv_round_trip(self, tmp_path):
        labels = np.repeat(np.arange(3), 4)
        emb = np.random.default_rng(8).standard_normal((12, 5))
        report = evaluate_embeddings(emb, labels, labels == 0, metadata={"split": "gzsl-s0", "seed": 0,
                                                                          "config_hash": "abc"})
        report.write_csv(tmp_path / "report.csv")
        text = (tmp_path / "report.csv").read_text()
        assert text.splitlines()[0] == "metric,value,split,seed,config_hash"
        back = EvalReport.read_csv(tmp_path / "report.csv")
        assert back.nmi == report.nmi and back.recall_at == report.recall_at
        assert back.gzsl == report.gzsl
        u, s = back.gzsl["u"], back.gzsl["s"]
        assert abs(back.gzsl["H"] - harmonic_mean(u, s)) <= 1e-9
