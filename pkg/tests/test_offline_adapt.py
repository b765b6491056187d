import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from household.offline_adapt import (
    BACKGROUND,
    KMeansConfig,
    LpConfig,
    VbConfig,
    kmeans_semisup,
    label_propagation,
    propagate,
    propagation_matrix,
    vb_cluster,
    write_assignment,
)
from household.online_adapt import enroll as online_enroll
from household.plda import SphericalPlda
from household.scoring import CSEA, SPHERICAL_PLDA, BackendConfig

from oracles import kmeans_exhaustive


def neg_sq(models, X):
    C = np.stack([m.centroid for m in models])
    return -((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


PLDA = SphericalPlda(1.0, 0.1)
PLDA_RAW = BackendConfig(SPHERICAL_PLDA, PLDA, normalize_inputs=False)


def two_speakers(rng, d=6, n_enroll=3, n_unl=20, spread=0.3):
    y = rng.standard_normal((2, d)) * 3
    enroll = {f"s{k}": y[k] + spread * rng.standard_normal((n_enroll, d)) for k in range(2)}
    truth = rng.integers(0, 2, n_unl)
    U = y[truth] + spread * rng.standard_normal((n_unl, d))
    return enroll, U, truth


class TestKMeans:
    def test_one_dimensional_example(self):
        enroll = {"a": np.array([[0.0]]), "b": np.array([[10.0]])}
        U = np.array([[0.1], [9.9], [5.0]])
        res = kmeans_semisup(enroll, U, KMeansConfig(tau=-4.0), neg_sq)
        assert list(res.unlabeled_labels()) == [0, 1, BACKGROUND]
        np.testing.assert_allclose([m.centroid[0] for m in res.models], [0.05, 9.95])

    def test_no_unlabeled_is_fixed_point(self):
        enroll = {"a": np.array([[0.0], [2.0]]), "b": np.array([[5.0]])}
        res = kmeans_semisup(enroll, np.zeros((0, 1)), KMeansConfig(tau=0.0), neg_sq)
        assert res.iterations == 1
        assert [m.centroid[0] for m in res.models] == [1.0, 5.0]

    def test_threshold_above_every_similarity(self):
        rng = np.random.default_rng(0)
        enroll, U, _ = two_speakers(rng)
        res = kmeans_semisup(enroll, U, KMeansConfig(tau=1.0 + 1e-9), BackendConfig(CSEA))
        assert res.n_background() == len(U)
        assert res.iterations == 1

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_exhaustive_search_on_separated_instances(self, seed):
        rng = np.random.default_rng(seed)
        labeled = [[0.0 + rng.uniform(-0.3, 0.3)], [10.0 + rng.uniform(-0.3, 0.3)]]
        # points within 1 of a cluster, plus at most one ambiguous midpoint
        unl = [float(c + rng.uniform(-1, 1)) for c in rng.choice([0.0, 10.0], size=4)]
        if rng.random() < 0.5:
            unl.insert(int(rng.integers(0, 5)), float(5.0 + rng.uniform(-0.5, 0.5)))
        tau = -4.0
        want, cents = kmeans_exhaustive(labeled, unl, tau)
        res = kmeans_semisup(
            {"a": np.array([labeled[0]]), "b": np.array([labeled[1]])}, np.array(unl)[:, None],
            KMeansConfig(tau), neg_sq,
        )
        assert list(res.unlabeled_labels()) == want
        np.testing.assert_allclose([m.centroid[0] for m in res.models], cents, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-30, 0))
    def test_objective_never_increases(self, seed, tau):
        rng = np.random.default_rng(seed)
        enroll, U, _ = two_speakers(rng, d=3, n_unl=30, spread=1.5)
        res = kmeans_semisup(enroll, U, KMeansConfig(tau), neg_sq)
        assert all(b <= a + 1e-9 for a, b in zip(res.objective, res.objective[1:]))

    def test_labeled_points_never_move(self):
        rng = np.random.default_rng(1)
        enroll, U, _ = two_speakers(rng)
        # enrollment rows placed deliberately next to the other speaker
        enroll = {"s0": enroll["s1"][:1], "s1": enroll["s0"]}
        res = kmeans_semisup(enroll, U, KMeansConfig(-math.inf), PLDA_RAW)
        assert list(res.labels[: res.n_labeled]) == [0] + [1] * 3

    def test_recovers_clean_speakers(self):
        rng = np.random.default_rng(2)
        enroll, U, truth = two_speakers(rng)
        res = kmeans_semisup(enroll, U, KMeansConfig(0.0), PLDA_RAW)
        assert list(res.unlabeled_labels()) == list(truth)

    def test_background_is_order_free(self):
        rng = np.random.default_rng(3)
        enroll, U, _ = two_speakers(rng, n_unl=12)
        U = np.vstack([U, rng.standard_normal((5, 6)) * 8])
        perm = rng.permutation(len(U))
        a = kmeans_semisup(enroll, U, KMeansConfig(2.0), PLDA_RAW)
        b = kmeans_semisup(enroll, U[perm], KMeansConfig(2.0), PLDA_RAW)
        assert list(b.unlabeled_labels()) == list(a.unlabeled_labels()[perm])


class TestVb:
    def test_elbo_non_decreasing(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            enroll, U, _ = two_speakers(rng, d=4, n_unl=25, spread=1.0)
            res = vb_cluster(enroll, U, PLDA, VbConfig(tau=0.0))
            assert all(b >= a - 1e-8 for a, b in zip(res.objective, res.objective[1:]))

    @pytest.mark.parametrize("f_a,f_b", [(0.5, 1.0), (1.0, 3.0), (2.0, 0.5)])
    def test_elbo_non_decreasing_with_scaling(self, f_a, f_b):
        rng = np.random.default_rng(10)
        enroll, U, _ = two_speakers(rng, d=4, n_unl=25, spread=1.0)
        res = vb_cluster(enroll, U, PLDA, VbConfig(tau=1.0, f_a=f_a, f_b=f_b))
        assert all(b >= a - 1e-8 for a, b in zip(res.objective, res.objective[1:]))

    def test_infinite_threshold_sends_everything_to_background(self):
        rng = np.random.default_rng(11)
        enroll, U, _ = two_speakers(rng)
        res = vb_cluster(enroll, U, PLDA, VbConfig(tau=math.inf))
        assert res.n_background() == len(U)

    def test_point_at_posterior_mean_is_claimed(self):
        # one-step Bayes oracle: responsibilities of a single unlabeled point
        d, n_e = 6, 4
        rng = np.random.default_rng(12)
        b, w = 1.0, 0.1
        plda = SphericalPlda(b, w)
        E = 2.0 * rng.standard_normal((1, d)) + math.sqrt(w) * rng.standard_normal((n_e, d))
        post_mean = b / (b + w / n_e) * E.mean(axis=0)
        res = vb_cluster({"a": E, "b": -E}, post_mean[None, :], plda, VbConfig(tau=0.0, max_iters=1))
        g = res.responsibilities[-1]
        var = w / n_e * b / (b + w / n_e)
        x = post_mean
        def log_member(c):
            return -0.5 * (d * math.log(2 * math.pi * w) + ((x - c) ** 2).sum() / w + d * var / w)
        log_bg = -0.5 * (d * math.log(2 * math.pi * (b + w)) + (x**2).sum() / (b + w))
        logits = np.array([log_member(post_mean), log_member(-post_mean), log_bg])
        logits += np.log([0.5 * 0.5, 0.5 * 0.5, 0.5])
        want = np.exp(logits - logits.max())
        np.testing.assert_allclose(g, want / want.sum(), atol=1e-10)
        assert g[0] > 0.99

    def test_responsibilities_sum_to_one(self):
        rng = np.random.default_rng(13)
        enroll, U, _ = two_speakers(rng, d=4, spread=1.0)
        res = vb_cluster(enroll, U, PLDA, VbConfig(tau=-1.0))
        np.testing.assert_allclose(res.responsibilities.sum(axis=1), 1.0, atol=1e-12)

    def test_recovers_clean_speakers(self):
        rng = np.random.default_rng(14)
        enroll, U, truth = two_speakers(rng)
        res = vb_cluster(enroll, U, PLDA, VbConfig(tau=0.0))
        assert list(res.unlabeled_labels()) == list(truth)


class TestLabelPropagation:
    def test_iteration_matches_closed_form(self):
        rng = np.random.default_rng(20)
        X = rng.standard_normal((9, 3))
        S, _ = propagation_matrix(X, 1.3)
        Y = np.zeros((9, 2))
        Y[0, 0] = Y[1, 1] = 1
        beta = 0.8
        F, _ = propagate(S, Y, beta, 10_000, 1e-14)
        closed = (1 - beta) * np.linalg.solve(np.eye(9) - beta * S, Y)
        np.testing.assert_allclose(F, closed, atol=1e-10)

    def test_affinity_is_symmetric_with_zero_diagonal(self):
        X = np.random.default_rng(21).standard_normal((6, 2))
        S, width = propagation_matrix(X, "median-heuristic")
        np.testing.assert_allclose(S, S.T)
        assert np.all(np.diag(S) == 0) and width > 0

    def _setup(self, seed, tau):
        rng = np.random.default_rng(seed)
        enroll, U, truth = two_speakers(rng)
        state = online_enroll(enroll, PLDA_RAW)
        return enroll, U, truth, list(state.models)

    def test_high_threshold_drops_every_point(self):
        enroll, U, _, models = self._setup(22, 0)
        res = label_propagation(enroll, U, models, PLDA_RAW, LpConfig(tau=1e9))
        assert res.n_background() == len(U)

    def test_recovers_clean_speakers(self):
        enroll, U, truth, models = self._setup(23, 0)
        res = label_propagation(enroll, U, models, PLDA_RAW, LpConfig(tau=0.0, kernel_width=1.0))
        assert list(res.unlabeled_labels()) == list(truth)

    def test_median_heuristic_width(self):
        X = np.array([[0.0], [1.0], [3.0]])
        assert propagation_matrix(X, "median-heuristic")[1] == 2.0
        assert propagation_matrix(np.zeros((3, 2)), "median-heuristic")[1] == 1.0

    def test_coincident_unlabeled_points_share_label(self):
        enroll = {"a": np.array([[0.0, 0.0]]), "b": np.array([[4.0, 0.0]])}
        U = np.array([[3.0, 0.0], [3.0, 0.0], [0.5, 0.0]])
        models = list(online_enroll(enroll, PLDA_RAW).models)
        res = label_propagation(enroll, U, models, PLDA_RAW, LpConfig(tau=-math.inf, kernel_width=0.5))
        assert list(res.unlabeled_labels()) == [1, 1, 0]

    def test_labeled_points_keep_labels(self):
        enroll, U, _, models = self._setup(24, 0)
        res = label_propagation(enroll, U, models, PLDA_RAW, LpConfig(tau=-math.inf, clamp=0.99))
        assert list(res.labels[: res.n_labeled]) == [0] * 3 + [1] * 3

    def test_model_order_checked(self):
        enroll, U, _, models = self._setup(25, 0)
        with pytest.raises(ValueError):
            label_propagation(enroll, U, models[::-1], PLDA_RAW, LpConfig(tau=0.0))


def test_raising_threshold_never_adds_assignments():
    rng = np.random.default_rng(30)
    enroll, U, _ = two_speakers(rng, n_unl=30, spread=1.5)
    U = np.vstack([U, rng.standard_normal((10, 6)) * 4])
    models = list(online_enroll(enroll, PLDA_RAW).models)
    taus = np.linspace(-20, 60, 9)
    runs = {
        "kmeans": lambda t: kmeans_semisup(enroll, U, KMeansConfig(t), PLDA_RAW),
        "vb": lambda t: vb_cluster(enroll, U, PLDA, VbConfig(t)),
        "lp": lambda t: label_propagation(enroll, U, models, PLDA_RAW, LpConfig(t)),
    }
    for name, run in runs.items():
        assigned = [len(U) - run(t).n_background() for t in taus]
        assert assigned == sorted(assigned, reverse=True), name


def test_assignment_file(tmp_path):
    enroll = {"a": np.array([[0.0]]), "b": np.array([[10.0]])}
    res = kmeans_semisup(enroll, np.array([[0.1], [5.0]]), KMeansConfig(-4.0), neg_sq)
    write_assignment(res, tmp_path / "a.tsv", "h0")
    rows = [r.split("\t") for r in (tmp_path / "a.tsv").read_text().splitlines()]
    assert [r[:3] for r in rows] == [["h0", "u0", "a"], ["h0", "u1", "background"]]
