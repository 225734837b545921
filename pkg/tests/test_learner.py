import math

import numpy as np
import pytest

from spdshift import alignment, core, learner
from spdshift.exceptions import DegenerateDataError
from spdshift.frechet import frechet_mean
from spdshift.generate import (
    GenerativeConfig,
    apply_label_shift,
    generate_dataset,
    substream,
)
from spdshift.learner import (
    IMConfig,
    SoftmaxClassifier,
    TrainConfig,
    balanced_accuracy,
    fit_spdim_bias,
    fit_spdim_geodesic,
    geodesic_im_loss,
    im_bias_loss_grad,
    im_loss,
    predict,
    predict_proba,
    softmax_loss_grad,
    train_softmax,
)
from tests.conftest import random_spd


def _toy_features(rng, n=60):
    x = np.concatenate(
        [rng.normal(-2.0, 0.4, (n, 1)), rng.normal(2.0, 0.4, (n, 1))]
    )
    y = np.concatenate([np.ones(n, int), np.full(n, 2)])
    return x, y


class TestTrainSoftmax:
    def test_separable_data_perfect_accuracy(self, rng):
        x, y = _toy_features(rng)
        clf = train_softmax(x, y)
        assert balanced_accuracy(y, predict(clf, x)) == 1.0

    def test_intercepts_learn_priors_on_uninformative_features(self):
        x = np.zeros((100, 2))
        y = np.array([1] * 75 + [2] * 25)
        clf = train_softmax(x, y)
        probs = predict_proba(clf, x[:1])
        assert np.allclose(probs[0], [0.75, 0.25], atol=0.02)

    def test_single_class_rejected(self):
        with pytest.raises(DegenerateDataError):
            train_softmax(np.zeros((5, 2)), np.ones(5, int))

    def test_classes_sorted_and_preserved(self, rng):
        x, y = _toy_features(rng)
        clf = train_softmax(x, np.where(y == 1, 7, 3))
        assert np.array_equal(clf.classes, [3, 7])

    def test_deterministic(self, rng):
        x, y = _toy_features(rng)
        c1 = train_softmax(x, y)
        c2 = train_softmax(x, y)
        assert np.array_equal(c1.weights, c2.weights)
        assert np.array_equal(c1.intercepts, c2.intercepts)

    def test_loss_gradient_finite_difference(self, rng):
        x = rng.standard_normal((20, 3))
        y_idx = rng.integers(0, 2, 20)
        w = rng.standard_normal((2, 3)) * 0.3
        b = rng.standard_normal(2) * 0.3
        _, gw, gb = softmax_loss_grad(w, b, x, y_idx, 1e-3)
        h = 1e-7
        for idx in [(0, 0), (1, 2)]:
            wp, wm = w.copy(), w.copy()
            wp[idx] += h
            wm[idx] -= h
            fd = (
                softmax_loss_grad(wp, b, x, y_idx, 1e-3)[0]
                - softmax_loss_grad(wm, b, x, y_idx, 1e-3)[0]
            ) / (2 * h)
            assert abs(fd - gw[idx]) < 1e-6
        bp, bm = b.copy(), b.copy()
        bp[0] += h
        bm[0] -= h
        fd = (
            softmax_loss_grad(w, bp, x, y_idx, 1e-3)[0]
            - softmax_loss_grad(w, bm, x, y_idx, 1e-3)[0]
        ) / (2 * h)
        assert abs(fd - gb[0]) < 1e-6

    def test_json_round_trip(self, rng):
        x, y = _toy_features(rng)
        clf = train_softmax(x, y)
        back = SoftmaxClassifier.from_json(clf.to_json())
        assert np.array_equal(clf.weights, back.weights)
        assert np.array_equal(clf.intercepts, back.intercepts)
        assert np.array_equal(clf.classes, back.classes)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)


class TestPredictProba:
    def _clf(self):
        return SoftmaxClassifier(
            weights=np.array([[1.0], [0.0]]),
            intercepts=np.zeros(2),
            classes=np.array([1, 2]),
        )

    def test_rows_sum_to_one(self, rng):
        clf = self._clf()
        probs = predict_proba(clf, rng.standard_normal((30, 1)))
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(probs > 0)

    def test_hand_computed_binary(self):
        # logits (2, 0) at temperature 2 give sigmoid(1) = e/(1+e)
        probs = predict_proba(self._clf(), np.array([[2.0]]), temperature=2.0)
        expected = math.e / (1.0 + math.e)
        assert abs(probs[0, 0] - expected) < 1e-9
        assert abs(probs[0, 0] - 0.73105857863) < 1e-9

    def test_temperature_softens(self):
        clf = self._clf()
        x = np.array([[3.0]])
        entropies = []
        for t in (0.5, 1.0, 2.0, 8.0):
            p = predict_proba(clf, x, temperature=t)[0]
            entropies.append(-np.sum(p * np.log(p)))
        assert np.all(np.diff(entropies) > 0)

    def test_large_temperature_limit_uniform(self):
        probs = predict_proba(self._clf(), np.array([[5.0]]), temperature=1e6)
        assert np.allclose(probs, 0.5, atol=1e-5)

    def test_invalid_temperature(self):
        with pytest.raises(ValueError):
            predict_proba(self._clf(), np.zeros((1, 1)), temperature=0.0)


class TestIMLoss:
    def test_uniform_rows_zero(self):
        for k in (2, 3, 5):
            probs = np.full((10, k), 1.0 / k)
            assert abs(im_loss(probs)) < 1e-12

    def test_balanced_one_hot_is_minimum(self):
        probs = np.tile(np.eye(4), (5, 1))
        assert abs(im_loss(probs) - (-math.log(4))) < 1e-9

    def test_collapsed_one_hot_zero(self):
        probs = np.zeros((8, 3))
        probs[:, 1] = 1.0
        assert abs(im_loss(probs)) < 1e-9

    def test_bounds(self, rng):
        for _ in range(50):
            raw = rng.random((12, 3)) + 1e-3
            probs = raw / raw.sum(axis=1, keepdims=True)
            val = im_loss(probs)
            assert -math.log(3) - 1e-9 <= val <= math.log(3) + 1e-9


class TestDividedDifference:
    def test_distinct_values(self):
        vals = np.array([4.0, 1.0])
        k = learner._divided_difference(vals, np.log, lambda v: 1.0 / v)
        assert abs(k[0, 1] - (math.log(4.0) - 0.0) / 3.0) < 1e-14
        assert abs(k[0, 0] - 0.25) < 1e-14
        assert abs(k[1, 1] - 1.0) < 1e-14

    def test_confluent_limit(self):
        vals = np.array([2.0, 2.0 + 1e-14])
        k = learner._divided_difference(vals, np.log, lambda v: 1.0 / v)
        assert abs(k[0, 1] - 0.5) < 1e-10


class _Pipeline:
    """Small end-to-end fixture: aligned sources, pooled classifier,
    label-shifted target."""

    def __init__(self, seed=0, label_ratio=0.2, samples=200):
        cfg = GenerativeConfig(
            samples_per_domain=samples, seed=seed, n_source_domains=3
        )
        datasets, _, _ = generate_dataset(cfg)
        sources, target = datasets[:-1], datasets[-1]
        params = alignment.fit_rct(sources)
        feats = np.concatenate(
            [params.transform(ds.covariances, ds.domain_id) for ds in sources]
        )
        labels = np.concatenate([ds.labels for ds in sources])
        self.clf = train_softmax(feats, labels)
        shifted = apply_label_shift(
            target, label_ratio, substream(cfg.seed, "shift", cfg.target_domain)
        )
        self.target = shifted
        self.mean = frechet_mean(shifted.covariances).mean
        w = core.spd_inv_sqrt(self.mean)
        self.whitened = w @ shifted.covariances @ w


@pytest.fixture(scope="module")
def pipeline():
    return _Pipeline()


class TestBiasGradient:
    def test_finite_difference_oracle(self, pipeline, rng):
        phi = random_spd(rng, 2, 0.3)
        loss, g, _ = im_bias_loss_grad(pipeline.whitened, phi, pipeline.clf, 2.0)
        h = 1e-6
        for idx in [(0, 0), (0, 1), (1, 1)]:
            # symmetric perturbation: e_ij + e_ji off-diagonal, e_ii on-diagonal
            pert = np.zeros((2, 2))
            pert[idx] = 1.0
            pert[idx[::-1]] = 1.0
            lp = im_bias_loss_grad(pipeline.whitened, phi + h * pert, pipeline.clf, 2.0)[0]
            lm = im_bias_loss_grad(pipeline.whitened, phi - h * pert, pipeline.clf, 2.0)[0]
            fd = (lp - lm) / (2 * h)
            analytic = float(np.sum(g * pert))
            assert abs(fd - analytic) < 1e-5 * max(1.0, abs(analytic))

    def test_loss_matches_transform_path(self, pipeline, rng):
        phi = random_spd(rng, 2, 0.3)
        loss, _, probs = im_bias_loss_grad(pipeline.whitened, phi, pipeline.clf, 2.0)
        feats = alignment.spdim_transform_batch(
            pipeline.target.covariances, pipeline.mean, phi
        )
        direct = im_loss(predict_proba(pipeline.clf, feats, 2.0))
        assert abs(loss - direct) < 1e-9


class TestFitBias:
    def test_zero_epochs_returns_identity(self, pipeline):
        phi = fit_spdim_bias(
            pipeline.target.covariances, pipeline.mean, pipeline.clf,
            IMConfig(epochs=0),
        )
        assert np.array_equal(phi, np.eye(2))

    def test_result_is_spd_and_no_worse_than_identity(self, pipeline):
        phi = fit_spdim_bias(
            pipeline.target.covariances, pipeline.mean, pipeline.clf, IMConfig()
        )
        assert core.is_spd(phi)
        loss_i = im_bias_loss_grad(
            pipeline.whitened, np.eye(2), pipeline.clf, 2.0
        )[0]
        loss_f = im_bias_loss_grad(pipeline.whitened, phi, pipeline.clf, 2.0)[0]
        assert loss_f <= loss_i + 1e-12

    def test_aligned_balanced_data_stays_near_identity(self):
        pipe = _Pipeline(seed=0, label_ratio=1.0, samples=400)
        phi = fit_spdim_bias(
            pipe.target.covariances, pipe.mean, pipe.clf,
            IMConfig(learning_rate=1e-2),
        )
        assert core.airm_distance(phi, np.eye(2)) < 1e-3

    def test_mode_check(self, pipeline):
        with pytest.raises(ValueError):
            fit_spdim_bias(
                pipeline.target.covariances, pipeline.mean, pipeline.clf,
                IMConfig(mode="geodesic_step"),
            )


class TestFitGeodesic:
    def test_matches_dense_grid_minimum(self, pipeline):
        dec = core.sym_eig(pipeline.mean)
        state = (dec.values, dec.vectors, pipeline.target.covariances)
        grid = np.arange(-1.0, 3.0 + 1e-9, 1e-3)
        losses = [
            geodesic_im_loss(state, s, pipeline.clf, 2.0) for s in grid
        ]
        grid_best = grid[int(np.argmin(losses))]
        fitted = fit_spdim_geodesic(
            pipeline.target.covariances, pipeline.mean, pipeline.clf,
            IMConfig(mode="geodesic_step", epochs=400),
        )
        assert abs(fitted - grid_best) < 2e-3

    def test_aligned_balanced_data_stays_near_one(self):
        pipe = _Pipeline(seed=0, label_ratio=1.0, samples=400)
        fitted = fit_spdim_geodesic(
            pipe.target.covariances, pipe.mean, pipe.clf,
            IMConfig(mode="geodesic_step", learning_rate=1e-2),
        )
        assert abs(fitted - 1.0) < 1e-2

    def test_mode_check(self, pipeline):
        with pytest.raises(ValueError):
            fit_spdim_geodesic(
                pipeline.target.covariances, pipeline.mean, pipeline.clf,
                IMConfig(mode="spd_bias"),
            )


class TestBalancedAccuracy:
    def test_perfect(self):
        assert balanced_accuracy([1, 2, 1], [1, 2, 1]) == 1.0

    def test_mean_of_recalls(self):
        # class 1 recall 1.0, class 2 recall 0.5
        assert balanced_accuracy([1, 1, 2, 2], [1, 1, 2, 1]) == 0.75

    def test_imbalance_insensitive(self):
        y_true = [1] * 90 + [2] * 10
        y_pred = [1] * 90 + [1] * 10
        assert balanced_accuracy(y_true, y_pred) == 0.5

    def test_errors(self):
        with pytest.raises(ValueError):
            balanced_accuracy([], [])
        with pytest.raises(ValueError):
            balanced_accuracy([1], [1, 2])


def test_im_config_validation():
    with pytest.raises(ValueError):
        IMConfig(temperature=0.0)
