import numpy as np
import pytest

from spdshift import core
from spdshift.exceptions import ConvergenceError
from spdshift.frechet import (
    FrechetConfig,
    frechet_mean,
    frechet_variance,
    karcher_gradient,
)
from tests.conftest import random_invertible, random_spd


class TestKarcherGradient:
    def test_zero_at_mean_of_singleton(self, rng):
        c = random_spd(rng, 3)
        assert np.allclose(karcher_gradient(c, [c]), 0.0, atol=1e-10)

    def test_symmetric_pair_cancels(self):
        # logs of diag(e, 1) and diag(1/e, 1) cancel at the identity
        cs = [np.diag([np.e, 1.0]), np.diag([1.0 / np.e, 1.0])]
        assert np.allclose(karcher_gradient(np.eye(2), cs), 0.0, atol=1e-12)

    def test_finite_difference_oracle(self, rng):
        # directional derivative of the variance along u at g should equal
        # 2 * <grad, u>_g; the factor 2 comes from differentiating the
        # squared distance, whose log-map gradient is -2 Log_g(C).
        for _ in range(5):
            d = int(rng.integers(2, 5))
            cs = np.stack([random_spd(rng, d) for _ in range(4)])
            g = random_spd(rng, d)
            u = 0.5 * (lambda a: a + a.T)(rng.standard_normal((d, d)))
            grad = karcher_gradient(g, cs)
            h = 1e-6
            fp = frechet_variance(core.exp_map(g, h * u), cs)
            fm = frechet_variance(core.exp_map(g, -h * u), cs)
            fd = (fp - fm) / (2.0 * h)
            analytic = 2.0 * core.airm_inner(g, grad, u)
            assert abs(fd - analytic) <= 1e-5 * max(1.0, abs(analytic))


class TestFrechetVariance:
    def test_zero_for_singleton(self, rng):
        c = random_spd(rng, 4)
        assert frechet_variance(c, [c]) < 1e-20

    def test_closed_form_pair(self):
        # distances from I to diag(e,1) and diag(1/e,1) are both 1
        cs = [np.diag([np.e, 1.0]), np.diag([1.0 / np.e, 1.0])]
        assert abs(frechet_variance(np.eye(2), cs) - 1.0) < 1e-12

    def test_matches_distances(self, rng):
        g = random_spd(rng, 3)
        cs = np.stack([random_spd(rng, 3) for _ in range(6)])
        expected = np.mean([core.airm_distance(g, c) ** 2 for c in cs])
        assert abs(frechet_variance(g, cs) - expected) < 1e-10


class TestFrechetMean:
    def test_singleton(self, rng):
        c = random_spd(rng, 3)
        res = frechet_mean([c])
        assert np.allclose(res.mean, c, atol=1e-9)
        assert res.final_grad_norm <= 1e-9

    def test_repeated_matrix(self, rng):
        c = random_spd(rng, 3)
        res = frechet_mean([c, c, c])
        assert np.allclose(res.mean, c, atol=1e-9)

    def test_commuting_logs_sum_to_zero(self, rng):
        # diagonal set whose matrix logs sum to zero has mean exactly I
        logs = rng.standard_normal((7, 3))
        logs -= logs.mean(axis=0)
        cs = np.stack([np.diag(np.exp(l)) for l in logs])
        res = frechet_mean(cs)
        assert np.linalg.norm(res.mean - np.eye(3)) < 1e-8

    def test_two_point_mean_is_geodesic_midpoint(self, rng):
        for _ in range(10):
            d = int(rng.integers(2, 6))
            c1, c2 = random_spd(rng, d), random_spd(rng, d)
            res = frechet_mean([c1, c2])
            mid = core.geodesic(c1, c2, 0.5)
            assert np.allclose(res.mean, mid, atol=1e-7)

    def test_congruence_equivariance(self, rng):
        cs = np.stack([random_spd(rng, 3) for _ in range(5)])
        a = random_invertible(rng, 3)
        base = frechet_mean(cs).mean
        congr = np.einsum("ij,njk,lk->nil", a, cs, a)
        congr = 0.5 * (congr + np.transpose(congr, (0, 2, 1)))
        moved = frechet_mean(congr).mean
        assert np.allclose(moved, a @ base @ a.T, atol=1e-6 * np.linalg.norm(moved))

    def test_stationarity(self, rng):
        cs = np.stack([random_spd(rng, 4) for _ in range(8)])
        res = frechet_mean(cs)
        grad = karcher_gradient(res.mean, cs)
        assert np.linalg.norm(grad) <= 1e-8

    def test_variance_is_local_minimum(self, rng):
        cs = np.stack([random_spd(rng, 3) for _ in range(6)])
        res = frechet_mean(cs)
        v0 = frechet_variance(res.mean, cs)
        for _ in range(20):
            u = 0.5 * (lambda a: a + a.T)(rng.standard_normal((3, 3)))
            u *= 0.01 / np.linalg.norm(u)
            assert frechet_variance(core.exp_map(res.mean, u), cs) >= v0 - 1e-12

    def test_convergence_error_carries_iterate(self, rng):
        cs = np.stack([random_spd(rng, 3) for _ in range(5)])
        with pytest.raises(ConvergenceError) as err:
            frechet_mean(cs, FrechetConfig(tol=1e-16, max_iter=1))
        assert err.value.last_iterate is not None
        assert err.value.last_iterate.shape == (3, 3)
        assert err.value.grad_norm > 0

    def test_order_independent(self, rng):
        cs = [random_spd(rng, 3) for _ in range(6)]
        m1 = frechet_mean(np.stack(cs)).mean
        m2 = frechet_mean(np.stack(cs[::-1])).mean
        assert np.allclose(m1, m2, atol=1e-11)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FrechetConfig(tol=0.0)
        with pytest.raises(ValueError):
            FrechetConfig(step=1.5)
        with pytest.raises(ValueError):
            FrechetConfig(max_iter=0)
