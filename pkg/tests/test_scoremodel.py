import numpy as np
import pytest

from samglab.schedule import DiffusionSchedule, linear_beta_schedule
from samglab.scoremodel import ConditionField, ModelError, PixelGMM
from samglab.scoremodel import Testbed as GMMTestbed
from samglab.scoremodel import (disk_mask,
                                eps_prediction, gmm_eps, gmm_velocity, half_mask, log_density,
                                marginal_params, mixture_hessian, mixture_log_density,
                                mixture_score, score_hessian, stripes_mask, velocity_prediction)


def random_gmm(rng, k=None, c=None):
    k = k or int(rng.integers(1, 5))
    c = c or int(rng.integers(1, 5))
    w = rng.uniform(0.2, 1.0, k)
    return rng.normal(0, 1.5, (k, c)), w / w.sum(), float(rng.uniform(0.2, 1.0))


def fd_grad(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestValidation:
    def test_weights_default_uniform(self):
        m = PixelGMM(np.zeros((4, 2)), 0.1)
        np.testing.assert_allclose(m.weights, 0.25)

    @pytest.mark.parametrize("kw", [dict(sigma0=0.0), dict(sigma0=-1.0),
                                    dict(weights=[0.5, 0.6]), dict(weights=[1.0, 0.0])])
    def test_rejects(self, kw):
        args = dict(means=np.zeros((2, 2)), sigma0=0.1) | kw
        with pytest.raises(ModelError):
            PixelGMM(**args)

    def test_condition_target_range(self):
        cond = ConditionField(np.ones((2, 2)), 3)
        with pytest.raises(ModelError):
            cond.check(PixelGMM(np.zeros((2, 2)), 0.1))

    def test_mask_generators(self):
        d = disk_mask(16, 16, 5.0)
        assert d[8, 8] == 1 and d[0, 0] == 0
        assert half_mask(4, 4)[:, :2].min() == 1 and half_mask(4, 4)[:, 2:].max() == 0
        s = stripes_mask(4, 8, period=4, stripe=2)
        assert s[0].tolist() == [1, 1, 0, 0, 1, 1, 0, 0]


class TestMarginal:
    def test_clean(self):
        m = PixelGMM(np.array([[1.0, 2.0]]), 0.1)
        means, var = marginal_params(m, DiffusionSchedule([1.0, 0.25]), 0)
        np.testing.assert_allclose(means, m.means)
        assert var == pytest.approx(0.01)

    def test_quarter(self):
        m = PixelGMM(np.array([[1.0, 2.0]]), 0.1)
        means, var = marginal_params(m, DiffusionSchedule([1.0, 0.25]), 1)
        np.testing.assert_allclose(means, 0.5 * m.means)
        assert var == pytest.approx(0.7525)

    def test_pure_noise_limit(self):
        m = PixelGMM(np.array([[3.0]]), 0.1)
        means, var = marginal_params(m, DiffusionSchedule([1.0, 1e-12]), 1)
        assert abs(means[0, 0]) < 1e-5 and var == pytest.approx(1.0)


class TestEps:
    def test_pure_noise_identity(self):
        z = np.random.default_rng(0).normal(size=(10, 3))
        np.testing.assert_allclose(gmm_eps(z, np.zeros((1, 3)), np.ones(1), 0.7, 0.0), z,
                                   rtol=1e-15)

    def test_null_condition_bitwise(self):
        rng = np.random.default_rng(1)
        m = PixelGMM(rng.normal(size=(3, 2)), 0.2)
        s = linear_beta_schedule(20)
        cond = ConditionField(np.zeros((4, 5)), 2)
        z = rng.normal(size=(2, 4, 5))
        for t in (1, 7, 20):
            assert np.array_equal(eps_prediction(m, z, t, s, cond), eps_prediction(m, z, t, s))

    def test_matches_gradient_of_log_density(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            means, w, s0 = random_gmm(rng)
            ab = float(rng.uniform(0.05, 0.95))
            x = rng.normal(0, 1.5, means.shape[1])
            f = lambda y: mixture_log_density(y[None], means, w, s0, ab)[0]
            want = -np.sqrt(1 - ab) * fd_grad(f, x)
            got = gmm_eps(x[None], means, w, s0, ab)[0]
            np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-8)

    def test_degenerate_variance(self):
        with pytest.raises(ModelError):
            mixture_score(np.zeros((1, 1)), np.zeros((1, 1)), np.ones(1), 0.0, 1.0)

    def test_field_layout_matches_points(self):
        rng = np.random.default_rng(3)
        m = PixelGMM(rng.normal(size=(2, 3)), 0.3)
        s = linear_beta_schedule(10)
        z = rng.normal(size=(3, 2, 4))
        out = eps_prediction(m, z, 5, s)
        pt = gmm_eps(z[:, 1, 2][None], m.means, m.weights, 0.3, s.at(5))[0]
        np.testing.assert_allclose(out[:, 1, 2], pt, rtol=1e-14)


class TestLogDensityAndHessian:
    def test_standard_normal(self):
        m = PixelGMM(np.zeros((1, 1)), 0.5)
        ld = log_density(m, np.zeros((1, 1, 1)), 1, DiffusionSchedule([1.0, 1e-300]))
        assert ld[0, 0] == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-12)

    def test_symmetric_midpoint(self):
        means = np.array([[-1.0], [1.0]])
        got = mixture_log_density(np.zeros((1, 1)), means, np.array([0.5, 0.5]), 1.0, 1.0)[0]
        single = -0.5 * np.log(2 * np.pi) - 0.5
        assert got == pytest.approx(single, rel=1e-14)

    def test_single_gaussian_hessian(self):
        z = np.random.default_rng(4).normal(size=(5, 3))
        h = mixture_hessian(z, np.ones((1, 3)), np.ones(1), 0.5, 0.36)
        var = 0.36 * 0.25 + 0.64
        np.testing.assert_allclose(h, np.broadcast_to(-np.eye(3) / var, h.shape), rtol=1e-14)

    def test_hessian_matches_fd_of_score(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            means, w, s0 = random_gmm(rng)
            ab = float(rng.uniform(0.05, 0.95))
            x = rng.normal(0, 1.5, means.shape[1])
            c = x.size
            fd = np.empty((c, c))
            for i in range(c):
                e = np.zeros(c)
                e[i] = 1e-5
                fd[:, i] = (mixture_score((x + e)[None], means, w, s0, ab)[0]
                            - mixture_score((x - e)[None], means, w, s0, ab)[0]) / 2e-5
            got = mixture_hessian(x[None], means, w, s0, ab)[0]
            assert np.linalg.norm(got - fd) <= 1e-4 * np.linalg.norm(fd)
            np.testing.assert_allclose(got, got.T, atol=1e-14)

    def test_field_hessian_shape(self):
        m = PixelGMM(np.eye(2), 0.2)
        h = score_hessian(m, np.zeros((2, 3, 4)), 3, linear_beta_schedule(5))
        assert h.shape == (3, 4, 2, 2)


def velocity_quadrature(z, t, mu, sigma0, w):
    """1-D oracle: E[eps - z0 | z_t = z] by integrating over z0 on a dense grid."""
    z0 = np.linspace(-8, 8, 400_001)
    prior = sum(wk * np.exp(-0.5 * ((z0 - m) / sigma0) ** 2) / sigma0 for wk, m in zip(w, mu))
    eps = (z - (1 - t) * z0) / t
    like = np.exp(-0.5 * eps ** 2)
    dens = prior * like
    # uniform grid: the spacing cancels in the ratio
    return np.sum((eps - z0) * dens) / np.sum(dens)


class TestVelocity:
    def test_point_mass_at_zero(self):
        z = np.random.default_rng(6).normal(size=(7, 2))
        for t in (0.3, 0.9, 1.0):
            np.testing.assert_allclose(gmm_velocity(z, np.zeros((1, 2)), np.ones(1), 0.0, t), z / t,
                                       rtol=1e-14)

    def test_noise_endpoint(self):
        rng = np.random.default_rng(7)
        means, w = rng.normal(size=(3, 2)), np.array([0.2, 0.3, 0.5])
        z = rng.normal(size=(6, 2))
        np.testing.assert_allclose(gmm_velocity(z, means, w, 0.0, 1.0), z - w @ means, rtol=1e-13)

    def test_t_zero_errors(self):
        with pytest.raises(ModelError):
            gmm_velocity(np.zeros((1, 1)), np.zeros((1, 1)), np.ones(1), 0.1, 0.0)
        m = PixelGMM(np.zeros((1, 1)), 0.1)
        with pytest.raises(ModelError):
            velocity_prediction(m, np.zeros((1, 2, 2)), 0.0)

    @pytest.mark.parametrize("z,t", [(0.3, 0.5), (-1.2, 0.2), (2.0, 0.8), (0.9, 0.05)])
    def test_matches_quadrature(self, z, t):
        mu, w, s0 = np.array([-1.0, 1.5]), np.array([0.4, 0.6]), 0.3
        got = gmm_velocity(np.array([[z]]), mu[:, None], w, s0, t)[0, 0]
        assert got == pytest.approx(velocity_quadrature(z, t, mu, s0, w), rel=1e-6, abs=1e-8)


def test_testbed_conditional_switch():
    m = PixelGMM(2 * np.eye(2), 0.1)
    cond = ConditionField(np.ones((2, 2)), 1)
    tb = GMMTestbed(m, cond)
    s = linear_beta_schedule(10)
    z = np.zeros((2, 2, 2))
    assert tb.shape == (2, 2, 2)
    assert not np.allclose(tb.eps(z, 5, s, True), tb.eps(z, 5, s, False))
    np.testing.assert_array_equal(tb.eps(z, 5, s, False), eps_prediction(m, z, 5, s))
