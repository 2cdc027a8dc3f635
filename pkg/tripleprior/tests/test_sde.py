import dataclasses
import math
import unittest

import numpy as np
import pytest
from common import rand

from tripleprior.exceptions import ParameterError, ScheduleError, ShapeError
from tripleprior.sde import (
    SdeSchedule, analytic_score, initial_state, marginal, noise_to_score, restore_identity, reverse_step,
    reverse_trajectory, sample_forward, sample_restore
)


def halving_schedule() -> SdeSchedule:
    # theta_bar_1 = ln 2, so exp(-theta_bar) = 1/2 and v = lam^2 * 3/4
    return SdeSchedule.constant(T=1, lam=1.0, theta_bar_end=math.log(2.0))


class TestSchedule(unittest.TestCase):

    def test_constant_reaches_end(self):
        s = SdeSchedule.constant(T=50, theta_bar_end=4.0)
        self.assertEqual(s.theta_bar[0], 0.0)
        self.assertAlmostEqual(s.theta_bar[-1], 4.0)
        np.testing.assert_allclose(s.sigma_sq, 2 * s.lam ** 2 * s.theta)

    def test_cosine_monotone(self):
        s = SdeSchedule.cosine(T=40, theta_bar_end=5.0)
        self.assertTrue((np.diff(s.theta_bar) > 0).all())
        self.assertAlmostEqual(s.theta_bar[-1], 5.0)
        self.assertEqual(s.rule, "cosine")

    def test_variance_increasing(self):
        s = SdeSchedule.build("constant", T=20)
        v = s.variance(np.arange(s.T + 1))
        self.assertEqual(v[0], 0.0)
        self.assertTrue((np.diff(v) > 0).all())
        self.assertLess(v[-1], s.lam ** 2)

    def test_unknown_rule(self):
        with pytest.raises(ScheduleError):
            SdeSchedule.build("linear")

    def test_nonpositive_theta(self):
        with pytest.raises(ScheduleError):
            SdeSchedule.from_thetas(np.array([1.0, 0.0, 1.0]))

    def test_to_dict(self):
        d = SdeSchedule.constant(T=10, lam=0.5, theta_bar_end=2.0).to_dict()
        self.assertEqual(d["T"], 10)
        self.assertEqual(d["rule"], "constant")
        self.assertAlmostEqual(d["theta_bar_end"], 2.0)


class TestClosedForms(unittest.TestCase):

    def test_marginal_values(self):
        m = marginal(halving_schedule(), np.array([1.0]), np.array([0.0]), 1)
        np.testing.assert_allclose(m.mean, [0.5])
        self.assertAlmostEqual(float(m.variance), 0.75)

    def test_marginal_at_zero_is_clean(self):
        x0, mu = rand(3, 4, 4, seed=1), rand(3, 4, 4, seed=2)
        s = SdeSchedule.constant(T=10)
        m = marginal(s, x0, mu, 0)
        np.testing.assert_array_equal(m.mean, x0)
        self.assertEqual(float(m.variance), 0.0)
        x_t, eps = sample_forward(s, x0, mu, 0, np.random.default_rng(0))
        np.testing.assert_array_equal(x_t, x0)
        np.testing.assert_array_equal(eps, 0.0)

    def test_marginal_shape_mismatch(self):
        with pytest.raises(ShapeError):
            marginal(halving_schedule(), np.zeros(3), np.zeros(4), 1)

    def test_t_out_of_range(self):
        s = SdeSchedule.constant(T=5)
        with pytest.raises(ScheduleError):
            marginal(s, np.zeros(2), np.zeros(2), 6)
        with pytest.raises(ScheduleError):
            noise_to_score(s, np.zeros(2), 0)

    def test_noise_to_score(self):
        score = noise_to_score(halving_schedule(), np.array([math.sqrt(0.75)]), 1)
        np.testing.assert_allclose(score, [-1.0])

    def test_stationary_limit(self):
        s = SdeSchedule.constant(T=10, lam=0.3, theta_bar_end=10.0)
        m = marginal(s, np.array([1.0]), np.array([0.25]), s.T)
        self.assertAlmostEqual(m.mean[0], 0.25, delta=1e-4)
        self.assertAlmostEqual(float(m.variance), 0.09, delta=1e-4)

    def test_score_values(self):
        s = halving_schedule()
        x0, mu = np.array([1.0]), np.array([0.0])
        np.testing.assert_allclose(analytic_score(s, np.array([1.25]), x0, mu, 1), [-1.0])
        np.testing.assert_allclose(analytic_score(s, np.array([0.5]), x0, mu, 1), [0.0])

    def test_score_matches_log_density(self):
        s = SdeSchedule.constant(T=10, lam=0.4, theta_bar_end=3.0)
        rng = np.random.default_rng(9)
        x0, mu, x = rng.uniform(size=100), rng.uniform(size=100), rng.uniform(size=100)
        m = marginal(s, x0, mu, 6)
        v = float(m.variance)

        def log_density(value):
            return -0.5 * (value - m.mean) ** 2 / v - 0.5 * math.log(2 * math.pi * v)

        h = 1e-5
        fd = (log_density(x + h) - log_density(x - h)) / (2 * h)
        score = analytic_score(s, x, x0, mu, 6)
        self.assertLess(np.max(np.abs(score - fd) / (np.abs(fd) + 1e-8)), 1e-5)

    def test_analytic_score_matches_noise(self):
        s = SdeSchedule.constant(T=10)
        x0, mu = rand(2, 3, seed=3), rand(2, 3, seed=4)
        x_t, eps = sample_forward(s, x0, mu, 4, np.random.default_rng(5))
        np.testing.assert_allclose(analytic_score(s, x_t, x0, mu, 4), noise_to_score(s, eps, 4), rtol=1e-9)

    def test_per_sample_times(self):
        s = SdeSchedule.constant(T=10)
        x0, mu = np.ones((3, 2, 2)), np.zeros((3, 2, 2))
        m = marginal(s, x0, mu, np.array([0, 5, 10]))
        np.testing.assert_allclose(m.mean[:, 0, 0], np.exp(-s.theta_bar[[0, 5, 10]]))

    def test_forward_moments(self):
        s = SdeSchedule.constant(T=20, lam=0.5, theta_bar_end=2.0)
        n = 40000
        x0, mu = np.full(n, 0.8), np.full(n, 0.2)
        x_t, _ = sample_forward(s, x0, mu, 10, np.random.default_rng(7))
        m = marginal(s, x0[:1], mu[:1], 10)
        std = math.sqrt(float(m.variance))
        self.assertLess(abs(x_t.mean() - m.mean[0]), 5 * std / math.sqrt(n))
        self.assertAlmostEqual(x_t.var() / float(m.variance), 1.0, delta=0.05)


class TestReverse(unittest.TestCase):

    def test_reverse_step_closed_form(self):
        x = reverse_step(halving_schedule(), np.array([1.0]), np.array([0.0]), 1, np.array([0.0]), stochastic=False)
        np.testing.assert_allclose(x, [1.0 + math.log(2.0)])

    def test_zero_theta_step_leaves_state(self):
        with pytest.raises(ScheduleError):
            SdeSchedule.from_thetas([1.0, 0.0, 1.0])
        s = SdeSchedule.constant(T=4)
        flat = dataclasses.replace(s, theta=np.where(np.arange(5) == 2, 0.0, s.theta),
                                   sigma_sq=np.where(np.arange(5) == 2, 0.0, s.sigma_sq),
                                   sigma=np.where(np.arange(5) == 2, 0.0, s.sigma))
        x, mu = rand(2, 3), rand(2, 3, seed=1)
        np.testing.assert_array_equal(reverse_step(flat, x, mu, 2, np.zeros((2, 3)), stochastic=False), x)

    def test_mu_is_a_fixed_point(self):
        mu = rand(3, 4, 4)
        out = reverse_step(SdeSchedule.constant(T=10), mu, mu, 5, np.zeros_like(mu), stochastic=False)
        np.testing.assert_array_equal(out, mu)

    def test_stochastic_step_needs_rng(self):
        with pytest.raises(ParameterError):
            reverse_step(halving_schedule(), np.zeros(1), np.zeros(1), 1, np.zeros(1))

    def _recover(self, stochastic: bool) -> float:
        s = SdeSchedule.constant(T=200)
        x0 = rand(3, 8, 8, seed=11) * 0.3 + 0.5
        mu = x0 + rand(3, 8, 8, seed=12) * 0.3
        rng = np.random.default_rng(13)
        x_T = initial_state(s, mu, rng)
        out = reverse_trajectory(s, x_T, mu, lambda x, t: analytic_score(s, x, x0, mu, t), rng, stochastic)
        return float(np.abs(out - x0).mean() / np.abs(mu - x0).mean())

    def test_recovers_clean_deterministic(self):
        self.assertLess(self._recover(stochastic=False), 0.1)

    def test_recovers_clean_stochastic(self):
        self.assertLess(self._recover(stochastic=True), 0.3)

    def test_sample_restore_with_oracle_noise(self):
        s = SdeSchedule.constant(T=100)
        x0, mu = np.full((1, 4, 4), 0.7), np.full((1, 4, 4), 0.3)
        seen = []

        def oracle(x_t, mu_, t, priors):
            m = marginal(s, x0, mu_, t)
            return (x_t - m.mean) / math.sqrt(float(m.variance))

        out = sample_restore(s, mu, oracle, None, np.random.default_rng(0), stochastic=False,
                             callback=lambda t, x: seen.append(t))
        self.assertEqual(seen, list(range(s.T - 1, -1, -1)))
        self.assertLess(np.abs(out - x0).max(), 0.05)

    def test_identity_copies(self):
        mu = rand(2, 2)
        out = restore_identity(mu)
        np.testing.assert_array_equal(out, mu)
        self.assertIsNot(out, mu)
