import unittest

import numpy as np
import pandas as pd

from nowcast import (
    ConditionalMoments, NowcastError, draw_missing, impute_presample, impute_ragged_edge,
    partition_moments, ragged_edge_start,
)
from sampler_core import SvState, initial_state
from vintage_store import Panel, StandardizationInfo


def _random_instance(rng):
    M = int(rng.integers(2, 6))
    root = rng.standard_normal((M, M))
    Sigma = root @ root.T + 0.5 * np.eye(M)
    mu = rng.standard_normal(M)
    q = int(rng.integers(1, M))
    missing = np.sort(rng.choice(M, size=q, replace=False))
    observed = np.setdiff1d(np.arange(M), missing)
    realized = mu[observed] + rng.standard_normal(observed.size)
    return mu, Sigma, missing, observed, realized


class PartitionMomentsTest(unittest.TestCase):
    def test_matches_explicit_inverse_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            mu, Sigma, missing, observed, realized = _random_instance(rng)
            cm = partition_moments(mu, Sigma, missing, realized)

            s12 = Sigma[np.ix_(missing, observed)]
            s22_inv = np.linalg.inv(Sigma[np.ix_(observed, observed)])
            np.testing.assert_allclose(cm.mean, mu[missing] + s12 @ s22_inv @ (realized - mu[observed]),
                                       atol=1e-10)
            np.testing.assert_allclose(cm.cov, Sigma[np.ix_(missing, missing)] - s12 @ s22_inv @ s12.T,
                                       atol=1e-10)

    def test_matches_monte_carlo_regression_oracle(self):
        rng = np.random.default_rng(1)
        n = 100000
        for _ in range(100):
            mu, Sigma, missing, observed, realized = _random_instance(rng)
            cm = partition_moments(mu, Sigma, missing, realized)

            joint = rng.multivariate_normal(mu, Sigma, size=n)
            x1, x2 = joint[:, missing], joint[:, observed]
            design = np.column_stack([np.ones(n), x2])
            coef = np.linalg.lstsq(design, x1, rcond=None)[0]
            residual = x1 - design @ coef
            mc_cov = residual.T @ residual / (n - design.shape[1])
            mc_mean = np.concatenate([[1.0], realized]) @ coef

            gap = realized - x2.mean(axis=0)
            leverage = 1.0 + gap @ np.linalg.solve(np.cov(x2, rowvar=False).reshape(len(observed), -1), gap)
            se = np.sqrt(np.diag(mc_cov) * leverage / n)
            np.testing.assert_array_less(np.abs(cm.mean - mc_mean), 4.5 * se + 1e-12)
            self.assertLess(np.linalg.norm(cm.cov - mc_cov) / np.linalg.norm(cm.cov), 0.02)

    def test_all_missing_returns_unconditional_moments(self):
        mu = np.array([1.0, 2.0])
        Sigma = np.array([[2.0, 0.5], [0.5, 1.0]])
        cm = partition_moments(mu, Sigma, [0, 1], np.zeros(0))

        np.testing.assert_array_equal(cm.mean, mu)
        np.testing.assert_array_equal(cm.cov, Sigma)

    def test_independent_blocks_ignore_observed_values(self):
        cm = partition_moments(np.array([1.0, 5.0]), np.diag([2.0, 3.0]), [0], np.array([100.0]))

        self.assertEqual(cm.mean.tolist(), [1.0])
        self.assertEqual(cm.cov.tolist(), [[2.0]])

    def test_invalid_inputs_raise(self):
        Sigma = np.eye(3)
        with self.assertRaises(NowcastError):
            partition_moments(np.zeros(3), Sigma, [], np.zeros(3))
        with self.assertRaises(NowcastError):
            partition_moments(np.zeros(3), Sigma, [3], np.zeros(2))
        with self.assertRaises(NowcastError):
            partition_moments(np.zeros(3), Sigma, [0], np.zeros(1))
        with self.assertRaises(NowcastError):
            partition_moments(np.zeros(3), np.eye(2), [0], np.zeros(2))

    def test_singular_observed_block_raises(self):
        Sigma = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.0, 1.0, 1.0]]) * 1e3
        Sigma[1, 2] = Sigma[2, 1] = 2e3

        with self.assertRaises(NowcastError):
            partition_moments(np.zeros(3), Sigma, [0], np.zeros(2))

    def test_draw_missing_uses_conditional_covariance(self):
        cm = ConditionalMoments(np.array([1.0, -1.0]), np.array([[1.0, 0.6], [0.6, 2.0]]), np.array([0, 1]))
        rng = np.random.default_rng(2)
        draws = np.array([draw_missing(cm, rng) for _ in range(20000)])

        np.testing.assert_allclose(draws.mean(axis=0), cm.mean, atol=0.05)
        np.testing.assert_allclose(np.cov(draws, rowvar=False), cm.cov, atol=0.06)


class RaggedEdgeTest(unittest.TestCase):
    def _panel(self, values, mask):
        T, M = values.shape
        return Panel(np.where(mask, values, np.nan), mask,
                     pd.period_range('2000-01', periods=T, freq='M'),
                     tuple(f"Y{j}" for j in range(M)), StandardizationInfo(np.zeros(M), np.ones(M)))

    def test_edge_starts_after_last_fully_observed_row(self):
        mask = np.ones((6, 2), dtype=bool)
        mask[4, 1] = False
        mask[5, 0] = False
        mask[2, 0] = False

        self.assertEqual(ragged_edge_start(mask, 1), 4)
        self.assertEqual(ragged_edge_start(np.zeros((4, 2), dtype=bool), 2), 2)

    def test_near_zero_covariance_imputes_the_fitted_value(self):
        rng = np.random.default_rng(3)
        values = rng.standard_normal((12, 2))
        mask = np.ones(values.shape, dtype=bool)
        mask[0, 1] = False
        mask[10, 1] = False
        mask[11, :] = False
        panel = self._panel(values, mask)
        state = initial_state(panel, 1, False, rng)
        state.equations[0].beta0 = np.array([0.5, 0.1, 0.2])
        state.equations[1].beta0 = np.array([0.0, 0.3, 0.0, -0.1])
        state.vols = [SvState(-40.0, 0.0, 1e-8, np.full(11, -40.0), -40.0) for _ in range(2)]

        filled = impute_ragged_edge(state, panel, rng)

        A = np.array([[0.5, 0.1], [0.0, 0.3]])
        c = np.array([0.2, -0.1])
        self.assertTrue(np.isfinite(filled[0, 1]))
        self.assertNotEqual(filled[0, 1], 0.0)
        np.testing.assert_array_equal(filled[mask], values[mask])
        np.testing.assert_allclose(filled[10, 1], (A @ filled[9] + c)[1], atol=1e-5)
        np.testing.assert_allclose(filled[11], A @ filled[10] + c, atol=1e-5)

    def _constant_state(self, panel, rng):
        state = initial_state(panel, 1, False, rng)
        state.equations[0].beta0 = np.array([0.5, 0.1, 0.2])
        state.equations[1].beta0 = np.array([0.0, 0.3, 0.0, -0.1])
        return state

    def test_fully_observed_panel_is_left_alone(self):
        rng = np.random.default_rng(4)
        values = rng.standard_normal((6, 2))
        panel = self._panel(values, np.ones(values.shape, dtype=bool))
        state = initial_state(panel, 1, True, rng)
        before = state.filled.copy()

        impute_ragged_edge(state, panel, rng)

        np.testing.assert_array_equal(state.filled, before)

    def test_lag_window_gap_is_redrawn_each_call(self):
        rng = np.random.default_rng(5)
        values = rng.standard_normal((8, 2))
        mask = np.ones(values.shape, dtype=bool)
        mask[1, 0] = False
        panel = self._panel(values, mask)
        state = initial_state(panel, 2, False, rng)

        draws = []
        for _ in range(20):
            impute_ragged_edge(state, panel, rng)
            draws.append(state.filled[1, 0])

        np.testing.assert_array_equal(state.filled[mask], values[mask])
        self.assertTrue(np.all(np.isfinite(draws)))
        self.assertGreater(np.std(draws), 0.0)

    def test_lag_window_gap_follows_panel_moments(self):
        rng = np.random.default_rng(6)
        common = rng.standard_normal(200)
        values = np.column_stack([common + 0.3 * rng.standard_normal(200),
                                  common + 0.3 * rng.standard_normal(200)])
        mask = np.ones(values.shape, dtype=bool)
        mask[0, 0] = False
        filled = np.where(mask, values, 0.0)
        expected = partition_moments(filled.mean(axis=0), np.cov(filled, rowvar=False), [0],
                                     filled[0, [1]])

        draws = []
        for _ in range(20000):
            work = filled.copy()
            self.assertEqual(impute_presample(work, mask, 1, rng), 1)
            draws.append(work[0, 0])

        se = np.sqrt(expected.cov[0, 0] / len(draws))
        self.assertLess(abs(np.mean(draws) - expected.mean[0]), 4 * se)
        np.testing.assert_allclose(np.var(draws), expected.cov[0, 0], rtol=0.05)

    def test_single_trailing_cell_is_the_only_change(self):
        values = np.random.default_rng(7).standard_normal((10, 2))
        mask = np.ones(values.shape, dtype=bool)
        mask[-1, 1] = False
        panel = self._panel(values, mask)

        first = self._constant_state(panel, np.random.default_rng(0))
        second = self._constant_state(panel, np.random.default_rng(0))
        impute_ragged_edge(first, panel, np.random.default_rng(1))
        impute_ragged_edge(second, panel, np.random.default_rng(2))

        changed = first.filled != second.filled
        self.assertEqual(np.argwhere(changed).tolist(), [[9, 1]])
        np.testing.assert_array_equal(first.filled[mask], values[mask])


class ConditioningPropertyTest(unittest.TestCase):
    def test_conditioning_never_increases_variance(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            mu, Sigma, missing, _, realized = _random_instance(rng)
            cm = partition_moments(mu, Sigma, missing, realized)

            gap = Sigma[np.ix_(missing, missing)] - cm.cov
            self.assertGreaterEqual(np.linalg.eigvalsh(gap).min(), -1e-10)

    def test_conditional_covariance_ignores_realized_values(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            mu, Sigma, missing, _, realized = _random_instance(rng)
            first = partition_moments(mu, Sigma, missing, realized)
            second = partition_moments(mu, Sigma, missing, realized + 10 * rng.standard_normal(realized.size))

            np.testing.assert_array_equal(first.cov, second.cov)

    def test_permuting_series_commutes_with_conditioning(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            mu, Sigma, missing, observed, realized = _random_instance(rng)
            M = mu.shape[0]
            perm = rng.permutation(M)
            position = np.argsort(perm)
            full = np.zeros(M)
            full[observed] = realized
            missing_p = position[missing]
            observed_p = np.setdiff1d(np.arange(M), missing_p)

            cm = partition_moments(mu, Sigma, missing, realized)
            cm_p = partition_moments(mu[perm], Sigma[np.ix_(perm, perm)], missing_p,
                                     full[perm][observed_p])

            order = np.argsort(perm[cm_p.missing_idx])
            np.testing.assert_array_equal(perm[cm_p.missing_idx][order], cm.missing_idx)
            np.testing.assert_allclose(cm_p.mean[order], cm.mean, atol=1e-10)
            np.testing.assert_allclose(cm_p.cov[np.ix_(order, order)], cm.cov, atol=1e-10)


if __name__ == '__main__':
    unittest.main()
