import itertools
import math
import unittest

import numpy as np
import pandas as pd
from scipy import stats

from result_store import SCORE_COLUMNS
from score_lab import (
    DENSITY, JOINT, POINT, ScoreError, abs_fe, cumulate, cumulative_scores, info_set_summary, joint_lpl,
    kendall_tau, marginal_lpl, rank_models, rank_series, relative_cumulative, relative_series, rmse,
    summary_table, tau_series,
)


def _pairwise_tau_b(x, y):
    concordant = discordant = ties_x = ties_y = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        dx, dy = np.sign(x[i] - x[j]), np.sign(y[i] - y[j])
        if dx == 0:
            ties_x += 1
        if dy == 0:
            ties_y += 1
        if dx * dy > 0:
            concordant += 1
        elif dx * dy < 0:
            discordant += 1
    pairs = len(x) * (len(x) - 1) // 2
    return (concordant - discordant) / math.sqrt((pairs - ties_x) * (pairs - ties_y))


# 모형 a, b, c 두 달치. 실시간 LPS 순위 a>b>c, pseudo 순위 b>a>c
_LPL = {
    'realtime': {'a': -1.0, 'b': -2.0, 'c': -3.0},
    'pseudo': {'a': -1.5, 'b': -1.0, 'c': -3.0},
}
_FE = {
    'realtime': {'a': 1.0, 'b': 2.0, 'c': 0.5},
    'pseudo': {'a': 2.0, 'b': 2.0, 'c': 1.0},
}


def _scores(lpl=_LPL, fe=_FE, with_joint=True):
    rows = []
    for info_set in ('realtime', 'pseudo'):
        for model_id in ('a', 'b', 'c'):
            for origin, target in (('2000-01', '2000-02'), ('2000-02', '2000-03')):
                rows.append((model_id, info_set, origin, target, 1, 'X',
                             fe[info_set][model_id], lpl[info_set][model_id]))
                if with_joint:
                    rows.append((model_id, info_set, origin, target, 1, JOINT,
                                 np.nan, 2 * lpl[info_set][model_id]))
    return pd.DataFrame(rows, columns=SCORE_COLUMNS)


class PointMetricTest(unittest.TestCase):
    def test_absolute_error_and_rmse(self):
        self.assertEqual(abs_fe(1.5, 2.0), 0.5)
        self.assertAlmostEqual(rmse([3.0, -4.0]), math.sqrt(12.5))
        errors = np.random.default_rng(0).standard_normal(50)
        self.assertAlmostEqual(rmse(errors) ** 2, float(np.mean(errors ** 2)))

    def test_invalid_point_inputs_raise(self):
        with self.assertRaises(ScoreError):
            abs_fe(np.nan, 1.0)
        with self.assertRaises(ScoreError):
            rmse([])


class DensityMetricTest(unittest.TestCase):
    def test_single_draw_matches_destandardized_normal(self):
        value = marginal_lpl(4.0, [0.5], [2.0], m=1.0, s=3.0)

        self.assertAlmostEqual(value, stats.norm.logpdf(4.0, 1.0 + 3.0 * 0.5, 3.0 * math.sqrt(2.0)))

    def test_draws_are_averaged_in_density_space(self):
        value = marginal_lpl(0.0, [0.0, 10.0], [1.0, 1.0])
        expected = math.log(0.5 * (stats.norm.pdf(0.0, 0.0, 1.0) + stats.norm.pdf(0.0, 10.0, 1.0)))

        self.assertAlmostEqual(value, expected, places=12)

    def test_far_tail_stays_finite(self):
        self.assertTrue(np.isfinite(marginal_lpl(1e3, [0.0, 0.1], [1.0, 1.0])))

    def test_joint_equals_sum_of_marginals_for_diagonal_covariance(self):
        realized = np.array([1.0, -2.0, 0.5])
        mean = np.array([0.2, -1.0, 0.0])
        variances = np.array([0.5, 2.0, 1.5])
        m, s = np.array([0.1, 0.0, -0.3]), np.array([1.0, 2.0, 0.5])

        joint = joint_lpl(realized, mean[None], np.diag(variances)[None], m, s)
        marginals = sum(marginal_lpl(realized[j], [mean[j]], [variances[j]], m[j], s[j]) for j in range(3))

        self.assertAlmostEqual(joint, marginals, delta=1e-10)

    def test_joint_matches_multivariate_normal(self):
        cov = np.array([[1.0, 0.3], [0.3, 0.5]])
        realized = np.array([0.4, -0.2])

        self.assertAlmostEqual(joint_lpl(realized, np.zeros((1, 2)), cov[None]),
                               stats.multivariate_normal.logpdf(realized, np.zeros(2), cov), places=10)

    def test_invalid_density_inputs_raise(self):
        with self.assertRaises(ScoreError):
            marginal_lpl(0.0, [0.0], [0.0])
        with self.assertRaises(ScoreError):
            marginal_lpl(0.0, [0.0, 1.0], [1.0])
        with self.assertRaises(ScoreError):
            joint_lpl([0.0, 0.0], np.zeros((1, 2)), -np.eye(2)[None])


class RankingTest(unittest.TestCase):
    def test_ranks_follow_direction_with_average_ties(self):
        np.testing.assert_array_equal(rank_models([-1.0, -2.0, -1.0], 'desc'), [1.5, 3.0, 1.5])
        np.testing.assert_array_equal(rank_models([0.3, 0.1, 0.2], 'asc'), [3.0, 1.0, 2.0])
        with self.assertRaises(ScoreError):
            rank_models([1.0, 2.0], 'up')
        with self.assertRaises(ScoreError):
            rank_models([1.0, np.nan])

    def test_kendall_tau_matches_pairwise_enumeration(self):
        for n in range(2, 7):
            base = np.arange(1.0, n + 1)
            for permutation in itertools.permutations(base):
                permutation = np.array(permutation)
                self.assertAlmostEqual(kendall_tau(base, permutation),
                                       _pairwise_tau_b(base, permutation), places=12)

    def test_kendall_tau_b_corrects_for_ties(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(3, 8))
            x = rng.integers(1, 4, n).astype(float)
            y = rng.integers(1, 4, n).astype(float)
            if np.all(x == x[0]) or np.all(y == y[0]):
                continue
            self.assertAlmostEqual(kendall_tau(x, y), _pairwise_tau_b(x, y), places=12)

    def test_kendall_tau_is_nan_when_one_side_is_all_tied(self):
        self.assertTrue(math.isnan(kendall_tau([1.0, 2.0, 3.0], [2.0, 2.0, 2.0])))
        with self.assertRaises(ScoreError):
            kendall_tau([1.0], [1.0])

    def test_relative_series_difference_and_ratio(self):
        rt = pd.Series([-1.0, -3.0], index=['2000-01', '2000-02'])
        pseudo = pd.Series([-2.0, -2.5], index=rt.index)

        density = relative_series(rt, pseudo, DENSITY)
        self.assertEqual(list(density.index), ['2000-01', '2000-02'])
        np.testing.assert_allclose(density.to_numpy(), [-1.0, 0.5])
        ratio = relative_series(np.array([1.0, 2.0]), np.array([2.0, 0.0]), POINT)
        self.assertEqual(ratio[0], 0.5)
        self.assertTrue(np.isnan(ratio[1]))
        with self.assertRaises(ScoreError):
            relative_series([1.0], [1.0, 2.0])


class WorkedExampleTest(unittest.TestCase):
    def test_point_errors(self):
        self.assertEqual(abs_fe(2.0, 2.0), 0.0)
        self.assertEqual(abs_fe(2.0, 3.5), 1.5)
        self.assertEqual(abs_fe(0.0, 1.7), abs_fe(0.0, -1.7))
        self.assertEqual(rmse([0.0, 0.0, 0.0]), 0.0)
        self.assertEqual(rmse([1.0, 1.0]), 1.0)

    def test_unit_density_has_zero_log_score(self):
        self.assertAlmostEqual(marginal_lpl(0.0, [0.0], [1 / (2 * math.pi)]), 0.0, places=12)

    def test_draw_average_of_two_densities(self):
        variances = [1 / (2 * math.pi * d ** 2) for d in (0.1, 0.3)]

        self.assertAlmostEqual(marginal_lpl(0.0, [0.0, 0.0], variances), math.log(0.2), places=12)

    def test_average_density_dominates_average_log_density(self):
        rng = np.random.default_rng(2)
        means, variances = rng.standard_normal(50), rng.uniform(0.5, 2.0, 50)

        per_draw = stats.norm.logpdf(0.3, means, np.sqrt(variances))
        self.assertGreaterEqual(marginal_lpl(0.3, means, variances), per_draw.mean())

    def test_single_focus_variable_reduces_to_marginal(self):
        means, variances = np.array([0.1, -0.4]), np.array([0.8, 1.3])

        self.assertAlmostEqual(
            joint_lpl([0.5], means[:, None], variances[:, None, None], [1.0], [2.0]),
            marginal_lpl(0.5, means, variances, 1.0, 2.0), places=12,
        )

    def test_cumulate_prefix_sums(self):
        np.testing.assert_array_equal(cumulate([1.0, 1.0, 1.0]), [1.0, 2.0, 3.0])
        self.assertEqual(cumulate([]).size, 0)
        np.testing.assert_array_equal(cumulate([-1.0, 2.0]), [-1.0, 1.0])
        series = cumulate(pd.Series([1.0, 2.0], index=['2000-01', '2000-02']))
        self.assertEqual(series.tolist(), [1.0, 3.0])
        self.assertEqual(list(series.index), ['2000-01', '2000-02'])

    def test_rank_and_tau_examples(self):
        np.testing.assert_array_equal(rank_models([3.0, 1.0, 2.0], 'desc'), [1.0, 3.0, 2.0])
        np.testing.assert_array_equal(rank_models([5.0, 5.0], 'desc'), [1.5, 1.5])
        np.testing.assert_array_equal(rank_models([1.0, 2.0], 'asc'), [1.0, 2.0])
        self.assertAlmostEqual(kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]), 1.0)
        self.assertAlmostEqual(kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]), -1.0)
        self.assertAlmostEqual(kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]), 2 / 3)

    def test_identical_series_give_neutral_relative_values(self):
        values = np.array([-1.0, -2.5, -4.0])

        np.testing.assert_array_equal(relative_series(values, values, DENSITY), 0.0)
        np.testing.assert_array_equal(relative_series(values, values, POINT), 1.0)


class ScoreTableTest(unittest.TestCase):
    def setUp(self):
        self.scores = _scores()

    def test_cumulative_scores_accumulate_in_origin_order(self):
        cumulative = cumulative_scores(self.scores[self.scores['variable'] == 'X'])
        part = cumulative[(cumulative['model_id'] == 'a') & (cumulative['info_set'] == 'realtime')]

        self.assertEqual(part['origin'].tolist(), ['2000-01', '2000-02'])
        self.assertEqual(part['cum_lpl'].tolist(), [-1.0, -2.0])
        self.assertEqual(part['cum_abs_fe'].tolist(), [1.0, 2.0])

    def test_rank_series_orders_cumulative_scores(self):
        ranks = rank_series(self.scores, DENSITY, variables=['X'])
        first = ranks[(ranks['origin'] == '2000-01')].set_index(['info_set', 'model_id'])['rank']

        self.assertEqual(first[('realtime', 'a')], 1.0)
        self.assertEqual(first[('realtime', 'c')], 3.0)
        self.assertEqual(first[('pseudo', 'b')], 1.0)
        point = rank_series(self.scores, POINT)
        self.assertEqual(set(point['variable']), {'X'})
        pseudo_point = point[(point['info_set'] == 'pseudo') & (point['origin'] == '2000-02')]
        self.assertEqual(sorted(pseudo_point['rank'].tolist()), [1.0, 2.5, 2.5])

    def test_tau_series_compares_realtime_and_pseudo_ranks(self):
        ranks = pd.concat([rank_series(self.scores, DENSITY, ['X']), rank_series(self.scores, POINT, ['X'])])
        taus = tau_series(ranks)

        self.assertEqual(len(taus), 4)
        density = taus[taus['kind'] == DENSITY]['tau'].to_numpy()
        point = taus[taus['kind'] == POINT]['tau'].to_numpy()
        np.testing.assert_allclose(density, [1 / 3, 1 / 3])
        np.testing.assert_allclose(point, [2 / math.sqrt(6), 2 / math.sqrt(6)])

    def test_identical_information_sets_give_unit_tau(self):
        same = _scores(lpl={'realtime': _LPL['realtime'], 'pseudo': _LPL['realtime']})
        taus = tau_series(rank_series(same, DENSITY))

        np.testing.assert_allclose(taus['tau'].to_numpy(), 1.0)

    def test_relative_cumulative_uses_difference_for_density_and_ratio_for_point(self):
        density = relative_cumulative(self.scores, DENSITY, ['X'])
        a = density[density['model_id'] == 'a']
        np.testing.assert_allclose(a['relative'].to_numpy(), [-0.5, -1.0])

        point = relative_cumulative(self.scores, POINT)
        a = point[point['model_id'] == 'a']
        np.testing.assert_allclose(a['relative'].to_numpy(), [0.5, 0.5])

    def test_summary_table_pairs_realtime_and_difference_rows(self):
        table = summary_table(self.scores)

        self.assertEqual(list(table.columns),
                         ['variable', 'model_id', 'row', 'LPS_h1', 'LPS_h1_rank', 'RMSE_h1', 'RMSE_h1_rank'])
        self.assertEqual(table['model_id'].tolist(), ['a', 'a', 'b', 'b', 'c', 'c'])
        self.assertEqual(table['row'].tolist(), ['realtime', 'difference'] * 3)
        self.assertEqual(set(table['variable']), {'X'})

        a_rt, a_diff = table.iloc[0], table.iloc[1]
        self.assertAlmostEqual(a_rt['LPS_h1'], -1.0)
        self.assertEqual(a_rt['LPS_h1_rank'], 1.0)
        self.assertAlmostEqual(a_diff['LPS_h1'], 0.5)
        self.assertEqual(a_diff['LPS_h1_rank'], 2.0)
        self.assertAlmostEqual(a_diff['RMSE_h1'], 0.5)

    def test_info_set_summary_is_identical_for_identical_scores(self):
        same = _scores(lpl={'realtime': _LPL['realtime'], 'pseudo': _LPL['realtime']},
                       fe={'realtime': _FE['realtime'], 'pseudo': _FE['realtime']})

        realtime = info_set_summary(same, 'realtime')
        self.assertNotIn('info_set', realtime.columns)
        pd.testing.assert_frame_equal(realtime, info_set_summary(same, 'pseudo'))

    def test_empty_scores_give_empty_tables(self):
        empty = pd.DataFrame(columns=SCORE_COLUMNS)

        self.assertTrue(cumulative_scores(empty).empty)
        self.assertTrue(tau_series(pd.DataFrame(columns=['kind', 'info_set', 'horizon', 'variable',
                                                         'origin', 'model_id', 'rank'])).empty)
        self.assertTrue(summary_table(empty).empty)


if __name__ == '__main__':
    unittest.main()
