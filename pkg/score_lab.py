"""
예측 평가 지표
==============
- 점예측: 절대 예측오차(FE), RMSE
- 밀도예측: 주변 로그 예측우도(LPL), 초점 변수 결합 LPL (추출 평균은 log-sum-exp)
- 누적 점수, 월별 모형 순위, 실시간 대 의사 표본외 Kendall τ-b
- 상대 지표: 밀도 = pseudo − realtime (차이), 점 = realtime / pseudo (비율)
- 요약표: 모형마다 두 행 (실시간 수준과 순위 / 차이·비율과 pseudo 순위)

점수 표(scores)는 result_store.SCORE_COLUMNS 열을 갖는 DataFrame이다.
variable == 'joint' 행은 결합 LPL만 갖는다.
"""

import logging
import warnings
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, stats
from scipy.special import logsumexp

from numerics import NumericalError, cholesky_lower

logger = logging.getLogger(__name__)

JOINT = 'joint'
DENSITY = 'density'
POINT = 'point'


class ScoreError(ValueError):
    """점수 계산 입력이 올바르지 않을 때 발생한다."""


# ============================================================
# 단일 지표
# ============================================================
def abs_fe(realized: float, point_forecast: float) -> float:
    if not (np.isfinite(realized) and np.isfinite(point_forecast)):
        raise ScoreError(f"유한하지 않은 입력: realized={realized}, forecast={point_forecast}")
    return abs(float(realized) - float(point_forecast))


def rmse(errors: Sequence[float]) -> float:
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ScoreError("RMSE를 계산할 예측오차가 없습니다")
    return float(np.sqrt(np.mean(errors ** 2)))


def _average_log(log_densities: np.ndarray) -> float:
    log_densities = np.asarray(log_densities, dtype=float)
    if log_densities.size == 0:
        raise ScoreError("예측 추출이 없습니다")
    value = float(logsumexp(log_densities) - np.log(log_densities.size))
    if not np.isfinite(value):
        raise ScoreError("예측 밀도가 유한하지 않습니다")
    return value


def marginal_lpl(realized: float, means: Sequence[float], variances: Sequence[float],
                 m: float = 0.0, s: float = 1.0) -> float:
    """log( (1/S) Σ_s f_N(y | m + s μ_s, s² v_s) )"""
    means = np.asarray(means, dtype=float).reshape(-1)
    variances = np.asarray(variances, dtype=float).reshape(-1)
    if means.shape != variances.shape:
        raise ScoreError("평균과 분산의 추출 수가 다릅니다")
    if np.any(~(variances > 0)):
        raise ScoreError("예측 분산은 양수여야 합니다")
    log_densities = stats.norm.logpdf(realized, loc=m + s * means, scale=s * np.sqrt(variances))
    return _average_log(log_densities)


def joint_lpl(realized: Sequence[float], means: np.ndarray, covs: np.ndarray,
              m: Optional[Sequence[float]] = None, s: Optional[Sequence[float]] = None) -> float:
    """
    초점 변수 F개의 결합 로그 예측우도. 추출마다 Σ̃ = L L' 이고
    역표준화 공분산은 (diag(s) L)(diag(s) L)' 이다.
    """
    realized = np.asarray(realized, dtype=float).reshape(-1)
    F = realized.shape[0]
    means = np.asarray(means, dtype=float).reshape(-1, F)
    covs = np.asarray(covs, dtype=float).reshape(-1, F, F)
    if means.shape[0] != covs.shape[0]:
        raise ScoreError("평균과 공분산의 추출 수가 다릅니다")
    m = np.zeros(F) if m is None else np.asarray(m, dtype=float)
    s = np.ones(F) if s is None else np.asarray(s, dtype=float)

    log_densities = np.empty(means.shape[0])
    for k in range(means.shape[0]):
        try:
            lower = s[:, None] * cholesky_lower(covs[k], "예측 공분산")
        except NumericalError as exc:
            raise ScoreError(str(exc)) from exc
        z = linalg.solve_triangular(lower, realized - (m + s * means[k]), lower=True)
        log_densities[k] = (
            -0.5 * float(z @ z)
            - float(np.sum(np.log(np.diag(lower))))
            - 0.5 * F * np.log(2.0 * np.pi)
        )
    return _average_log(log_densities)


def cumulate(scores):
    """앞에서부터의 누적합 (Series는 Series로)"""
    if isinstance(scores, pd.Series):
        return scores.cumsum()
    return np.cumsum(np.asarray(scores, dtype=float))


def rank_models(scores: Sequence[float], direction: str = 'desc') -> np.ndarray:
    """1 = 최고. desc: 클수록 좋음 (LPS), asc: 작을수록 좋음 (|FE|). 동점은 평균 순위."""
    scores = np.asarray(scores, dtype=float)
    if np.any(~np.isfinite(scores)):
        raise ScoreError("순위를 매길 점수에 유한하지 않은 값이 있습니다")
    if direction == 'desc':
        return stats.rankdata(-scores, method='average')
    if direction == 'asc':
        return stats.rankdata(scores, method='average')
    raise ScoreError(f"direction은 'desc' 또는 'asc'여야 합니다: {direction!r}")


def kendall_tau(ranks_a: Sequence[float], ranks_b: Sequence[float]) -> float:
    """동점 보정 Kendall τ-b. 한쪽이 모두 동점이면 NaN."""
    ranks_a = np.asarray(ranks_a, dtype=float)
    ranks_b = np.asarray(ranks_b, dtype=float)
    if ranks_a.shape != ranks_b.shape or ranks_a.ndim != 1:
        raise ScoreError("두 순위 벡터의 길이가 다릅니다")
    if ranks_a.shape[0] < 2:
        raise ScoreError("Kendall τ에는 2개 이상의 모형이 필요합니다")
    if np.all(ranks_a == ranks_a[0]) or np.all(ranks_b == ranks_b[0]):
        return float('nan')
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        result = stats.kendalltau(ranks_a, ranks_b, variant='b')
    return float(result[0])


def relative_series(rt, pseudo, kind: str = DENSITY):
    """밀도: pseudo − realtime. 점: realtime / pseudo (pseudo가 0이면 NaN)."""
    is_series = isinstance(rt, pd.Series)
    rt_values = np.asarray(rt, dtype=float)
    pseudo_values = np.asarray(pseudo, dtype=float)
    if rt_values.shape != pseudo_values.shape:
        raise ScoreError("실시간과 pseudo 계열의 길이가 다릅니다")
    if kind == DENSITY:
        result = pseudo_values - rt_values
    elif kind == POINT:
        with np.errstate(divide='ignore', invalid='ignore'):
            result = np.where(pseudo_values == 0, np.nan, rt_values / pseudo_values)
    else:
        raise ScoreError(f"kind는 'density' 또는 'point'여야 합니다: {kind!r}")
    return pd.Series(result, index=rt.index) if is_series else result


# ============================================================
# 점수 표
# ============================================================
_MEASURES = {
    DENSITY: ('lpl', 'desc'),
    POINT: ('fe', 'asc'),
}


def _aligned_cumulative(scores: pd.DataFrame, info_set: str, horizon: int, variable: str,
                        column: str) -> pd.DataFrame:
    """origin × model_id 누적 점수. 모든 모형에 값이 있는 달만 남긴다."""
    part = scores[
        (scores['info_set'] == info_set)
        & (scores['horizon'] == horizon)
        & (scores['variable'] == variable)
    ]
    wide = part.pivot(index='origin', columns='model_id', values=column).sort_index()
    return wide.dropna(how='any').cumsum()


def cumulative_scores(scores: pd.DataFrame) -> pd.DataFrame:
    """(모형, 정보집합, 예측기간, 변수)별 origin 순 누적 lpl과 누적 |FE|"""
    columns = ['model_id', 'info_set', 'horizon', 'variable', 'origin', 'cum_lpl', 'cum_abs_fe']
    if scores.empty:
        return pd.DataFrame(columns=columns)
    ordered = scores.sort_values(['model_id', 'info_set', 'horizon', 'variable', 'origin'])
    groups = ordered.groupby(['model_id', 'info_set', 'horizon', 'variable'], sort=False)
    result = ordered[['model_id', 'info_set', 'horizon', 'variable', 'origin']].copy()
    result['cum_lpl'] = groups['lpl'].cumsum()
    result['cum_abs_fe'] = groups['fe'].cumsum()
    return result.reset_index(drop=True)[columns]


def rank_series(scores: pd.DataFrame, kind: str = DENSITY,
                variables: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """월별 누적 점수 순위 (밀도: 누적 LPS, 점: 누적 |FE|)"""
    columns = ['kind', 'info_set', 'horizon', 'variable', 'origin', 'model_id', 'rank']
    column, direction = _MEASURES[kind]
    rows = []
    usable = scores.dropna(subset=[column])
    if variables is not None:
        usable = usable[usable['variable'].isin(list(variables))]
    for (info_set, horizon, variable), _ in usable.groupby(['info_set', 'horizon', 'variable'], sort=True):
        wide = _aligned_cumulative(usable, info_set, horizon, variable, column)
        for origin, row in wide.iterrows():
            ranks = rank_models(row.to_numpy(), direction)
            for model_id, rank in zip(wide.columns, ranks):
                rows.append((kind, info_set, int(horizon), variable, origin, model_id, float(rank)))
    return pd.DataFrame(rows, columns=columns)


def tau_series(ranks: pd.DataFrame) -> pd.DataFrame:
    """같은 달 실시간 순위와 pseudo 순위 사이의 Kendall τ"""
    columns = ['kind', 'horizon', 'variable', 'origin', 'tau']
    if ranks.empty:
        return pd.DataFrame(columns=columns)
    wide = ranks.pivot_table(
        index=['kind', 'horizon', 'variable', 'origin', 'model_id'],
        columns='info_set', values='rank',
    )
    rows = []
    if not {'realtime', 'pseudo'} <= set(wide.columns):
        return pd.DataFrame(columns=columns)
    for (kind, horizon, variable, origin), block in wide.groupby(level=[0, 1, 2, 3], sort=True):
        block = block.dropna()
        if len(block) < 2:
            continue
        tau = kendall_tau(block['realtime'].to_numpy(), block['pseudo'].to_numpy())
        rows.append((kind, int(horizon), variable, origin, tau))
    return pd.DataFrame(rows, columns=columns)


def relative_cumulative(scores: pd.DataFrame, kind: str = DENSITY,
                        variables: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """모형별 누적 점수의 실시간 대 pseudo 상대 계열"""
    columns = ['kind', 'model_id', 'horizon', 'variable', 'origin', 'realtime', 'pseudo', 'relative']
    column, _ = _MEASURES[kind]
    usable = scores.dropna(subset=[column])
    if variables is not None:
        usable = usable[usable['variable'].isin(list(variables))]
    rows = []
    for (model_id, horizon, variable), part in usable.groupby(['model_id', 'horizon', 'variable'], sort=True):
        wide = part.pivot(index='origin', columns='info_set', values=column).sort_index()
        if not {'realtime', 'pseudo'} <= set(wide.columns):
            continue
        wide = wide[['realtime', 'pseudo']].dropna().cumsum()
        relative = relative_series(wide['realtime'], wide['pseudo'], kind)
        for origin in wide.index:
            rows.append((kind, model_id, int(horizon), variable, origin,
                         float(wide.at[origin, 'realtime']), float(wide.at[origin, 'pseudo']),
                         float(relative[origin])))
    return pd.DataFrame(rows, columns=columns)


def _summary_levels(scores: pd.DataFrame, info_set: str) -> pd.DataFrame:
    """(변수, 모형, 지표, 예측기간)별 평균 LPS와 RMSE, 모형 간 순위"""
    part = scores[(scores['info_set'] == info_set) & (scores['variable'] != JOINT)]
    rows = []
    for (variable, model_id, horizon), group in part.groupby(['variable', 'model_id', 'horizon'], sort=True):
        lpl = group['lpl'].dropna()
        fe = group['fe'].dropna()
        rows.append((variable, model_id, int(horizon), 'LPS', float(lpl.mean()) if len(lpl) else np.nan))
        rows.append((variable, model_id, int(horizon), 'RMSE', rmse(fe) if len(fe) else np.nan))
    levels = pd.DataFrame(rows, columns=['variable', 'model_id', 'horizon', 'metric', 'value'])
    levels['rank'] = np.nan
    for (variable, horizon, metric), group in levels.groupby(['variable', 'horizon', 'metric']):
        valid = group.dropna(subset=['value'])
        if valid.empty:
            continue
        direction = 'desc' if metric == 'LPS' else 'asc'
        levels.loc[valid.index, 'rank'] = rank_models(valid['value'].to_numpy(), direction)
    return levels


def _widen(levels: pd.DataFrame, horizons: Sequence[int]) -> pd.DataFrame:
    columns = []
    for metric in ('LPS', 'RMSE'):
        for h in horizons:
            columns += [f"{metric}_h{h}", f"{metric}_h{h}_rank"]
    if levels.empty:
        return pd.DataFrame(columns=['variable', 'model_id'] + columns)
    keys = levels[['variable', 'model_id']].drop_duplicates().sort_values(['variable', 'model_id'])
    table = keys.reset_index(drop=True)
    for metric in ('LPS', 'RMSE'):
        for h in horizons:
            part = levels[(levels['metric'] == metric) & (levels['horizon'] == h)]
            part = part.set_index(['variable', 'model_id'])
            index = pd.MultiIndex.from_frame(table[['variable', 'model_id']])
            table[f"{metric}_h{h}"] = part['value'].reindex(index).to_numpy()
            table[f"{metric}_h{h}_rank"] = part['rank'].reindex(index).to_numpy()
    return table[['variable', 'model_id'] + columns]


def info_set_summary(scores: pd.DataFrame, info_set: str) -> pd.DataFrame:
    """정보집합 하나의 평균 LPS·RMSE와 순위 (정보집합 이름은 담지 않는다)"""
    horizons = sorted(int(h) for h in scores['horizon'].unique()) if not scores.empty else []
    return _widen(_summary_levels(scores, info_set), horizons)


def summary_table(scores: pd.DataFrame) -> pd.DataFrame:
    """
    모형마다 두 행: realtime 행 = 실시간 평균 수준과 순위,
    difference 행 = LPS는 realtime − pseudo, RMSE는 realtime / pseudo, 순위는 pseudo 순위.
    """
    horizons = sorted(int(h) for h in scores['horizon'].unique()) if not scores.empty else []
    realtime = _widen(_summary_levels(scores, 'realtime'), horizons)
    pseudo = _widen(_summary_levels(scores, 'pseudo'), horizons)
    value_columns = [c for c in realtime.columns if c not in ('variable', 'model_id')]
    if realtime.empty:
        return pd.DataFrame(columns=['variable', 'model_id', 'row'] + value_columns)

    pseudo = pseudo.set_index(['variable', 'model_id']).reindex(
        pd.MultiIndex.from_frame(realtime[['variable', 'model_id']])
    ).reset_index()
    difference = realtime[['variable', 'model_id']].copy()
    for h in horizons:
        lps, rms = f"LPS_h{h}", f"RMSE_h{h}"
        difference[lps] = realtime[lps] - pseudo[lps]
        difference[f"{lps}_rank"] = pseudo[f"{lps}_rank"]
        difference[rms] = relative_series(realtime[rms], pseudo[rms], POINT)
        difference[f"{rms}_rank"] = pseudo[f"{rms}_rank"]

    realtime = realtime.assign(row='realtime', _order=0)
    difference = difference.assign(row='difference', _order=1)
    table = pd.concat([realtime, difference], ignore_index=True)
    table = table.sort_values(['variable', 'model_id', '_order'], kind='mergesort')
    return table[['variable', 'model_id', 'row'] + value_columns].reset_index(drop=True)
