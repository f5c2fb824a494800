"""
주성분 요인 추출 (PCA augmentation)
===================================
모형의 관측 변수 이외의 (표준화된) 넓은 패널에서 주성분을 뽑아
내생변수로 덧붙인다. 정보집합(빈티지)마다 독립적으로 다시 추출한다.

- 결측 칸은 표준화 공간의 평균인 0으로 채운 뒤 표본공분산을 고유분해
- 적재 벡터의 부호: 절댓값이 가장 큰 원소가 양수
- 점수 = 데이터 × 적재, 이후 점수 열마다 평균 0·표준편차 1로 재표준화
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from vintage_store import Panel

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10


class FactorError(ValueError):
    """요인 추출 조건이 맞지 않을 때 발생한다."""


@dataclass(frozen=True)
class FactorSet:
    scores: np.ndarray              # T×k
    loadings: np.ndarray            # N×k, 열 직교정규
    explained_variance: np.ndarray  # k, 내림차순
    period_index: pd.PeriodIndex
    observed_rows: np.ndarray       # T, 넓은 패널에 그 달 관측이 하나라도 있으면 True
    source_codes: Tuple[str, ...] = ()

    @property
    def k(self) -> int:
        return self.scores.shape[1]

    @property
    def codes(self) -> Tuple[str, ...]:
        return tuple(f"PC{j + 1}" for j in range(self.k))


def extract_pcs(wide: Panel, k: int) -> FactorSet:
    """표준화된 넓은 패널에서 상위 k개 주성분을 추출한다."""
    if wide.T == 0 or wide.M == 0:
        raise FactorError("빈 패널에서는 주성분을 추출할 수 없습니다")
    if not wide.standardized:
        raise FactorError("주성분 추출에는 표준화된 패널이 필요합니다")
    if k < 0 or k > min(wide.T, wide.M):
        raise FactorError(f"k={k}는 min(T, N)={min(wide.T, wide.M)} 이하여야 합니다")

    data = np.where(wide.mask, wide.values, 0.0)
    observed_rows = wide.mask.any(axis=1)
    if k == 0:
        return FactorSet(
            np.zeros((wide.T, 0)), np.zeros((wide.M, 0)), np.zeros(0),
            wide.period_index, observed_rows, wide.series_codes,
        )

    cov = np.atleast_2d(np.cov(data, rowvar=False))
    eigval, eigvec = linalg.eigh(cov)
    order = np.argsort(eigval)[::-1]
    eigval = eigval[order]
    eigvec = eigvec[:, order]

    rank = int(np.sum(eigval > RANK_TOLERANCE * max(float(eigval[0]), 0.0))) if eigval[0] > 0 else 0
    if k > rank:
        raise FactorError(f"k={k}가 데이터 공분산의 계수 {rank}를 넘습니다")

    loadings = eigvec[:, :k].copy()
    for j in range(k):
        pivot = int(np.argmax(np.abs(loadings[:, j])))
        if loadings[pivot, j] < 0:
            loadings[:, j] = -loadings[:, j]

    raw_scores = data @ loadings
    centered = raw_scores - raw_scores.mean(axis=0)
    sds = centered.std(axis=0, ddof=1)
    scores = centered / sds

    logger.debug(
        "주성분 %d개 추출 (N=%d, T=%d, 설명분산 %s)",
        k, wide.M, wide.T, np.round(eigval[:k], 4).tolist(),
    )
    return FactorSet(scores, loadings, eigval[:k].copy(), wide.period_index,
                     observed_rows, wide.series_codes)


def augment_panel(base: Panel, factors: FactorSet) -> Panel:
    """
    요인 점수 열을 기본 시계열 뒤에 덧붙인다. 넓은 패널에 관측이 하나도
    없던 달의 요인 칸은 결측으로 표시되어 표본추출기가 보간한다.
    """
    if factors.k == 0:
        return base
    if not base.period_index.equals(factors.period_index):
        raise FactorError("기본 패널과 요인의 기간 인덱스가 다릅니다")
    if not base.standardized:
        raise FactorError("표준화된 기본 패널에만 요인을 덧붙일 수 있습니다")

    factor_mask = np.repeat(factors.observed_rows[:, None], factors.k, axis=1)
    values = np.hstack([base.values, np.where(factor_mask, factors.scores, np.nan)])
    mask = np.hstack([base.mask, factor_mask])
    return Panel(
        values, mask, base.period_index,
        base.series_codes + factors.codes,
        base.std_info.extended(factors.k),
    )
