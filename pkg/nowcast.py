"""
결측값 조건부 가우스 보간 (nowcast)
==================================
관측기 t의 예측분포 N(μ, Ω)를 결측(1)·관측(2) 블록으로 나누면

    μ̄ = μ₁ + Σ₁₂ Σ₂₂⁻¹ (ỹ₂ − μ₂)
    Σ̄ = Σ₁₁ − Σ₁₂ Σ₂₂⁻¹ Σ₂₁

깁스 스윕의 마지막 단계에서 결측 칸을 이 분포로 다시 추출한다.
ragged edge(마지막 완전 관측월 이후)에서는 TVP 상태와 로그분산을
운동법칙으로 한 기씩 전진시킨 값으로 적합값을 만든다.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from numerics import NumericalError, cholesky_lower, draw_gaussian, symmetrize
from sampler_core import ChainState, reduced_form
from vintage_store import Panel

logger = logging.getLogger(__name__)


class NowcastError(ValueError):
    """보간 입력이 올바르지 않을 때 발생한다."""


@dataclass(frozen=True)
class ConditionalMoments:
    mean: np.ndarray
    cov: np.ndarray
    missing_idx: np.ndarray


def partition_moments(mu: np.ndarray, Sigma: np.ndarray, missing_idx: Sequence[int],
                      realized: np.ndarray) -> ConditionalMoments:
    """관측된 시계열 값이 주어졌을 때 결측 시계열의 조건부 평균·공분산"""
    mu = np.asarray(mu, dtype=float)
    Sigma = symmetrize(np.asarray(Sigma, dtype=float))
    M = mu.shape[0]
    if Sigma.shape != (M, M):
        raise NowcastError(f"Sigma 모양 {Sigma.shape}이(가) ({M}, {M})이 아닙니다")
    missing = np.unique(np.asarray(missing_idx, dtype=int))
    if missing.size < 1 or missing.size > M or missing[0] < 0 or missing[-1] >= M:
        raise NowcastError(f"결측 인덱스가 올바르지 않습니다: {list(missing_idx)}")
    observed = np.setdiff1d(np.arange(M), missing)
    realized = np.asarray(realized, dtype=float).reshape(-1)
    if realized.shape[0] != observed.shape[0]:
        raise NowcastError(
            f"관측값 {realized.shape[0]}개가 관측 시계열 {observed.shape[0]}개와 다릅니다"
        )
    if observed.size == 0:
        return ConditionalMoments(mu.copy(), Sigma.copy(), missing)

    s11 = Sigma[np.ix_(missing, missing)]
    s21 = Sigma[np.ix_(observed, missing)]
    s22 = Sigma[np.ix_(observed, observed)]
    try:
        lower = cholesky_lower(s22, "관측 블록 공분산 Σ₂₂")
    except NumericalError as exc:
        raise NowcastError(str(exc)) from exc
    weights = linalg.cho_solve((lower, True), s21)   # Σ₂₂⁻¹ Σ₂₁
    mean = mu[missing] + weights.T @ (realized - mu[observed])
    cov = symmetrize(s11 - s21.T @ weights)
    return ConditionalMoments(mean, cov, missing)


def draw_missing(cm: ConditionalMoments, rng: np.random.Generator) -> np.ndarray:
    return draw_gaussian(cm.mean, cm.cov, rng)


def ragged_edge_start(mask: np.ndarray, lags: int) -> int:
    """시차 구간 이후 마지막 완전 관측 행의 다음 행"""
    full_rows = [r for r in range(lags, mask.shape[0]) if mask[r].all()]
    return (full_rows[-1] + 1) if full_rows else lags


def impute_presample(filled: np.ndarray, mask: np.ndarray, lags: int,
                     rng: np.random.Generator) -> int:
    """
    시차 구간(앞 P행)의 결측 칸은 회귀식이 없으므로 현재 채워진 패널의
    표본 평균·공분산을 같은 행의 관측값으로 조건부화해 추출한다. 채운 칸 수를 돌려준다.
    """
    rows = [r for r in range(min(lags, filled.shape[0])) if not mask[r].all()]
    if not rows:
        return 0
    mean = filled.mean(axis=0)
    cov = np.atleast_2d(np.cov(filled, rowvar=False))
    count = 0
    for r in rows:
        missing = np.flatnonzero(~mask[r])
        observed = np.flatnonzero(mask[r])
        cm = partition_moments(mean, cov, missing, filled[r, observed])
        filled[r, missing] = draw_missing(cm, rng)
        count += missing.size
    return count


def impute_ragged_edge(state: ChainState, panel: Panel, rng: np.random.Generator) -> np.ndarray:
    """
    결측 칸을 앞에서부터 한 달씩 채운다. state.filled를 직접 바꾸고 반환한다.
    앞선 달의 보간값이 다음 달 x_t에 들어간다. 시차 구간은 impute_presample.
    """
    mask = state.mask
    filled = state.filled
    lags = state.lags
    T = filled.shape[0]
    if mask.shape != filled.shape or mask.shape != panel.mask.shape:
        raise NowcastError("체인 상태와 패널의 모양이 다릅니다")
    impute_presample(filled, mask, lags, rng)
    if np.all(mask[lags:]):
        return filled

    edge = ragged_edge_start(mask, lags)
    tilde = [eq.tilde_path[edge - lags].copy() for eq in state.equations]
    log_vols = [
        sv.log_vol_path[edge - 1 - lags] if edge > lags else sv.log_vol_init
        for sv in state.vols
    ]

    for r in range(lags, T):
        if r >= edge:
            if state.time_varying:
                tilde = [path + rng.standard_normal(path.shape[0]) for path in tilde]
            log_vols = [sv.step(h, rng) for sv, h in zip(state.vols, log_vols)]
        if mask[r].all():
            continue
        t = r - lags
        if r < edge:
            coefficients = [eq.beta0 + eq.sqrtV * eq.tilde_path[t + 1] for eq in state.equations]
            period_vols = [sv.log_vol_path[t] for sv in state.vols]
        else:
            coefficients = [eq.beta0 + eq.sqrtV * path for eq, path in zip(state.equations, tilde)]
            period_vols = log_vols
        form = reduced_form(coefficients, period_vols, lags)

        x = np.concatenate([filled[r - p] for p in range(1, lags + 1)])
        fitted = form.A @ x + form.intercept
        missing = np.flatnonzero(~mask[r])
        observed = np.flatnonzero(mask[r])
        cm = partition_moments(fitted, form.Omega, missing, filled[r, observed])
        filled[r, missing] = draw_missing(cm, rng)

    logger.debug("결측 %d칸 보간 (ragged edge 시작 행 %d)", int(np.sum(~mask[lags:])), edge)
    return filled
