"""
반복(iterated) h기 예측
=======================
VAR(P)를 동반(companion) 형태로 쌓아 VAR(1)로 반복한다.

    Y_{T+h} = Ã Y_{T+h−1} + c̃ + ũ,   Var(ũ) = Ω̃ (왼쪽 위 M×M 블록만 Ω_T)
    μ̃_{T+h} = (Ã^h Y_T + Σ_{i<h} Ã^i c̃)[1:M]
    Σ̃_{T+h} = (Σ_{i<h} Ã^i Ω̃ Ã^i')[1:M, 1:M]

시점 T의 계수 A_T와 공분산 Ω_T는 예측 구간 동안 고정한다.
보존 추출마다 가우스 벡터 하나를 뽑아 원 단위(역표준화)로 저장한다.
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from numerics import draw_gaussian, symmetrize
from result_store import write_json_atomic
from sampler_core import DrawStore
from vintage_store import StandardizationInfo, destandardize, to_month

logger = logging.getLogger(__name__)

DEFAULT_HORIZONS = (1, 3, 12)


class ForecastError(ValueError):
    """예측 입력의 차원이 맞지 않거나 결과가 유한하지 않을 때 발생한다."""


@dataclass(frozen=True)
class ForecastMoments:
    mean: np.ndarray
    cov: np.ndarray
    horizon: int
    draw_id: Optional[int] = None


def build_companion(A_blocks: Sequence[np.ndarray],
                    intercept: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """(A_1, …, A_P) → (MP×MP 동반 행렬, 첫 M행에만 절편이 있는 MP 벡터)"""
    blocks = [np.atleast_2d(np.asarray(block, dtype=float)) for block in A_blocks]
    if not blocks:
        raise ForecastError("시차 계수 행렬이 하나 이상 필요합니다 (P >= 1)")
    M = blocks[0].shape[0]
    if any(block.shape != (M, M) for block in blocks):
        raise ForecastError(f"시차 계수 행렬은 모두 {M}×{M}이어야 합니다")
    P = len(blocks)
    companion = np.zeros((M * P, M * P))
    companion[:M] = np.hstack(blocks)
    if P > 1:
        companion[M:, :M * (P - 1)] = np.eye(M * (P - 1))
    stacked = np.zeros(M * P)
    if intercept is not None:
        intercept = np.asarray(intercept, dtype=float).reshape(-1)
        if intercept.shape[0] != M:
            raise ForecastError(f"절편 길이 {intercept.shape[0]}가 M={M}과 다릅니다")
        stacked[:M] = intercept
    return companion, stacked


def _embed_covariance(Omega: np.ndarray, size: int) -> np.ndarray:
    Omega = np.atleast_2d(np.asarray(Omega, dtype=float))
    M = Omega.shape[0]
    if Omega.shape != (M, M) or size % M:
        raise ForecastError(f"Ω 모양 {Omega.shape}이(가) 동반 행렬 {size}와 맞지 않습니다")
    stacked = np.zeros((size, size))
    stacked[:M, :M] = Omega
    return stacked


def forecast_path_moments(companion: np.ndarray, Omega: np.ndarray, Y_T: np.ndarray,
                          horizons: Sequence[int], intercept: Optional[np.ndarray] = None,
                          draw_id: Optional[int] = None) -> List[ForecastMoments]:
    """동반 행렬을 한 번만 반복해 모든 예측기간의 적률을 구한다."""
    horizons = [int(h) for h in horizons]
    if not horizons or min(horizons) < 1:
        raise ForecastError(f"예측기간은 1 이상이어야 합니다: {horizons}")
    size = companion.shape[0]
    Y_T = np.asarray(Y_T, dtype=float).reshape(-1)
    if companion.shape != (size, size) or Y_T.shape[0] != size:
        raise ForecastError(f"Y_T 길이 {Y_T.shape[0]}가 동반 행렬 차원 {size}와 다릅니다")
    omega = _embed_covariance(Omega, size)
    M = np.atleast_2d(Omega).shape[0]
    shift = np.zeros(size) if intercept is None else np.asarray(intercept, dtype=float).reshape(-1)
    if shift.shape[0] == M and M != size:
        shift = np.concatenate([shift, np.zeros(size - M)])

    wanted = set(horizons)
    found = {}
    mean = Y_T
    cov = np.zeros((size, size))
    for h in range(1, max(horizons) + 1):
        mean = companion @ mean + shift
        cov = symmetrize(companion @ cov @ companion.T + omega)
        if h in wanted:
            if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
                raise ForecastError(f"{h}기 예측 적률이 유한하지 않습니다 (폭발적 추출)")
            found[h] = ForecastMoments(mean[:M].copy(), cov[:M, :M].copy(), h, draw_id)
    return [found[h] for h in horizons]


def forecast_moments(companion: np.ndarray, Omega: np.ndarray, Y_T: np.ndarray, h: int,
                     intercept: Optional[np.ndarray] = None) -> ForecastMoments:
    return forecast_path_moments(companion, Omega, Y_T, [h], intercept)[0]


@dataclass(frozen=True)
class PredictiveDraws:
    """values: S×H×M (원 단위). mean/cov: 표준화 단위 추출별 예측 적률."""
    values: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    horizons: Tuple[int, ...]
    origin: str
    series_codes: Tuple[str, ...]
    std_info: StandardizationInfo
    seed: Optional[int] = None
    model_id: str = ''

    @property
    def S(self) -> int:
        return self.values.shape[0]

    def horizon_index(self, h: int) -> int:
        try:
            return self.horizons.index(int(h))
        except ValueError as exc:
            raise ForecastError(f"예측기간 {h}가 없습니다: {self.horizons}") from exc

    def target(self, h: int) -> pd.Period:
        return to_month(self.origin) + int(h)

    def point_forecast(self) -> np.ndarray:
        """H×M 점예측 (추출 평균)"""
        return self.values.mean(axis=0)

    def to_frame(self) -> pd.DataFrame:
        S, H, M = self.values.shape
        draw, horizon, series = np.meshgrid(np.arange(S), np.arange(H), np.arange(M), indexing='ij')
        return pd.DataFrame({
            'draw': draw.reshape(-1),
            'horizon': np.asarray(self.horizons)[horizon.reshape(-1)],
            'series': np.asarray(self.series_codes, dtype=object)[series.reshape(-1)],
            'value': self.values.reshape(-1),
        })

    def manifest(self) -> dict:
        return {
            'origin': self.origin,
            'horizons': list(self.horizons),
            'series_codes': list(self.series_codes),
            'm_y': self.std_info.m_y.tolist(),
            's_y': self.std_info.s_y.tolist(),
            'seed': self.seed,
            'model_id': self.model_id,
            'S': self.S,
            'files': ['draws.csv', 'mean.npy', 'cov.npy'],
        }

    def digest(self) -> str:
        sha = hashlib.sha256()
        for array in (self.values, self.mean, self.cov):
            sha.update(np.ascontiguousarray(array).tobytes())
        sha.update(json.dumps(self.manifest(), sort_keys=True).encode())
        return sha.hexdigest()

    def save(self, directory: Union[str, os.PathLike]) -> None:
        os.makedirs(directory, exist_ok=True)
        self.to_frame().to_csv(os.path.join(directory, 'draws.csv'), index=False, float_format='%.17g')
        np.save(os.path.join(directory, 'mean.npy'), self.mean)
        np.save(os.path.join(directory, 'cov.npy'), self.cov)
        write_json_atomic(os.path.join(directory, 'manifest.json'), self.manifest())

    @classmethod
    def load(cls, directory: Union[str, os.PathLike]) -> 'PredictiveDraws':
        with open(os.path.join(directory, 'manifest.json'), encoding='utf-8') as f:
            manifest = json.load(f)
        horizons = tuple(manifest['horizons'])
        codes = tuple(manifest['series_codes'])
        frame = pd.read_csv(os.path.join(directory, 'draws.csv'), float_precision='round_trip')
        S = int(manifest['S'])
        values = np.full((S, len(horizons), len(codes)), np.nan)
        h_pos = frame['horizon'].map({h: k for k, h in enumerate(horizons)}).to_numpy()
        m_pos = frame['series'].map({c: k for k, c in enumerate(codes)}).to_numpy()
        values[frame['draw'].to_numpy(), h_pos, m_pos] = frame['value'].to_numpy()
        return cls(
            values=values,
            mean=np.load(os.path.join(directory, 'mean.npy')),
            cov=np.load(os.path.join(directory, 'cov.npy')),
            horizons=horizons,
            origin=manifest['origin'],
            series_codes=codes,
            std_info=StandardizationInfo(manifest['m_y'], manifest['s_y']),
            seed=manifest.get('seed'),
            model_id=manifest.get('model_id', ''),
        )


def draw_forecasts(store: DrawStore, std_info: StandardizationInfo,
                   horizons: Sequence[int] = DEFAULT_HORIZONS,
                   rng: Optional[np.random.Generator] = None,
                   model_id: str = '') -> PredictiveDraws:
    """보존 추출마다 예측기간별 가우스 벡터 하나를 뽑아 역표준화한다."""
    rng = rng if rng is not None else np.random.default_rng()
    horizons = tuple(int(h) for h in horizons)
    if len(std_info) != store.M:
        raise ForecastError(f"std_info 길이 {len(std_info)}가 M={store.M}과 다릅니다")

    S, H, M = store.S, len(horizons), store.M
    means = np.zeros((S, H, M))
    covs = np.zeros((S, H, M, M))
    standardized = np.zeros((S, H, M))
    for s in range(S):
        companion, shift = build_companion(store.A[s], store.intercept[s])
        path = forecast_path_moments(
            companion, store.Omega[s], store.Y_T[s].reshape(-1), horizons, shift, draw_id=s
        )
        for k, moments in enumerate(path):
            means[s, k] = moments.mean
            covs[s, k] = moments.cov
            standardized[s, k] = draw_gaussian(moments.mean, moments.cov, rng)

    values = destandardize(standardized, std_info)
    if not np.all(np.isfinite(values)):
        raise ForecastError("예측 추출에 유한하지 않은 값이 있습니다")
    logger.debug("예측 추출 S=%d, 예측기간 %s, 시점 %s", S, horizons, store.last_period)
    return PredictiveDraws(values, means, covs, horizons, store.last_period,
                           tuple(store.series_codes), std_info, store.seed, model_id)
