"""
합성 빈티지 생성기
==================
알려진 안정 VAR에서 "참" 패널을 모의하고, 공표 시차와 수정(revision) 잡음을
입혀 과거 빈티지 파일들을 만든다. 마지막 빈티지가 최종(=참) 값이다.

출력 디렉터리:
    <out>/series_manifest.csv          code,tcode,lag_months,group
    <out>/vintages/YYYY-MM.csv         공표월별 빈티지

사용 예시:
    from synthetic import SyntheticSpec, generate_synthetic_vintages
    spec = SyntheticSpec.default(n_vintages=24, revision_noise_sd=0.5, relative_noise=True)
    generate_synthetic_vintages(spec, 'data/synth', seed=11)
"""

import logging
import os
from dataclasses import dataclass
from typing import Dict, Tuple, Union

import numpy as np
import pandas as pd

from forecast_engine import build_companion
from numerics import draw_gaussian
from vintage_store import SERIES_GROUPS, Vintage, resolve_lag_profile, to_month, write_vintage_csv

logger = logging.getLogger(__name__)

REVISION_WINDOW = 12
SIMULATION_BURN = 100


class UnstableModelError(ValueError):
    """참 VAR의 동반 행렬 스펙트럼 반경이 1 이상일 때 발생한다."""


@dataclass(frozen=True)
class SyntheticSpec:
    A_blocks: np.ndarray                 # P×M×M
    intercept: np.ndarray                # M
    Omega: np.ndarray                    # M×M
    codes: Tuple[str, ...] = ()
    groups: Tuple[str, ...] = ()
    start: str = '1990-01'
    n_periods: int = 300
    n_vintages: int = 24
    revision_noise_sd: float = 0.0
    relative_noise: bool = False
    lag_profile: Union[int, Dict[str, int]] = 1
    extra_series: int = 0

    def __post_init__(self):
        A = np.asarray(self.A_blocks, dtype=float)
        if A.ndim == 2:
            A = A[None]
        M = A.shape[1]
        object.__setattr__(self, 'A_blocks', A)
        object.__setattr__(self, 'intercept', np.asarray(self.intercept, dtype=float).reshape(M))
        object.__setattr__(self, 'Omega', np.asarray(self.Omega, dtype=float).reshape(M, M))
        object.__setattr__(self, 'codes', tuple(self.codes))
        object.__setattr__(self, 'groups', tuple(self.groups))
        if not self.codes:
            object.__setattr__(self, 'codes', tuple(f"Y{i + 1}" for i in range(M)))
        if len(self.codes) != M:
            raise ValueError(f"codes 길이 {len(self.codes)}가 M={M}과 다릅니다")
        if not self.groups:
            object.__setattr__(self, 'groups', tuple(
                'small' if i < 3 else 'medium' if i < 6 else 'large' for i in range(M)
            ))
        if any(group not in SERIES_GROUPS for group in self.groups):
            raise ValueError(f"알 수 없는 그룹: {self.groups}")
        if self.n_vintages < 1 or self.n_periods <= self.n_vintages:
            raise ValueError("n_periods는 n_vintages보다 커야 하고 n_vintages >= 1 이어야 합니다")
        if self.revision_noise_sd < 0 or self.extra_series < 0:
            raise ValueError("revision_noise_sd와 extra_series는 0 이상이어야 합니다")

    @property
    def M(self) -> int:
        return self.A_blocks.shape[1]

    @property
    def all_codes(self) -> Tuple[str, ...]:
        return self.codes + tuple(f"X{k + 1}" for k in range(self.extra_series))

    @classmethod
    def default(cls, **overrides) -> 'SyntheticSpec':
        """온건한 지속성과 상관을 가진 M=3, P=2 VAR"""
        A1 = np.array([[0.5, 0.1, 0.0], [0.0, 0.4, 0.1], [0.1, 0.0, 0.3]])
        A2 = np.array([[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.05, 0.1]])
        Omega = np.array([[1.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 1.0]])
        params = dict(A_blocks=np.stack([A1, A2]), intercept=np.array([0.2, 0.0, -0.1]), Omega=Omega)
        params.update(overrides)
        return cls(**params)

    @classmethod
    def from_dict(cls, data: dict) -> 'SyntheticSpec':
        if not data.get('A_blocks'):
            return cls.default(**{k: v for k, v in data.items() if k != 'A_blocks'})
        return cls(**data)


def spectral_radius(A_blocks: np.ndarray) -> float:
    companion, _ = build_companion(list(A_blocks))
    return float(np.max(np.abs(np.linalg.eigvals(companion))))


def simulate_truth(spec: SyntheticSpec, rng: np.random.Generator) -> pd.DataFrame:
    radius = spectral_radius(spec.A_blocks)
    if radius >= 1.0:
        raise UnstableModelError(f"참 VAR가 안정적이지 않습니다 (스펙트럼 반경 {radius:.4f} >= 1)")
    P, M = spec.A_blocks.shape[0], spec.M
    total = spec.n_periods + SIMULATION_BURN
    y = np.zeros((total + P, M))
    for t in range(P, total + P):
        fitted = spec.intercept + sum(spec.A_blocks[p] @ y[t - 1 - p] for p in range(P))
        y[t] = draw_gaussian(fitted, spec.Omega, rng)
    y = y[-spec.n_periods:]

    index = pd.period_range(to_month(spec.start), periods=spec.n_periods, freq='M')
    truth = pd.DataFrame(y, index=index, columns=list(spec.codes))
    for k in range(spec.extra_series):
        loadings = rng.standard_normal(M)
        truth[f"X{k + 1}"] = y @ loadings + 0.5 * rng.standard_normal(spec.n_periods)
    return truth


def write_series_manifest(spec: SyntheticSpec, path: Union[str, os.PathLike]) -> None:
    lags = resolve_lag_profile(spec.all_codes, spec.lag_profile)
    groups = list(spec.groups) + ['extra'] * spec.extra_series
    frame = pd.DataFrame({
        'code': list(spec.all_codes),
        'tcode': 1,
        'lag_months': [lags[code] for code in spec.all_codes],
        'group': groups,
    })
    frame.to_csv(path, index=False, lineterminator='\n')


def generate_synthetic_vintages(spec: SyntheticSpec, out_dir: Union[str, os.PathLike],
                                seed: int) -> str:
    """
    합성 빈티지 디렉터리를 만든다. 공표월 τ의 빈티지는 시계열별로 τ − 시차까지
    관측되고, 최종 빈티지가 아니면 각 시계열의 마지막 12개월에 독립 N(0, sd²)
    수정 잡음이 더해진다.
    """
    rng = np.random.default_rng(seed)
    truth = simulate_truth(spec, rng)
    codes = list(spec.all_codes)
    lags = resolve_lag_profile(codes, spec.lag_profile)
    noise_scale = {
        code: spec.revision_noise_sd * (float(truth[code].std(ddof=1)) if spec.relative_noise else 1.0)
        for code in codes
    }
    tcodes = {code: 1 for code in codes}

    vintage_dir = os.path.join(os.fspath(out_dir), 'vintages')
    os.makedirs(vintage_dir, exist_ok=True)
    write_series_manifest(spec, os.path.join(os.fspath(out_dir), 'series_manifest.csv'))

    final_release = truth.index[-1] + max(lags.values())
    releases = pd.period_range(end=final_release, periods=spec.n_vintages, freq='M')
    for release in releases:
        if release == final_release:
            data = truth.copy()
        else:
            data = truth.loc[:release].copy()
            for code in codes:
                data.loc[data.index > release - lags[code], code] = np.nan
                observed = data[code].dropna().index[-REVISION_WINDOW:]
                if noise_scale[code] > 0 and len(observed):
                    data.loc[observed, code] += noise_scale[code] * rng.standard_normal(len(observed))
            observed_rows = data.notna().any(axis=1)
            data = data.loc[:observed_rows[observed_rows].index[-1]]
        write_vintage_csv(
            Vintage(release_id=release, data=data, tcodes=tcodes),
            os.path.join(vintage_dir, f"{release}.csv"),
        )

    logger.info(
        "합성 빈티지 %d개 생성: %s ~ %s (M=%d, 잡음 sd=%.3f%s)",
        len(releases), releases[0], releases[-1], spec.M, spec.revision_noise_sd,
        ' × 계열 sd' if spec.relative_noise else '',
    )
    return vintage_dir
