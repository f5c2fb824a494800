"""
TVP-VAR-SV 깁스 표본추출기
==========================
삼각(triangular) 분해 + 비중심화(non-centered) 모수화 + horseshoe 축소.

방정식 i (0부터)의 회귀식:

    y_it = β_it' z_it + η_it,   η_it ~ N(0, exp(h_it))
    z_it = (x_t', −ε_0t, …, −ε_{i−1,t}, 1)'      (K_i = P·M + i + 1)
    β_it = β0_i + sqrtV_i ⊙ β̃_it,   β̃_it = β̃_i,t−1 + u_it,   β̃_i0 = 0

ε_jt = y_jt − A_j,t x_t − c_j,t 는 앞선 방정식의 축약형 잔차이고, −ε_j의
계수를 모으면 단위 하삼각 G = H⁻¹ 이 된다. 따라서 Ω_t = H Σ_t H'.

한 번의 스윕(gibbs_sweep): 방정식마다 상수 블록 → FFBS(TVP) → horseshoe → SV,
끝으로 결측 칸 보간(nowcast).

사용 예시:
    from sampler_core import SamplerConfig, run_chain
    store = run_chain(panel, SamplerConfig(draws=600, burn=200, thin=2), seed=7)
    store.save('out/cells/small-cp/realtime/2000-01/draws')
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from numerics import (
    NumericalError, VARIANCE_FLOOR, cholesky_lower, draw_from_precision,
    draw_gaussian, symmetrize,
)
from result_store import write_json_atomic
from stochastic_volatility import PriorConfig, SvState, draw_sv as _draw_sv_update, draw_sv_prior
from vintage_store import Panel

logger = logging.getLogger(__name__)

PRIOR_VARIANCE_FLOOR = 1e-30
INITIAL_SQRT_V = 0.01

__all__ = [
    'PriorConfig', 'SvState', 'draw_sv_prior', 'SamplerError', 'SamplerConfig',
    'EquationState', 'HorseshoeState', 'ChainState', 'ReducedForm', 'DrawStore',
    'equation_width', 'lagged_regressors', 'compose_equation', 'draw_constant_block',
    'ffbs_states', 'draw_horseshoe', 'draw_sv', 'gibbs_sweep', 'run_chain',
    'initial_state', 'reduced_form', 'reduced_form_at', 'structural_residuals',
    'log_likelihood',
]


class SamplerError(RuntimeError):
    """표본추출 실패. 실패한 스윕 번호를 담는다."""

    def __init__(self, message: str, sweep: Optional[int] = None):
        self.sweep = sweep
        if sweep is not None:
            message = f"스윕 {sweep}: {message}"
        super().__init__(message)


# ============================================================
# 설정
# ============================================================
@dataclass(frozen=True)
class SamplerConfig:
    draws: int = 6000
    burn: int = 2000
    thin: int = 2
    lags: int = 2
    time_varying: bool = True
    log_every: int = 1000
    prior: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self):
        if self.lags < 1:
            raise ValueError(f"lags는 1 이상이어야 합니다: {self.lags}")
        if self.thin < 1:
            raise ValueError(f"thin은 1 이상이어야 합니다: {self.thin}")
        if not 0 <= self.burn < self.draws:
            raise ValueError(f"0 <= burn < draws 여야 합니다: burn={self.burn}, draws={self.draws}")
        if self.log_every < 1:
            raise ValueError(f"log_every는 1 이상이어야 합니다: {self.log_every}")

    @property
    def retained(self) -> int:
        return len(range(self.burn, self.draws, self.thin))

    def keeps(self, sweep: int) -> bool:
        return sweep >= self.burn and (sweep - self.burn) % self.thin == 0

    def to_dict(self) -> dict:
        data = asdict(self)
        data['prior']['sv_phi_beta'] = list(self.prior.sv_phi_beta)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'SamplerConfig':
        data = dict(data)
        prior = data.pop('prior', None) or {}
        if 'sv_phi_beta' in prior:
            prior = dict(prior, sv_phi_beta=tuple(prior['sv_phi_beta']))
        return cls(prior=PriorConfig(**prior), **data)


# ============================================================
# 상태
# ============================================================
@dataclass
class EquationState:
    """
    beta0, sqrtV: K_i 벡터. tilde_path: (T′+1)×K_i, 0행은 초기 상태 β̃_0 = 0 고정.
    상수모수 모드에서는 sqrtV와 tilde_path가 모두 0이다.
    """
    beta0: np.ndarray
    sqrtV: np.ndarray
    tilde_path: np.ndarray

    @property
    def width(self) -> int:
        return self.beta0.shape[0]

    def coefficient_path(self) -> np.ndarray:
        """관측기 t = 1..T′의 β_it (T′×K_i)"""
        return self.beta0 + self.sqrtV * self.tilde_path[1:]

    def copy(self) -> 'EquationState':
        return EquationState(self.beta0.copy(), self.sqrtV.copy(), self.tilde_path.copy())


@dataclass
class HorseshoeState:
    lam: float
    psi: np.ndarray
    zeta: np.ndarray
    varphi: float

    @classmethod
    def initial(cls, size: int) -> 'HorseshoeState':
        return cls(1.0, np.ones(size), np.ones(size), 1.0)

    def prior_variances(self, size: Optional[int] = None) -> np.ndarray:
        psi = self.psi if size is None else self.psi[:size]
        return np.maximum(psi * self.lam, PRIOR_VARIANCE_FLOOR)

    def copy(self) -> 'HorseshoeState':
        return HorseshoeState(self.lam, self.psi.copy(), self.zeta.copy(), self.varphi)


@dataclass
class ChainState:
    """체인 하나가 소유하는 전체 상태. filled는 결측 칸이 현재 보간값으로 채워진 T×M."""
    equations: List[EquationState]
    shrinkage: List[HorseshoeState]
    vols: List[SvState]
    filled: np.ndarray
    mask: np.ndarray
    lags: int
    time_varying: bool
    rng: np.random.Generator

    @property
    def M(self) -> int:
        return self.filled.shape[1]

    @property
    def T_eff(self) -> int:
        return self.filled.shape[0] - self.lags

    @property
    def imputed(self) -> np.ndarray:
        return self.filled[~self.mask]


def equation_width(i: int, M: int, P: int) -> int:
    return P * M + i + 1


def initial_state(panel: Panel, lags: int, time_varying: bool,
                  rng: np.random.Generator) -> ChainState:
    T, M = panel.values.shape
    periods = T - lags
    if periods < 1:
        raise SamplerError(f"표본 길이 T={T}가 시차 P={lags}보다 길어야 합니다")
    equations, shrinkage, vols = [], [], []
    for i in range(M):
        width = equation_width(i, M, lags)
        sqrt_v = np.full(width, INITIAL_SQRT_V if time_varying else 0.0)
        equations.append(EquationState(np.zeros(width), sqrt_v, np.zeros((periods + 1, width))))
        shrinkage.append(HorseshoeState.initial(2 * width))
        vols.append(SvState.initial(periods))
    filled = np.where(panel.mask, panel.values, 0.0)
    return ChainState(equations, shrinkage, vols, filled, panel.mask.copy(), lags,
                      time_varying, rng)


# ============================================================
# 회귀식 구성
# ============================================================
def lagged_regressors(filled: np.ndarray, lags: int) -> Tuple[np.ndarray, np.ndarray]:
    """(Y, X): Y = filled[P:], X 행 = (y_{t−1}', …, y_{t−P}')"""
    T = filled.shape[0]
    Y = filled[lags:]
    X = np.hstack([filled[lags - p:T - p] for p in range(1, lags + 1)])
    return Y, X


def _reduced_residual(j: int, Y: np.ndarray, X: np.ndarray, state: ChainState) -> np.ndarray:
    path = state.equations[j].coefficient_path()
    lag_width = X.shape[1]
    return Y[:, j] - np.sum(path[:, :lag_width] * X, axis=1) - path[:, -1]


def compose_equation(i: int, filled: np.ndarray,
                     state: ChainState) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """방정식 i의 (y_i, Z_i, aug_Z_i). aug_Z 행 = (z', (β̃ ⊙ z)')"""
    Y, X = lagged_regressors(filled, state.lags)
    residuals = [_reduced_residual(j, Y, X, state) for j in range(i)]
    columns = [X] + [-r[:, None] for r in residuals] + [np.ones((Y.shape[0], 1))]
    Z = np.hstack(columns)
    if not np.all(np.isfinite(Z)):
        raise SamplerError(f"방정식 {i}: 회귀 변수에 유한하지 않은 값이 있습니다")
    tilde = state.equations[i].tilde_path[1:]
    aug_Z = np.hstack([Z, tilde * Z])
    return Y[:, i].copy(), Z, aug_Z


def structural_residuals(i: int, filled: np.ndarray, state: ChainState) -> np.ndarray:
    y, Z, _ = compose_equation(i, filled, state)
    return y - np.sum(Z * state.equations[i].coefficient_path(), axis=1)


# ============================================================
# 조건부 추출 단계
# ============================================================
def draw_constant_block(y: np.ndarray, aug_Z: np.ndarray, hs: HorseshoeState, sv: SvState,
                        rng: np.random.Generator,
                        time_varying: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    (β0, sqrtV)의 이분산 베이지안 회귀 사후 추출.
    사전분산 diag(ψλ), 관측분산 exp(h_t). 상수모수 모드는 앞 K_i개만 추출한다.
    """
    width = aug_Z.shape[1] // 2
    size = 2 * width if time_varying else width
    design = aug_Z[:, :size]
    obs_var = np.maximum(np.exp(sv.log_vol_path), VARIANCE_FLOOR)
    if design.shape[0] != obs_var.shape[0]:
        raise ValueError(f"관측 수 {design.shape[0]}와 로그분산 길이 {obs_var.shape[0]}가 다릅니다")

    precision = design.T @ (design / obs_var[:, None])
    precision[np.diag_indices(size)] += 1.0 / hs.prior_variances(size)
    linear = design.T @ (y / obs_var)
    block = draw_from_precision(precision, linear, rng, "상수 블록 사후 정밀도")
    if time_varying:
        return block[:width], block[width:]
    return block, np.zeros(width)


def ffbs_states(y: np.ndarray, Z: np.ndarray, beta0: np.ndarray, sqrtV: np.ndarray,
                sv: SvState, rng: np.random.Generator) -> np.ndarray:
    """
    β̃ 경로의 칼만 전진 필터 + 후진 표본추출. 상태 혁신 공분산은 I, β̃_0 = 0.
    반환값은 (T′+1)×K, 0행은 0.
    """
    periods, width = Z.shape
    path = np.zeros((periods + 1, width))
    if periods == 0:
        return path

    target = y - Z @ beta0
    loadings = Z * sqrtV
    obs_var = np.maximum(np.exp(sv.log_vol_path), VARIANCE_FLOOR)
    identity = np.eye(width)

    means = np.zeros((periods, width))
    covs = np.zeros((periods, width, width))
    mean = np.zeros(width)
    cov = np.zeros((width, width))
    for t in range(periods):
        pred_cov = cov + identity
        c = loadings[t]
        pc = pred_cov @ c
        innovation_var = float(c @ pc) + obs_var[t]
        if not innovation_var > 0:
            raise NumericalError(f"칼만 필터 {t}기 예측오차 분산이 양수가 아닙니다")
        gain = pc / innovation_var
        mean = mean + gain * (target[t] - c @ mean)
        cov = symmetrize(pred_cov - np.outer(gain, pc))
        means[t] = mean
        covs[t] = cov

    path[periods] = draw_gaussian(means[-1], covs[-1], rng)
    for t in range(periods - 2, -1, -1):
        cov = covs[t]
        lower = cholesky_lower(cov + identity, "평활 공분산")
        smoother = linalg.cho_solve((lower, True), cov)
        cond_mean = means[t] + smoother.T @ (path[t + 2] - means[t])
        cond_cov = symmetrize(cov - smoother.T @ cov)
        path[t + 1] = draw_gaussian(cond_mean, cond_cov, rng)
    return path


def _inverse_gamma(shape, scale, rng: np.random.Generator):
    return scale / rng.standard_gamma(shape, size=np.shape(scale) or None)


def draw_horseshoe(b: np.ndarray, hs: HorseshoeState, rng: np.random.Generator,
                   aux_scale: float = 1.0) -> HorseshoeState:
    """
    역감마 보조변수 표현의 horseshoe 조건부 추출 (ψ → λ → ζ → φ 순).
    b 길이 D만큼의 국소 척도를 갱신하고 나머지 칸은 그대로 둔다.
    """
    b = np.asarray(b, dtype=float)
    dim = b.shape[0]
    psi = hs.psi.copy()
    zeta = hs.zeta.copy()
    squares = b ** 2

    psi[:dim] = _inverse_gamma(1.0, 1.0 / zeta[:dim] + squares / (2.0 * hs.lam), rng)
    lam = float(_inverse_gamma((dim + 1) / 2.0, 1.0 / hs.varphi + 0.5 * np.sum(squares / psi[:dim]), rng))
    zeta[:dim] = _inverse_gamma(1.0, 1.0 / aux_scale + psi[:dim] ** -2, rng)
    varphi = float(_inverse_gamma(1.0, 1.0 / aux_scale + lam ** -2, rng))
    return HorseshoeState(lam, psi, zeta, varphi)


def draw_sv(residuals: np.ndarray, sv: SvState, prior: PriorConfig,
            rng: np.random.Generator) -> SvState:
    return _draw_sv_update(residuals, sv, prior, rng)


def gibbs_sweep(state: ChainState, panel: Panel, cfg: SamplerConfig) -> ChainState:
    """방정식 0..M−1 순서로 한 번 갱신한 뒤 결측 칸을 보간한다. state를 직접 바꾼다."""
    rng = state.rng
    for i in range(state.M):
        equation = state.equations[i]
        y, Z, aug_Z = compose_equation(i, state.filled, state)
        beta0, sqrt_v = draw_constant_block(
            y, aug_Z, state.shrinkage[i], state.vols[i], rng, state.time_varying
        )
        equation.beta0, equation.sqrtV = beta0, sqrt_v
        if state.time_varying:
            equation.tilde_path = ffbs_states(y, Z, beta0, sqrt_v, state.vols[i], rng)
            block = np.concatenate([beta0, sqrt_v])
        else:
            block = beta0
        state.shrinkage[i] = draw_horseshoe(
            block, state.shrinkage[i], rng, cfg.prior.horseshoe_aux_scale
        )
        residuals = y - np.sum(Z * equation.coefficient_path(), axis=1)
        state.vols[i] = draw_sv(residuals, state.vols[i], cfg.prior, rng)

    if np.any(~state.mask):
        from nowcast import impute_ragged_edge
        impute_ragged_edge(state, panel, rng)
    return state


# ============================================================
# 축약형
# ============================================================
@dataclass(frozen=True)
class ReducedForm:
    A: np.ndarray          # M×PM, (A_1, …, A_P)
    intercept: np.ndarray  # M
    H: np.ndarray          # M×M 단위 하삼각
    Sigma: np.ndarray      # M, 구조 오차 분산
    Omega: np.ndarray      # M×M = H diag(Σ) H'

    @property
    def lags(self) -> int:
        return self.A.shape[1] // self.A.shape[0]

    def blocks(self) -> np.ndarray:
        """P×M×M 시차 계수 행렬"""
        M = self.A.shape[0]
        return np.stack([self.A[:, p * M:(p + 1) * M] for p in range(self.lags)])


def reduced_form(coefficients: Sequence[np.ndarray], log_vols: Sequence[float],
                 lags: int) -> ReducedForm:
    """방정식별 β 벡터와 로그분산으로 축약형 (A, c, H, Σ, Ω)를 복원한다."""
    M = len(coefficients)
    lag_width = lags * M
    A = np.zeros((M, lag_width))
    intercept = np.zeros(M)
    G = np.eye(M)
    for i, beta in enumerate(coefficients):
        A[i] = beta[:lag_width]
        G[i, :i] = beta[lag_width:lag_width + i]
        intercept[i] = beta[lag_width + i]
    H = linalg.solve_triangular(G, np.eye(M), lower=True, unit_diagonal=True)
    sigma = np.maximum(np.exp(np.asarray(log_vols, dtype=float)), VARIANCE_FLOOR)
    omega = symmetrize((H * sigma) @ H.T)
    return ReducedForm(A, intercept, H, sigma, omega)


def reduced_form_at(state: ChainState, t: int) -> ReducedForm:
    """관측기 t (0 ≤ t < T′, 패널 행 P+t)의 축약형"""
    if not 0 <= t < state.T_eff:
        raise IndexError(f"관측기 {t}가 범위 [0, {state.T_eff})를 벗어납니다")
    coefficients = [eq.beta0 + eq.sqrtV * eq.tilde_path[t + 1] for eq in state.equations]
    log_vols = [sv.log_vol_path[t] for sv in state.vols]
    return reduced_form(coefficients, log_vols, state.lags)


def log_likelihood(state: ChainState, filled: Optional[np.ndarray] = None) -> float:
    """현재 상태에서 구조 오차의 가우스 로그우도 합"""
    filled = state.filled if filled is None else filled
    total = 0.0
    for i in range(state.M):
        eta = structural_residuals(i, filled, state)
        log_var = state.vols[i].log_vol_path
        total += float(-0.5 * np.sum(np.log(2.0 * np.pi) + log_var + eta ** 2 / np.exp(log_var)))
    return total


# ============================================================
# 추출 저장소
# ============================================================
_STORE_ARRAYS = (
    'A', 'intercept', 'H', 'Sigma', 'Omega',
    'sv_mu', 'sv_phi', 'sv_sigma', 'log_vol_T', 'imputed', 'Y_T',
)


@dataclass(frozen=True)
class DrawStore:
    """보존된 S개 추출. A: S×P×M×M, Y_T: S×P×M (0번째가 최근 관측)."""
    A: np.ndarray
    intercept: np.ndarray
    H: np.ndarray
    Sigma: np.ndarray
    Omega: np.ndarray
    sv_mu: np.ndarray
    sv_phi: np.ndarray
    sv_sigma: np.ndarray
    log_vol_T: np.ndarray
    imputed: np.ndarray
    Y_T: np.ndarray
    missing_cells: np.ndarray
    series_codes: Tuple[str, ...]
    last_period: str
    seed: Optional[int] = None
    config_hash: str = ''

    @property
    def S(self) -> int:
        return self.A.shape[0]

    @property
    def M(self) -> int:
        return self.A.shape[2]

    @property
    def lags(self) -> int:
        return self.A.shape[1]

    def manifest(self) -> dict:
        return {
            'S': self.S,
            'M': self.M,
            'lags': self.lags,
            'series_codes': list(self.series_codes),
            'last_period': self.last_period,
            'seed': self.seed,
            'config_hash': self.config_hash,
            'files': [f"{name}.npy" for name in _STORE_ARRAYS + ('missing_cells',)],
        }

    def digest(self) -> str:
        sha = hashlib.sha256()
        for name in _STORE_ARRAYS + ('missing_cells',):
            array = np.ascontiguousarray(getattr(self, name))
            sha.update(name.encode())
            sha.update(str(array.shape).encode())
            sha.update(array.tobytes())
        sha.update(json.dumps(self.manifest(), sort_keys=True).encode())
        return sha.hexdigest()

    def save(self, directory: Union[str, os.PathLike]) -> None:
        os.makedirs(directory, exist_ok=True)
        for name in _STORE_ARRAYS + ('missing_cells',):
            np.save(os.path.join(directory, f"{name}.npy"), getattr(self, name))
        write_json_atomic(os.path.join(directory, 'manifest.json'), self.manifest())

    @classmethod
    def load(cls, directory: Union[str, os.PathLike]) -> 'DrawStore':
        with open(os.path.join(directory, 'manifest.json'), encoding='utf-8') as f:
            manifest = json.load(f)
        arrays = {
            name: np.load(os.path.join(directory, f"{name}.npy"))
            for name in _STORE_ARRAYS + ('missing_cells',)
        }
        return cls(
            series_codes=tuple(manifest['series_codes']),
            last_period=manifest['last_period'],
            seed=manifest.get('seed'),
            config_hash=manifest.get('config_hash', ''),
            **arrays,
        )


class _DrawRecorder:
    def __init__(self, retained: int, M: int, lags: int, missing_cells: np.ndarray):
        self.index = 0
        self.missing_cells = missing_cells
        self.arrays = {
            'A': np.zeros((retained, lags, M, M)),
            'intercept': np.zeros((retained, M)),
            'H': np.zeros((retained, M, M)),
            'Sigma': np.zeros((retained, M)),
            'Omega': np.zeros((retained, M, M)),
            'sv_mu': np.zeros((retained, M)),
            'sv_phi': np.zeros((retained, M)),
            'sv_sigma': np.zeros((retained, M)),
            'log_vol_T': np.zeros((retained, M)),
            'imputed': np.zeros((retained, missing_cells.shape[0])),
            'Y_T': np.zeros((retained, lags, M)),
        }

    def record(self, state: ChainState) -> None:
        s = self.index
        form = reduced_form_at(state, state.T_eff - 1)
        out = self.arrays
        out['A'][s] = form.blocks()
        out['intercept'][s] = form.intercept
        out['H'][s] = form.H
        out['Sigma'][s] = form.Sigma
        out['Omega'][s] = form.Omega
        out['sv_mu'][s] = [sv.mu for sv in state.vols]
        out['sv_phi'][s] = [sv.phi for sv in state.vols]
        out['sv_sigma'][s] = [sv.sigma_eta for sv in state.vols]
        out['log_vol_T'][s] = [sv.log_vol_path[-1] for sv in state.vols]
        if self.missing_cells.shape[0]:
            rows, cols = self.missing_cells[:, 0], self.missing_cells[:, 1]
            out['imputed'][s] = state.filled[rows, cols]
        T = state.filled.shape[0]
        out['Y_T'][s] = state.filled[T - 1:T - 1 - state.lags:-1]
        self.index += 1


def _check_finite(state: ChainState, sweep: int) -> None:
    for i, (eq, sv) in enumerate(zip(state.equations, state.vols)):
        if not (np.all(np.isfinite(eq.beta0)) and np.all(np.isfinite(eq.sqrtV))
                and np.all(np.isfinite(eq.tilde_path)) and np.all(np.isfinite(sv.log_vol_path))):
            raise SamplerError(f"방정식 {i} 상태에 유한하지 않은 값이 생겼습니다", sweep)
    if not np.all(np.isfinite(state.filled)):
        raise SamplerError("보간값에 유한하지 않은 값이 생겼습니다", sweep)


def run_chain(panel: Panel, cfg: SamplerConfig, seed: int,
              config_hash: str = '') -> DrawStore:
    """체인 하나를 돌려 보존 추출을 DrawStore로 모은다."""
    rng = np.random.default_rng(seed)
    state = initial_state(panel, cfg.lags, cfg.time_varying, rng)
    missing = np.argwhere(~panel.mask)
    recorder = _DrawRecorder(cfg.retained, panel.M, cfg.lags, missing)
    logger.info(
        "체인 시작: T=%d, M=%d, P=%d, %s, 스윕 %d (번인 %d, 간격 %d → S=%d)",
        panel.T, panel.M, cfg.lags, 'TVP' if cfg.time_varying else '상수모수',
        cfg.draws, cfg.burn, cfg.thin, cfg.retained,
    )

    for sweep in range(cfg.draws):
        try:
            gibbs_sweep(state, panel, cfg)
        except SamplerError as exc:
            if exc.sweep is None:
                raise SamplerError(str(exc), sweep) from exc
            raise
        except (NumericalError, FloatingPointError, ValueError) as exc:
            raise SamplerError(str(exc), sweep) from exc
        _check_finite(state, sweep)
        if cfg.keeps(sweep):
            recorder.record(state)
        if (sweep + 1) % cfg.log_every == 0:
            logger.info("스윕 %d/%d 완료", sweep + 1, cfg.draws)

    return DrawStore(
        missing_cells=missing,
        series_codes=panel.series_codes,
        last_period=str(panel.period_index[-1]),
        seed=seed,
        config_hash=config_hash,
        **recorder.arrays,
    )
