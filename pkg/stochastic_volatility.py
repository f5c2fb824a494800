"""
확률적 변동성 (SV) 표본추출
==========================
방정식별 로그분산 h_t = log σ_t 의 AR(1) 모형:

    h_t = μ + φ(h_{t-1} − μ) + ς ξ_t,   ξ_t ~ N(0, 1)
    h_0 ~ N(μ, ς²/(1−φ²))               (정상분포)

사전분포: μ ~ N(0, 100), (φ+1)/2 ~ Beta(25, 5), ±ς ~ N(0, 1).

한 번의 갱신(draw_sv)은 다음 순서로 진행된다.
1. log(η² + 1e-10)을 log χ²₁ 의 10성분 정규혼합으로 근사, 성분 지시변수 추출
2. 삼대각 정밀도 행렬의 밴드 Cholesky로 (h_0, …, h_T) 경로를 한 번에 추출
3. 중심화 모수화에서 ς²(일반화 역가우스 분포), φ(MH), μ(정규) 갱신
4. 비중심화 모수화로 옮겨 (μ, ς)를 정규 회귀로 다시 추출 (ASIS 교차 단계)
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, Tuple

import numpy as np
from scipy import linalg, stats

logger = logging.getLogger(__name__)

# log χ²₁ 근사 10성분 혼합 (가중치, 평균, 분산)
MIXTURE_PROB = np.array([
    0.00609, 0.04775, 0.13057, 0.20674, 0.22715,
    0.18842, 0.12047, 0.05591, 0.01575, 0.00115,
])
MIXTURE_MEAN = np.array([
    1.92677, 1.34744, 0.73504, 0.02266, -0.85173,
    -1.97278, -3.46788, -5.55246, -8.68384, -14.65000,
])
MIXTURE_VAR = np.array([
    0.11265, 0.17788, 0.26768, 0.40611, 0.62699,
    0.98583, 1.57469, 2.54498, 4.16591, 7.33342,
])
LOG_SQUARE_OFFSET = 1e-10
MIN_SIGMA_ETA = 1e-8
MIN_GIG_RATE = 1e-12


@dataclass(frozen=True)
class PriorConfig:
    """SV 사전분포와 horseshoe 보조변수 초모수"""
    sv_mu_mean: float = 0.0
    sv_mu_var: float = 100.0
    sv_phi_beta: Tuple[float, float] = (25.0, 5.0)
    sv_sigma_prior_var: float = 1.0
    horseshoe_aux_scale: float = 1.0

    def __post_init__(self):
        a, b = self.sv_phi_beta
        positives = {
            'sv_mu_var': self.sv_mu_var,
            'sv_phi_beta[0]': a,
            'sv_phi_beta[1]': b,
            'sv_sigma_prior_var': self.sv_sigma_prior_var,
            'horseshoe_aux_scale': self.horseshoe_aux_scale,
        }
        for name, value in positives.items():
            if not value > 0:
                raise ValueError(f"사전분포 초모수 {name}는 양수여야 합니다: {value}")
        object.__setattr__(self, 'sv_phi_beta', (float(a), float(b)))


@dataclass
class SvState:
    """방정식 하나의 SV 상태. log_vol_path[t]는 관측기 t의 로그분산."""
    mu: float
    phi: float
    sigma_eta: float
    log_vol_path: np.ndarray
    log_vol_init: float = 0.0

    def __post_init__(self):
        if not -1.0 < self.phi < 1.0:
            raise ValueError(f"SV 지속성 φ는 (−1, 1) 안에 있어야 합니다: {self.phi}")
        if not self.sigma_eta > 0:
            raise ValueError(f"SV 혁신 표준편차는 양수여야 합니다: {self.sigma_eta}")
        self.log_vol_path = np.asarray(self.log_vol_path, dtype=float)

    @classmethod
    def initial(cls, periods: int, mu: float = 0.0, phi: float = 0.9,
                sigma_eta: float = 0.2) -> 'SvState':
        return cls(mu, phi, sigma_eta, np.full(periods, mu), mu)

    def copy(self) -> 'SvState':
        return replace(self, log_vol_path=self.log_vol_path.copy())

    def variances(self) -> np.ndarray:
        return np.exp(self.log_vol_path)

    def step(self, log_vol: float, rng: np.random.Generator) -> float:
        """AR(1) 운동법칙으로 한 기 앞 로그분산을 추출한다."""
        return self.mu + self.phi * (log_vol - self.mu) + self.sigma_eta * rng.standard_normal()


def log_squared_residuals(residuals: np.ndarray, offset: float = LOG_SQUARE_OFFSET) -> np.ndarray:
    residuals = np.asarray(residuals, dtype=float)
    return np.log(residuals ** 2 + offset)


def sample_mixture_indicators(ystar: np.ndarray, log_vol: np.ndarray,
                              rng: np.random.Generator) -> np.ndarray:
    gap = (ystar - log_vol)[:, None] - MIXTURE_MEAN[None, :]
    log_weight = np.log(MIXTURE_PROB) - 0.5 * np.log(MIXTURE_VAR) - 0.5 * gap ** 2 / MIXTURE_VAR
    log_weight -= log_weight.max(axis=1, keepdims=True)
    weight = np.exp(log_weight)
    cumulative = np.cumsum(weight, axis=1)
    cumulative /= cumulative[:, -1:]
    uniform = rng.random(ystar.shape[0])
    indicators = (cumulative < uniform[:, None]).sum(axis=1)
    return np.minimum(indicators, MIXTURE_PROB.shape[0] - 1)


def sample_log_vol_path(ystar: np.ndarray, indicators: np.ndarray, mu: float, phi: float,
                        sigma_eta: float, rng: np.random.Generator) -> Tuple[float, np.ndarray]:
    """조건부 선형 가우스 모형에서 (h_0, h_1..h_T)를 결합 추출한다."""
    periods = ystar.shape[0]
    size = periods + 1
    inv_var = 1.0 / sigma_eta ** 2

    diagonal = np.full(size, (1.0 + phi ** 2) * inv_var)
    diagonal[0] = inv_var if periods else (1.0 - phi ** 2) * inv_var
    if periods:
        diagonal[-1] = inv_var
    linear = np.zeros(size)

    obs_var = MIXTURE_VAR[indicators]
    diagonal[1:] += 1.0 / obs_var
    linear[1:] = (ystar - MIXTURE_MEAN[indicators] - mu) / obs_var

    banded = np.zeros((2, size))
    banded[1] = diagonal
    banded[0, 1:] = -phi * inv_var
    upper = linalg.cholesky_banded(banded, lower=False)
    mean = linalg.cho_solve_banded((upper, False), linear)
    noise = linalg.solve_banded((0, 1), upper, rng.standard_normal(size))
    path = mu + mean + noise
    return float(path[0]), path[1:]


def _log_beta_prior(phi: float, prior: PriorConfig) -> float:
    a, b = prior.sv_phi_beta
    return (a - 1.0) * np.log((1.0 + phi) / 2.0) + (b - 1.0) * np.log((1.0 - phi) / 2.0)


def _log_initial_density(deviation: float, phi: float, sigma_eta: float) -> float:
    stationary_var = sigma_eta ** 2 / (1.0 - phi ** 2)
    return -0.5 * np.log(stationary_var) - 0.5 * deviation ** 2 / stationary_var


def sample_centered_parameters(log_vol_init: float, log_vol: np.ndarray, sv: SvState,
                               prior: PriorConfig, rng: np.random.Generator) -> Tuple[float, float, float]:
    """중심화 모수화에서 ς, φ, μ 순으로 갱신한다."""
    mu, phi = sv.mu, sv.phi
    previous = np.concatenate([[log_vol_init], log_vol[:-1]])
    periods = log_vol.shape[0]

    # ς² | h, μ, φ ~ GIG(1/2 − n/2, 1/B, S)
    innovations = (log_vol - mu) - phi * (previous - mu)
    rate = (1.0 - phi ** 2) * (log_vol_init - mu) ** 2 + float(np.sum(innovations ** 2))
    rate = max(rate, MIN_GIG_RATE)
    shape = 0.5 - 0.5 * (periods + 1)
    a = 1.0 / prior.sv_sigma_prior_var
    variance = stats.geninvgauss.rvs(
        shape, np.sqrt(a * rate), scale=np.sqrt(rate / a), random_state=rng
    )
    sigma_eta = max(float(np.sqrt(variance)), MIN_SIGMA_ETA)

    # φ | h, μ, ς : AR 우도 제안분포 + (Beta 사전 × 초기상태) MH 보정
    dev = log_vol - mu
    dev_prev = previous - mu
    energy = float(np.sum(dev_prev ** 2))
    if periods and energy > 0:
        proposal_mean = float(np.sum(dev_prev * dev)) / energy
        proposal = proposal_mean + sigma_eta / np.sqrt(energy) * rng.standard_normal()
        if -1.0 < proposal < 1.0:
            init_dev = log_vol_init - mu
            log_ratio = (
                _log_beta_prior(proposal, prior) + _log_initial_density(init_dev, proposal, sigma_eta)
                - _log_beta_prior(phi, prior) - _log_initial_density(init_dev, phi, sigma_eta)
            )
            if np.log(rng.random()) < log_ratio:
                phi = float(proposal)

    # μ | h, φ, ς ~ 정규
    inv_var = 1.0 / sigma_eta ** 2
    precision = (
        1.0 / prior.sv_mu_var
        + (1.0 - phi ** 2) * inv_var
        + periods * (1.0 - phi) ** 2 * inv_var
    )
    linear = (
        prior.sv_mu_mean / prior.sv_mu_var
        + (1.0 - phi ** 2) * log_vol_init * inv_var
        + (1.0 - phi) * float(np.sum(log_vol - phi * previous)) * inv_var
    )
    mu = linear / precision + rng.standard_normal() / np.sqrt(precision)
    return float(mu), float(phi), sigma_eta


def interweave_noncentered(ystar: np.ndarray, indicators: np.ndarray, log_vol_init: float,
                           log_vol: np.ndarray, mu: float, sigma_eta: float,
                           prior: PriorConfig, rng: np.random.Generator) -> Tuple[float, float, float, np.ndarray]:
    """
    비중심화 상태 h̃ = (h − μ)/ς 를 고정하고 (μ, ±ς)를 정규 회귀로 재추출한다.
    음수 ς는 h̃ 부호 반전과 같으므로 |ς|로 저장하며 h 경로는 그대로 대응된다.
    """
    if log_vol.shape[0] == 0:
        return mu, sigma_eta, log_vol_init, log_vol
    standard_init = (log_vol_init - mu) / sigma_eta
    standard = (log_vol - mu) / sigma_eta

    weights = 1.0 / MIXTURE_VAR[indicators]
    target = ystar - MIXTURE_MEAN[indicators]
    design = np.column_stack([np.ones_like(standard), standard])
    precision = design.T @ (design * weights[:, None])
    precision[0, 0] += 1.0 / prior.sv_mu_var
    precision[1, 1] += 1.0 / prior.sv_sigma_prior_var
    linear = design.T @ (weights * target)
    linear[0] += prior.sv_mu_mean / prior.sv_mu_var

    lower = linalg.cholesky(precision, lower=True)
    mean = linalg.cho_solve((lower, True), linear)
    draw = mean + linalg.solve_triangular(lower.T, rng.standard_normal(2), lower=False)
    new_mu, signed_sigma = float(draw[0]), float(draw[1])

    new_init = new_mu + signed_sigma * standard_init
    new_path = new_mu + signed_sigma * standard
    return new_mu, max(abs(signed_sigma), MIN_SIGMA_ETA), float(new_init), new_path


def draw_sv(residuals: np.ndarray, sv: SvState, prior: PriorConfig,
            rng: np.random.Generator) -> SvState:
    """구조 오차 η_t가 주어졌을 때 SV 경로와 (μ, φ, ς)를 한 번 갱신한다."""
    ystar = log_squared_residuals(residuals)
    if ystar.shape[0] != sv.log_vol_path.shape[0]:
        raise ValueError(
            f"잔차 길이 {ystar.shape[0]}와 로그분산 경로 길이 {sv.log_vol_path.shape[0]}가 다릅니다"
        )
    indicators = sample_mixture_indicators(ystar, sv.log_vol_path, rng)
    log_vol_init, log_vol = sample_log_vol_path(ystar, indicators, sv.mu, sv.phi, sv.sigma_eta, rng)
    mu, phi, sigma_eta = sample_centered_parameters(log_vol_init, log_vol, sv, prior, rng)
    mu, sigma_eta, log_vol_init, log_vol = interweave_noncentered(
        ystar, indicators, log_vol_init, log_vol, mu, sigma_eta, prior, rng
    )
    return SvState(mu, phi, sigma_eta, log_vol, log_vol_init)


def draw_sv_prior(prior: PriorConfig, rng: np.random.Generator, size: int) -> Dict[str, np.ndarray]:
    """사전분포에서 (μ, φ, ς)를 size개 추출한다."""
    a, b = prior.sv_phi_beta
    return {
        'mu': prior.sv_mu_mean + np.sqrt(prior.sv_mu_var) * rng.standard_normal(size),
        'phi': 2.0 * rng.beta(a, b, size) - 1.0,
        'sigma_eta': np.abs(np.sqrt(prior.sv_sigma_prior_var) * rng.standard_normal(size)),
    }
