"""
공통 수치 유틸리티
==================
- Cholesky 분해 실패 시 1e-8 지터를 한 번 더해 재시도
- 양의 준정부호 행렬의 인수(factor) 계산 (영행렬 허용)
- 정밀도 행렬 기반 가우시안 추출

표본추출기, nowcast, 예측 엔진, 점수 계산이 같은 안전장치를 공유한다.
"""

import logging

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

CHOLESKY_JITTER = 1e-8
VARIANCE_FLOOR = 1e-12


class NumericalError(RuntimeError):
    """지터를 더한 뒤에도 행렬 분해가 실패했을 때 발생한다."""


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def cholesky_lower(matrix: np.ndarray, what: str = "행렬") -> np.ndarray:
    """하삼각 Cholesky 인수. 실패하면 대각에 지터를 더해 한 번만 재시도한다."""
    matrix = symmetrize(np.asarray(matrix, dtype=float))
    try:
        return linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError:
        scale = max(1.0, float(np.max(np.abs(np.diag(matrix)))) if matrix.size else 1.0)
        jittered = matrix + CHOLESKY_JITTER * scale * np.eye(matrix.shape[0])
        logger.debug("%s Cholesky 실패 - 지터 %.1e 추가 후 재시도", what, CHOLESKY_JITTER)
        try:
            return linalg.cholesky(jittered, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"{what}이(가) 양의 정부호가 아닙니다: {exc}") from exc


def psd_factor(matrix: np.ndarray) -> np.ndarray:
    """L L' = matrix 인 인수. 특이·영행렬이면 고유분해로 대체한다."""
    matrix = symmetrize(np.asarray(matrix, dtype=float))
    if not np.any(matrix):
        return np.zeros_like(matrix)
    try:
        return linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError:
        eigval, eigvec = linalg.eigh(matrix)
        return eigvec * np.sqrt(np.clip(eigval, 0.0, None))


def draw_gaussian(mean: np.ndarray, cov: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    factor = psd_factor(cov)
    return mean + factor @ rng.standard_normal(mean.shape[0])


def draw_from_precision(precision: np.ndarray, linear: np.ndarray,
                        rng: np.random.Generator,
                        what: str = "사후 정밀도") -> np.ndarray:
    """N(Q⁻¹ b, Q⁻¹) 한 번 추출. Q = L L' 이면 평균은 두 번의 삼각 해로 얻는다."""
    lower = cholesky_lower(precision, what)
    mean = linalg.cho_solve((lower, True), linear)
    noise = linalg.solve_triangular(
        lower.T, rng.standard_normal(linear.shape[0]), lower=False
    )
    return mean + noise
