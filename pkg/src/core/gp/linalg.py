"""
Linear Algebra Module

수치적으로 안정적인 Gaussian / multivariate-normal 기본 연산을 제공합니다.
모든 선형 시스템 풀이는 safe_cholesky 를 거치며, 명시적 역행렬은 사용하지 않습니다.
"""

from typing import List, NamedTuple, Optional, Sequence, Tuple, Union
import math
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import linalg

from src.core.exceptions import DomainError, NonPSDError
from src.core.gp.kernels import NoiseParams

# Configure logging
logger = logging.getLogger(__name__)

# Module tolerances (tests may override)
SYMMETRY_TOL = 1e-10
RECONSTRUCTION_RTOL = 1e-5
JITTER_SCHEDULE: Tuple[float, ...] = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)

LOG_2PI = math.log(2.0 * math.pi)


class GaussianDist(BaseModel):
    """Gaussian belief: mean vector and covariance matrix"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mean: np.ndarray
    covariance: np.ndarray

    @field_validator("mean", mode="before")
    @classmethod
    def _mean_vector(cls, value) -> np.ndarray:
        array = np.array(value, dtype=float).reshape(-1)
        array.setflags(write=False)
        return array

    @field_validator("covariance", mode="before")
    @classmethod
    def _covariance_matrix(cls, value) -> np.ndarray:
        array = np.array(value, dtype=float)
        if array.size == 0:
            array = array.reshape(0, 0)
        if array.ndim != 2 or array.shape[0] != array.shape[1]:
            raise ValueError(f"covariance must be square, got shape {array.shape}")
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def _consistent(self) -> "GaussianDist":
        if self.mean.shape[0] != self.covariance.shape[0]:
            raise ValueError(
                f"mean length {self.mean.shape[0]} != covariance dimension {self.covariance.shape[0]}"
            )
        if self.covariance.size and np.max(np.abs(self.covariance - self.covariance.T)) > SYMMETRY_TOL:
            raise ValueError("covariance is not symmetric")
        return self

    @property
    def dimension(self) -> int:
        return int(self.mean.shape[0])

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.covariance).copy()

    def marginal(self, indices: Sequence[int]) -> "GaussianDist":
        """Marginal belief over a subset of indices (in the given order)"""
        idx = np.asarray(indices, dtype=int)
        return GaussianDist(mean=self.mean[idx], covariance=self.covariance[np.ix_(idx, idx)])


class CholeskyResult(NamedTuple):
    """Lower factor L with L L^T = matrix + jitter * I"""

    factor: np.ndarray
    jitter: float


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    """Average with the transpose (removes round-off asymmetry)"""
    return 0.5 * (matrix + matrix.T)


def safe_cholesky(matrix: Union[np.ndarray, Sequence[Sequence[float]]]) -> CholeskyResult:
    """
    Cholesky factorization with an escalating diagonal jitter

    Jitter schedule: {0, 1e-10, 1e-8, 1e-6, 1e-4} * mean(diag(matrix)).
    가장 작은 jitter 로 성공한 결과를 반환합니다.

    Args:
        matrix: 대칭 행렬 (절대 허용오차 1e-10)

    Returns:
        CholeskyResult: 하삼각 factor 와 사용된 jitter

    Raises:
        DomainError: 정방/대칭/유한 조건 위반
        NonPSDError: 최대 jitter 에서도 실패
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"Cholesky requires a square matrix, got shape {m.shape}")
    n = m.shape[0]
    if n == 0:
        return CholeskyResult(np.zeros((0, 0)), 0.0)
    if not np.all(np.isfinite(m)):
        raise NonPSDError(n, [], reason="non-finite entries")
    if np.max(np.abs(m - m.T)) > SYMMETRY_TOL:
        raise DomainError(f"Cholesky requires a symmetric matrix (tolerance {SYMMETRY_TOL})")

    scale = float(np.mean(np.diag(m)))
    attempted: List[float] = []
    identity = np.eye(n)

    for factor in JITTER_SCHEDULE:
        jitter = factor * scale
        if factor > 0 and not jitter > 0:
            break
        attempted.append(jitter)
        try:
            lower = linalg.cholesky(m + jitter * identity, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if jitter > 0:
            logger.debug(f"Cholesky of {n}x{n} matrix needed jitter {jitter:.3e}")
        return CholeskyResult(lower, jitter)

    raise NonPSDError(n, attempted)


def cholesky_solve(chol: CholeskyResult, rhs: np.ndarray) -> np.ndarray:
    """Solve (matrix + jitter I) x = rhs with a precomputed factor"""
    if chol.factor.shape[0] == 0:
        return np.zeros_like(np.asarray(rhs, dtype=float))
    return linalg.cho_solve((chol.factor, True), rhs, check_finite=False)


def log_determinant(chol: CholeskyResult) -> float:
    return float(2.0 * np.sum(np.log(np.diag(chol.factor))))


def mvn_logpdf(y: Sequence[float], dist: GaussianDist) -> float:
    """
    Multivariate normal log-density evaluated through safe_cholesky

    -1/2 (y-mu)^T S^-1 (y-mu) - 1/2 logdet(S) - n/2 log(2 pi)
    """
    values = np.asarray(y, dtype=float).reshape(-1)
    if values.shape[0] != dist.dimension:
        raise DomainError(f"y has length {values.shape[0]}, distribution has dimension {dist.dimension}")
    chol = safe_cholesky(dist.covariance)
    residual = values - dist.mean
    whitened = linalg.solve_triangular(chol.factor, residual, lower=True, check_finite=False)
    n = values.shape[0]
    return float(-0.5 * whitened @ whitened - 0.5 * log_determinant(chol) - 0.5 * n * LOG_2PI)


def gp_condition(
    joint: GaussianDist,
    observed_indices: Sequence[int],
    observed_values: Sequence[float],
    observation_noise: NoiseParams
) -> GaussianDist:
    """
    Condition a joint Gaussian on noisy observations of some of its coordinates

    Noise variance is added to the observed block diagonal only.
    결과는 관측되지 않은 좌표(A)에 대한 분포이며, 원래 순서를 유지합니다.

    Args:
        joint: A ∪ B 에 대한 결합 분포
        observed_indices: B 의 인덱스
        observed_values: B 에서 관측된 값
        observation_noise: 관측 노이즈

    Returns:
        GaussianDist: A 에 대한 조건부 분포
    """
    b_idx = np.asarray(observed_indices, dtype=int).reshape(-1)
    y_b = np.asarray(observed_values, dtype=float).reshape(-1)
    if b_idx.size == 0:
        raise DomainError("gp_condition requires at least one observed index")
    if b_idx.shape[0] != y_b.shape[0]:
        raise DomainError("observed_indices and observed_values differ in length")
    if len(set(b_idx.tolist())) != b_idx.size or b_idx.min() < 0 or b_idx.max() >= joint.dimension:
        raise DomainError("observed_indices must be unique and within the joint dimension")

    mask = np.ones(joint.dimension, dtype=bool)
    mask[b_idx] = False
    a_idx = np.flatnonzero(mask)

    cov = joint.covariance
    s_bb = cov[np.ix_(b_idx, b_idx)] + observation_noise.noise_variance * np.eye(b_idx.size)
    s_ab = cov[np.ix_(a_idx, b_idx)]
    chol = safe_cholesky(s_bb)

    alpha = cholesky_solve(chol, y_b - joint.mean[b_idx])
    mean_a = joint.mean[a_idx] + s_ab @ alpha
    v = linalg.solve_triangular(chol.factor, s_ab.T, lower=True, check_finite=False)
    cov_a = symmetrize(cov[np.ix_(a_idx, a_idx)] - v.T @ v)
    return GaussianDist(mean=mean_a, covariance=cov_a)


def sample_mvn(
    dist: GaussianDist,
    rng: np.random.Generator,
    size: Optional[int] = None
) -> np.ndarray:
    """
    Draw from a Gaussian through its (jittered) Cholesky factor

    Returns:
        np.ndarray: shape (n,) or (size, n)
    """
    chol = safe_cholesky(dist.covariance)
    n = dist.dimension
    if size is None:
        return dist.mean + chol.factor @ rng.standard_normal(n)
    z = rng.standard_normal((size, n))
    return dist.mean[None, :] + z @ chol.factor.T
