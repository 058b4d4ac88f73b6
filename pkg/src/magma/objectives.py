"""
Objectives Module

M-step 목적함수(평균 과정 / 개체별), 신규 개체 HP 목적함수와 해석적 gradient,
그리고 log-parameter 공간의 L-BFGS-B 최대화 래퍼를 제공합니다.

모든 목적함수는 (value, gradient) 를 반환하며 gradient 는 log-parameter 기준입니다.
"""

from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple
import math
import logging

import numpy as np
from scipy import optimize
from tenacity import Retrying, before_sleep_log, retry_if_exception_type, stop_after_attempt

from src.core.exceptions import NonFiniteObjectiveError, NonPSDError, OptimizationFailedError
from src.core.gp.kernels import Kernel, KernelParams, get_kernel
from src.core.gp.linalg import LOG_2PI, cholesky_solve, log_determinant, safe_cholesky, symmetrize
from src.magma.model import IndividualHyperparameters, mean_process_gradients, mean_process_matrix

# Configure logging
logger = logging.getLogger(__name__)

MAX_ITER = 200
GRADIENT_TOL = 1e-5
MAX_PERTURBED_RESTARTS = 3
PERTURBATION_SCALE = 0.5

VARIANCE_BOUNDS = (math.log(1e-6), math.log(1e8))
LENGTHSCALE_BOUNDS = (math.log(1e-3), math.log(1e4))

MEAN_PROCESS_BOUNDS = [VARIANCE_BOUNDS, LENGTHSCALE_BOUNDS, (None, None)]
INDIVIDUAL_BOUNDS = [VARIANCE_BOUNDS, LENGTHSCALE_BOUNDS, VARIANCE_BOUNDS]

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]


class IndividualBlock(NamedTuple):
    """One individual's data and the hyper-posterior restricted to its ages"""

    ages: np.ndarray
    values: np.ndarray
    posterior_mean: np.ndarray
    posterior_cov: np.ndarray


def expected_gaussian_loglik(
    cov: np.ndarray,
    residual: np.ndarray,
    derivatives: Sequence[np.ndarray],
    extra_cov: Optional[np.ndarray] = None
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    log N(r; 0, S) - 1/2 tr(S^-1 E) and its derivatives

    d/dp = 1/2 tr((a a^T - S^-1 + S^-1 E S^-1) dS/dp), a = S^-1 r

    Returns:
        Tuple: (value, gradient over `derivatives`, a)
    """
    n = residual.shape[0]
    chol = safe_cholesky(symmetrize(cov))
    alpha = cholesky_solve(chol, residual)
    inverse = cholesky_solve(chol, np.eye(n))

    value = -0.5 * float(residual @ alpha) - 0.5 * log_determinant(chol) - 0.5 * n * LOG_2PI
    weight = np.outer(alpha, alpha) - inverse
    if extra_cov is not None:
        value -= 0.5 * float(np.sum(inverse * extra_cov))
        weight = weight + inverse @ extra_cov @ inverse

    gradient = np.array([0.5 * float(np.sum(weight * d)) for d in derivatives])
    return value, gradient, alpha


def mean_process_objective(
    x: np.ndarray,
    grid: np.ndarray,
    posterior_mean: np.ndarray,
    posterior_cov: np.ndarray,
    kernel: Optional[Kernel] = None
) -> Tuple[float, np.ndarray]:
    """
    log N(m_hat; m0 1, K0) - 1/2 tr(K0^-1 K_hat)

    Args:
        x: [log variance, log lengthscale, m0]
    """
    kernel = kernel or get_kernel()
    params = KernelParams.from_log_vector(x[:2])
    k0 = mean_process_matrix(kernel, params, grid)
    residual = posterior_mean - x[2]
    value, gradient, alpha = expected_gaussian_loglik(
        k0, residual, mean_process_gradients(kernel, params, grid), posterior_cov
    )
    return value, np.append(gradient, float(np.sum(alpha)))


def _individual_terms(
    x: np.ndarray,
    block: IndividualBlock,
    kernel: Kernel,
    include_posterior_in_cov: bool
) -> Tuple[float, np.ndarray]:
    params = KernelParams.from_log_vector(x[:2])
    noise_variance = math.exp(x[2])
    n = block.ages.shape[0]
    cov = kernel.matrix(params, block.ages, block.ages) + noise_variance * np.eye(n)
    derivatives = kernel.gradients(params, block.ages) + [noise_variance * np.eye(n)]
    residual = block.values - block.posterior_mean
    if include_posterior_in_cov:
        value, gradient, _ = expected_gaussian_loglik(cov + block.posterior_cov, residual, derivatives)
    else:
        value, gradient, _ = expected_gaussian_loglik(cov, residual, derivatives, block.posterior_cov)
    return value, gradient


def individual_objective(
    x: np.ndarray,
    block: IndividualBlock,
    kernel: Optional[Kernel] = None
) -> Tuple[float, np.ndarray]:
    """
    log N(y_i; m_hat(t_i), Psi_i) - 1/2 tr(Psi_i^-1 K_hat(t_i, t_i))

    Args:
        x: [log variance, log lengthscale, log noise variance]
    """
    return _individual_terms(x, block, kernel or get_kernel(), include_posterior_in_cov=False)


def common_individual_objective(
    x: np.ndarray,
    blocks: Sequence[IndividualBlock],
    kernel: Optional[Kernel] = None
) -> Tuple[float, np.ndarray]:
    """Sum of individual_objective over all individuals (fixed order)"""
    kernel = kernel or get_kernel()
    total = 0.0
    gradient = np.zeros(3)
    for block in blocks:
        value, grad = _individual_terms(x, block, kernel, include_posterior_in_cov=False)
        total += value
        gradient += grad
    return total, gradient


def new_individual_objective(
    x: np.ndarray,
    block: IndividualBlock,
    kernel: Optional[Kernel] = None
) -> Tuple[float, np.ndarray]:
    """log N(y; m_hat(t), K_hat(t, t) + K_theta(t, t) + sigma^2 I)"""
    return _individual_terms(x, block, kernel or get_kernel(), include_posterior_in_cov=True)


def _checked(objective: Objective, label: str) -> Objective:
    def evaluate(x: np.ndarray) -> Tuple[float, np.ndarray]:
        try:
            value, gradient = objective(x)
        except NonPSDError as e:
            raise NonFiniteObjectiveError(f"{label}: {e.message}", {"x": x.tolist()})
        if not math.isfinite(value) or not np.all(np.isfinite(gradient)):
            raise NonFiniteObjectiveError(f"{label}: non-finite objective at {x.tolist()}", {"x": x.tolist()})
        return value, gradient

    return evaluate


def _perturbed_start(x0: np.ndarray, bounds: List[Tuple], attempt: int) -> np.ndarray:
    if attempt <= 1:
        return x0
    rng = np.random.default_rng(attempt)
    start = x0 + rng.normal(0.0, PERTURBATION_SCALE, size=x0.shape)
    low = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
    high = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    return np.clip(start, low, high)


def maximize(
    objective: Objective,
    x0: Sequence[float],
    bounds: List[Tuple],
    label: str = "objective"
) -> np.ndarray:
    """
    L-BFGS-B 최대화 (log-parameter 공간, 해석적 gradient)

    비유한 목적함수/NonPSD 발생 시 결정론적으로 섭동된 시작점에서 최대 3회 재시작합니다.
    결과가 시작점보다 나쁘면 시작점을 반환합니다 (ascent 보장).

    Args:
        objective: x -> (value, gradient)
        x0: 시작점
        bounds: 좌표별 (low, high), None 은 무제한
        label: 로그/에러 메시지용 이름

    Returns:
        np.ndarray: 최적 x

    Raises:
        OptimizationFailedError: 재시작 후에도 실패
    """
    checked = _checked(objective, label)
    start = np.asarray(x0, dtype=float)

    try:
        baseline: Optional[float] = checked(start)[0]
    except NonFiniteObjectiveError:
        baseline = None

    def negated(x: np.ndarray) -> Tuple[float, np.ndarray]:
        value, gradient = checked(x)
        return -value, -gradient

    try:
        for attempt in Retrying(
            stop=stop_after_attempt(MAX_PERTURBED_RESTARTS + 1),
            retry=retry_if_exception_type(NonFiniteObjectiveError),
            before_sleep=before_sleep_log(logger, logging.WARNING),
            reraise=True
        ):
            with attempt:
                x_start = _perturbed_start(start, bounds, attempt.retry_state.attempt_number)
                result = optimize.minimize(
                    negated,
                    x_start,
                    jac=True,
                    method="L-BFGS-B",
                    bounds=bounds,
                    options={"maxiter": MAX_ITER, "gtol": GRADIENT_TOL}
                )
    except NonFiniteObjectiveError as e:
        raise OptimizationFailedError(
            f"{label}: optimizer failed after {MAX_PERTURBED_RESTARTS} perturbed restarts ({e.message})",
            e.context
        )

    best = np.asarray(result.x, dtype=float)
    if baseline is not None and -float(result.fun) < baseline:
        logger.debug(f"{label}: optimizer did not improve on the start point; keeping it")
        return start
    return best


def optimize_mean_process(
    grid: np.ndarray,
    posterior_mean: np.ndarray,
    posterior_cov: np.ndarray,
    current: KernelParams,
    prior_mean_constant: float,
    kernel: Optional[Kernel] = None
) -> Tuple[KernelParams, float]:
    """Mean-process update: (theta_0, m0)"""
    x0 = np.append(current.to_log_vector(), prior_mean_constant)
    x = maximize(
        lambda v: mean_process_objective(v, grid, posterior_mean, posterior_cov, kernel),
        x0,
        MEAN_PROCESS_BOUNDS,
        label="mean-process"
    )
    return KernelParams.from_log_vector(x[:2]), float(x[2])


def optimize_individual(
    block: IndividualBlock,
    current: IndividualHyperparameters,
    kernel: Optional[Kernel] = None,
    label: str = "individual"
) -> IndividualHyperparameters:
    x = maximize(
        lambda v: individual_objective(v, block, kernel),
        current.to_log_vector(),
        INDIVIDUAL_BOUNDS,
        label=label
    )
    return IndividualHyperparameters.from_log_vector(x)


def optimize_common(
    blocks: Sequence[IndividualBlock],
    current: IndividualHyperparameters,
    kernel: Optional[Kernel] = None
) -> IndividualHyperparameters:
    x = maximize(
        lambda v: common_individual_objective(v, blocks, kernel),
        current.to_log_vector(),
        INDIVIDUAL_BOUNDS,
        label="common-individual"
    )
    return IndividualHyperparameters.from_log_vector(x)


def optimize_new_individual(
    block: IndividualBlock,
    start: IndividualHyperparameters,
    kernel: Optional[Kernel] = None
) -> IndividualHyperparameters:
    x = maximize(
        lambda v: new_individual_objective(v, block, kernel),
        start.to_log_vector(),
        INDIVIDUAL_BOUNDS,
        label="new-individual"
    )
    return IndividualHyperparameters.from_log_vector(x)
