"""
MAGMA Training Module

공통 평균 과정(common mean process)을 갖는 multi-task GP 의 EM 학습을 제공합니다.

- E-step: 평균 과정의 hyper-posterior (grid 위 Gaussian belief)
- M-step: 평균 과정 HP (θ₀, m₀) 와 개체별 HP (Common: 공유 1세트, Individual: 개체별)
- train_with_restarts: seed 기반 무작위 초기화 N회 후 최대 log-likelihood 모델 선택
"""

from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple
import math
import time
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg

from src.core.config import HpMode
from src.core.concurrency import run_all
from src.core.exceptions import ConfigError, DataError, MagmaError, TrainingFailedError
from src.core.gp.kernels import DEFAULT_KERNEL, KernelParams, NoiseParams, get_kernel
from src.core.gp.linalg import (
    GaussianDist,
    LOG_2PI,
    cholesky_solve,
    log_determinant,
    mvn_logpdf,
    safe_cholesky,
    symmetrize
)
from src.core.services.metrics_service import get_metrics_service
from src.data.cohort import Cohort, Individual
from src.data.splits import derive_seed
from src.magma.model import (
    GRID_TOL,
    HyperPosterior,
    IndividualHyperparameters,
    MagmaParameters,
    TrainedModel,
    grid_indices,
    mean_process_matrix
)
from src.magma.objectives import (
    IndividualBlock,
    optimize_common,
    optimize_individual,
    optimize_mean_process
)

# Configure logging
logger = logging.getLogger(__name__)

INIT_LOG_RANGE = (math.log(1e-2), math.log(1e2))
INIT_NOISE_LOG_RANGE = (math.log(1e-2), math.log(1e1))
MONOTONICITY_SLACK = 1e-6

# Failures recorded per restart; anything else propagates
RESTART_ERRORS = (MagmaError, np.linalg.LinAlgError, FloatingPointError, ValueError)


class EMConfig(BaseModel):
    """EM iteration control"""

    model_config = ConfigDict(frozen=True)

    max_iter: int = Field(default=100, ge=1)
    rel_tol: float = Field(default=1e-4, gt=0)


def working_grid(cohort: Cohort, extra_resolution: int = 0) -> np.ndarray:
    """
    Observed ages ∪ linspace(min, max, extra_resolution), deduplicated within 1e-9 years

    Args:
        cohort: 비어 있지 않은 코호트
        extra_resolution: 추가 균등 격자점 수

    Returns:
        np.ndarray: 정렬된 나이 벡터
    """
    if extra_resolution < 0:
        raise ConfigError(f"extra_resolution must be >= 0, got {extra_resolution}")
    ages = cohort.all_ages
    if ages.size == 0:
        raise DataError("cannot build a working grid for an empty cohort")
    candidates = [ages]
    if extra_resolution > 0:
        candidates.append(np.linspace(ages.min(), ages.max(), extra_resolution))
    merged = np.sort(np.concatenate(candidates))

    kept = [merged[0]]
    for age in merged[1:]:
        if age - kept[-1] > GRID_TOL:
            kept.append(age)
    return np.asarray(kept)


def _condition_mean_process(
    individuals: Sequence[Individual],
    mean_kernel: KernelParams,
    prior_mean_constant: float,
    per_individual: Mapping[str, IndividualHyperparameters],
    grid: np.ndarray,
    kernel_name: Optional[str] = None
) -> Tuple[HyperPosterior, Optional[float]]:
    kernel = get_kernel(kernel_name)
    grid = np.asarray(grid, dtype=float)
    k0 = symmetrize(mean_process_matrix(kernel, mean_kernel, grid))
    prior_mean = np.full(grid.size, prior_mean_constant)

    if not individuals:
        return HyperPosterior(grid=grid, belief=GaussianDist(mean=prior_mean, covariance=k0)), None

    index_blocks = []
    value_blocks = []
    psi_blocks = []
    for individual in individuals:
        hp = per_individual[individual.id]
        ages = individual.ages
        index_blocks.append(grid_indices(grid, ages))
        value_blocks.append(individual.values)
        psi_blocks.append(
            kernel.matrix(hp.kernel, ages, ages) + hp.noise.noise_variance * np.eye(ages.size)
        )

    idx = np.concatenate(index_blocks)
    y = np.concatenate(value_blocks)
    k_obs = k0[:, idx]
    gram = symmetrize(k0[np.ix_(idx, idx)] + linalg.block_diag(*psi_blocks))
    chol = safe_cholesky(gram)

    residual = y - prior_mean_constant
    alpha = cholesky_solve(chol, residual)
    mean = prior_mean + k_obs @ alpha
    v = linalg.solve_triangular(chol.factor, k_obs.T, lower=True, check_finite=False)
    cov = symmetrize(k0 - v.T @ v)

    log_likelihood = float(
        -0.5 * residual @ alpha - 0.5 * log_determinant(chol) - 0.5 * y.size * LOG_2PI
    )
    return HyperPosterior(grid=grid, belief=GaussianDist(mean=mean, covariance=cov)), log_likelihood


def e_step(
    cohort: Optional[Cohort],
    mean_kernel: KernelParams,
    prior_mean_constant: float,
    per_individual: Mapping[str, IndividualHyperparameters],
    grid: np.ndarray,
    kernel_name: Optional[str] = None
) -> HyperPosterior:
    """
    E-step: hyper-posterior of the mean process on `grid`

    K_hat = K0 - K0 P^T C^-1 P K0, m_hat = m0 + K0 P^T C^-1 (y - m0),
    C = P K0 P^T + blockdiag(Psi_i). 정보 형식 (K0^-1 + Σ P^T Psi^-1 P)^-1 과 동일합니다.

    Args:
        cohort: 학습 코호트 (None 이면 prior 반환)
        mean_kernel: θ₀
        prior_mean_constant: m₀
        per_individual: 개체 id -> HP
        grid: 모든 관측 나이를 포함하는 working grid

    Raises:
        GridMembershipError: 관측 나이가 grid 에 없는 경우
        NonPSDError: 최대 jitter 에서도 Cholesky 실패
    """
    individuals = list(cohort.individuals) if cohort is not None else []
    hyper_posterior, _ = _condition_mean_process(
        individuals, mean_kernel, prior_mean_constant, per_individual, grid, kernel_name
    )
    return hyper_posterior


def observed_log_likelihood(
    cohort: Cohort,
    params: MagmaParameters,
    kernel_name: Optional[str] = None
) -> float:
    """Joint marginal log N(y; m0, P K0 P^T + blockdiag Psi_i) of the whole cohort"""
    grid = working_grid(cohort, 0)
    _, log_likelihood = _condition_mean_process(
        list(cohort.individuals),
        params.mean_kernel,
        params.prior_mean_constant,
        params.individual_map(cohort.ids),
        grid,
        kernel_name
    )
    return log_likelihood


def independent_log_likelihood(
    cohort: Cohort,
    params: MagmaParameters,
    kernel_name: Optional[str] = None
) -> float:
    """Σ_i log N(y_i; m0, K0(t_i, t_i) + Psi_i), individuals treated as independent"""
    kernel = get_kernel(kernel_name)
    total = 0.0
    for individual in cohort.individuals:
        hp = params.for_individual(individual.id)
        ages = individual.ages
        cov = (
            mean_process_matrix(kernel, params.mean_kernel, ages)
            + kernel.matrix(hp.kernel, ages, ages)
            + hp.noise.noise_variance * np.eye(ages.size)
        )
        total += mvn_logpdf(
            individual.values,
            GaussianDist(mean=np.full(ages.size, params.prior_mean_constant), covariance=symmetrize(cov))
        )
    return total


def individual_blocks(cohort: Cohort, hp: HyperPosterior) -> List[IndividualBlock]:
    """Per-individual data with the hyper-posterior restricted to its ages"""
    blocks = []
    for individual in cohort.individuals:
        idx = hp.locate(individual.ages)
        blocks.append(IndividualBlock(
            ages=individual.ages,
            values=individual.values,
            posterior_mean=hp.mean[idx],
            posterior_cov=hp.covariance[np.ix_(idx, idx)]
        ))
    return blocks


def m_step(
    cohort: Cohort,
    hp: HyperPosterior,
    mode: HpMode,
    current: MagmaParameters,
    kernel_name: Optional[str] = None
) -> MagmaParameters:
    """
    M-step: 기대 완전 데이터 log-likelihood 최대화

    (a) θ₀, m₀: log N(m_hat; m₀, K₀) - 1/2 tr(K₀^-1 K_hat)
    (b) 개체 HP: log N(y_i; m_hat(t_i), Psi_i) - 1/2 tr(Psi_i^-1 K_hat(t_i, t_i)),
        Common 모드는 개체 합을 하나의 HP 로 최대화

    Raises:
        OptimizationFailedError: 섭동 재시작 3회 후에도 실패
    """
    kernel = get_kernel(kernel_name)
    mean_kernel, prior_mean_constant = optimize_mean_process(
        hp.grid, hp.mean, hp.covariance, current.mean_kernel, current.prior_mean_constant, kernel
    )

    blocks = individual_blocks(cohort, hp)
    if mode == HpMode.COMMON:
        start = current.shared if current.shared is not None else current.for_individual(cohort.ids[0])
        shared = optimize_common(blocks, start, kernel)
        return MagmaParameters(
            mean_kernel=mean_kernel,
            prior_mean_constant=prior_mean_constant,
            shared=shared
        )

    per_individual = {}
    for individual, block in zip(cohort.individuals, blocks):
        per_individual[individual.id] = optimize_individual(
            block, current.for_individual(individual.id), kernel, label=f"individual {individual.id}"
        )
    return MagmaParameters(
        mean_kernel=mean_kernel,
        prior_mean_constant=prior_mean_constant,
        per_individual=per_individual
    )


def _check_init(cohort: Cohort, mode: HpMode, init: MagmaParameters) -> None:
    if init.hp_mode != mode:
        raise ConfigError(f"initial parameters are for {init.hp_mode.value} mode, training requested {mode.value}")
    if mode == HpMode.INDIVIDUAL:
        missing = [i for i in cohort.ids if i not in init.per_individual]
        if missing:
            raise ConfigError(f"initial parameters missing for individuals {missing}")


def em_train(
    cohort: Cohort,
    mode: HpMode,
    init: MagmaParameters,
    config: Optional[EMConfig] = None,
    grid_extra_resolution: int = 0,
    kernel_name: Optional[str] = None,
    seed: int = 0,
    restart_index: int = 0
) -> TrainedModel:
    """
    EM 학습 (단일 초기화)

    관측 합집합 grid 에서 E/M 을 반복하고 |ΔLL|/|LL| < rel_tol 또는 max_iter 에서 멈춥니다.
    수렴 후 refined grid (grid_extra_resolution) 에서 최종 E-step 을 수행해 저장합니다.

    Args:
        cohort: 학습 코호트
        mode: HP 모드
        init: 초기 파라미터
        config: EM 반복 설정
        grid_extra_resolution: 저장용 hyper-posterior 의 추가 격자점 수
        kernel_name: 커널 이름
        seed: 기록용 seed
        restart_index: 기록용 restart 번호

    Returns:
        TrainedModel: 학습된 모델
    """
    config = config or EMConfig()
    _check_init(cohort, mode, init)
    kernel_name = kernel_name or DEFAULT_KERNEL
    em_grid = working_grid(cohort, 0)
    individuals = list(cohort.individuals)

    def condition(params: MagmaParameters) -> Tuple[HyperPosterior, float]:
        return _condition_mean_process(
            individuals,
            params.mean_kernel,
            params.prior_mean_constant,
            params.individual_map(cohort.ids),
            em_grid,
            kernel_name
        )

    params = init
    hp, log_likelihood = condition(params)
    trace = [log_likelihood]
    iterations = 0

    for iterations in range(1, config.max_iter + 1):
        params = m_step(cohort, hp, mode, params, kernel_name)
        hp, updated = condition(params)
        trace.append(updated)

        if updated < log_likelihood - MONOTONICITY_SLACK * abs(log_likelihood):
            logger.warning(
                f"EM log-likelihood decreased at iteration {iterations}: {log_likelihood:.6f} -> {updated:.6f}"
            )
        change = abs(updated - log_likelihood) / max(abs(log_likelihood), 1e-300)
        log_likelihood = updated
        if change < config.rel_tol:
            break

    final_hp = e_step(
        cohort,
        params.mean_kernel,
        params.prior_mean_constant,
        params.individual_map(cohort.ids),
        working_grid(cohort, grid_extra_resolution),
        kernel_name
    )

    logger.debug(
        f"EM restart {restart_index} ({mode.value}): {iterations} iterations, LL={log_likelihood:.6f}"
    )
    return TrainedModel(
        hp_mode=mode,
        kernel=kernel_name,
        params=params,
        hyper_posterior=final_hp,
        log_likelihood=log_likelihood,
        independent_log_likelihood=independent_log_likelihood(cohort, params, kernel_name),
        log_likelihood_trace=trace,
        em_iterations=iterations,
        restart_index=restart_index,
        seed=seed,
        training_ids=list(cohort.ids)
    )


def random_initialization(cohort: Cohort, mode: HpMode, rng: np.random.Generator) -> MagmaParameters:
    """
    Restart 초기값: 분산/lengthscale 은 log-uniform[1e-2, 1e2], 노이즈 분산은 log-uniform[1e-2, 1e1],
    m₀ 는 코호트 전체 평균
    """
    def draw_individual() -> IndividualHyperparameters:
        variance, lengthscale = np.exp(rng.uniform(*INIT_LOG_RANGE, size=2))
        noise_variance = math.exp(rng.uniform(*INIT_NOISE_LOG_RANGE))
        return IndividualHyperparameters(
            kernel=KernelParams(variance=float(variance), lengthscale=float(lengthscale)),
            noise=NoiseParams(noise_variance=noise_variance)
        )

    mean_variance, mean_lengthscale = np.exp(rng.uniform(*INIT_LOG_RANGE, size=2))
    mean_kernel = KernelParams(variance=float(mean_variance), lengthscale=float(mean_lengthscale))
    prior_mean_constant = float(np.mean(cohort.all_values))

    if mode == HpMode.COMMON:
        return MagmaParameters(
            mean_kernel=mean_kernel, prior_mean_constant=prior_mean_constant, shared=draw_individual()
        )
    return MagmaParameters(
        mean_kernel=mean_kernel,
        prior_mean_constant=prior_mean_constant,
        per_individual={i: draw_individual() for i in cohort.ids}
    )


def _run_restart(
    cohort: Cohort,
    mode: HpMode,
    seed: int,
    restart_index: int,
    config: EMConfig,
    grid_extra_resolution: int,
    kernel_name: str
) -> TrainedModel:
    rng = np.random.default_rng(derive_seed(seed, "restart", restart_index))
    init = random_initialization(cohort, mode, rng)
    metrics = get_metrics_service()
    started = time.perf_counter()
    try:
        model = em_train(
            cohort, mode, init, config, grid_extra_resolution, kernel_name, seed, restart_index
        )
    except Exception:
        metrics.record_restart(mode.value, "failed", time.perf_counter() - started)
        raise
    metrics.record_restart(mode.value, "succeeded", time.perf_counter() - started, model.em_iterations)
    return model


def train_with_restarts(
    cohort: Cohort,
    mode: HpMode,
    n_restarts: int = 25,
    seed: int = 0,
    config: Optional[EMConfig] = None,
    grid_extra_resolution: int = 0,
    n_jobs: int = 1,
    kernel_name: Optional[str] = None,
    run_config: Optional[Dict[str, Any]] = None
) -> TrainedModel:
    """
    다중 restart 학습 후 최대 log-likelihood 모델 선택

    restart k 의 초기값은 derive_seed(seed, "restart", k) 로만 결정되므로
    실행 순서/병렬도와 무관하게 결과가 동일합니다. 동점은 가장 작은 restart 번호를 선택합니다.

    Args:
        cohort: 학습 코호트
        mode: HP 모드
        n_restarts: restart 수 (>= 1)
        seed: 기준 seed
        config: EM 반복 설정
        grid_extra_resolution: 저장용 grid 추가 격자점 수
        n_jobs: 동시 실행 restart 수
        kernel_name: 커널 이름
        run_config: 모델에 기록할 실행 설정

    Returns:
        TrainedModel: 선택된 모델 (전체 restart log-likelihood/실패 기록 포함)

    Raises:
        TrainingFailedError: 모든 restart 실패
    """
    if n_restarts < 1:
        raise ConfigError(f"n_restarts must be >= 1, got {n_restarts}")
    config = config or EMConfig()
    kernel_name = kernel_name or DEFAULT_KERNEL

    logger.info(
        f"Training {mode.value} model on {len(cohort)} individuals: "
        f"{n_restarts} restarts, seed={seed}, n_jobs={n_jobs}"
    )
    started = time.perf_counter()

    def run(k: int) -> TrainedModel:
        return _run_restart(cohort, mode, seed, k, config, grid_extra_resolution, kernel_name)

    outcomes = run_all(run, list(range(n_restarts)), n_jobs, expected=RESTART_ERRORS)

    restart_log_likelihoods: List[Optional[float]] = []
    failures: List[Dict[str, Any]] = []
    best: Optional[TrainedModel] = None
    for k, outcome in enumerate(outcomes):
        if isinstance(outcome, BaseException):
            if isinstance(outcome, MagmaError):
                record = outcome.to_dict()
            else:
                record = {"error": type(outcome).__name__, "message": str(outcome), "context": {}}
            logger.warning(f"Restart {k} failed: {record['message']}")
            failures.append({"restart_index": k, **record})
            restart_log_likelihoods.append(None)
            continue
        restart_log_likelihoods.append(outcome.log_likelihood)
        if best is None or outcome.log_likelihood > best.log_likelihood:
            best = outcome

    if best is None:
        raise TrainingFailedError(failures)

    get_metrics_service().record_selection(mode.value, best.log_likelihood)
    succeeded = [ll for ll in restart_log_likelihoods if ll is not None]
    logger.info(
        f"Selected restart {best.restart_index}: LL={best.log_likelihood:.4f} "
        f"(max {max(succeeded):.4f}, min {min(succeeded):.4f}, {len(failures)} failed) "
        f"in {time.perf_counter() - started:.1f}s"
    )
    return best.with_provenance(
        restart_log_likelihoods=restart_log_likelihoods,
        restart_failures=failures,
        run_config=dict(run_config or {})
    )
