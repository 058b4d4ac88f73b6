"""
MAGMA Prediction Module

학습된 hyper-posterior 를 population prior 로 사용하여 새로운(또는 held-out) 개체의
전체 궤적(trajectory)을 95% credible interval 과 함께 예측합니다.
"""

from typing import Any, Dict, Optional, Sequence, Tuple, Union
import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import stats

from src.core.config import HpMode, HpStrategy
from src.core.exceptions import DataError, DomainError, ExtrapolationError
from src.core.gp.kernels import KernelParams, get_kernel
from src.core.gp.linalg import GaussianDist, cholesky_solve, gp_condition, safe_cholesky, symmetrize
from src.data.cohort import FLOAT_FORMAT, Cohort, Observation
from src.magma.model import HyperPosterior, IndividualHyperparameters, TrainedModel, mean_process_matrix
from src.magma.objectives import IndividualBlock, optimize_new_individual
from src.magma.training import e_step

# Configure logging
logger = logging.getLogger(__name__)

Z_95 = 1.959964
EXTRAPOLATION_MARGIN = 5.0
PREDICTION_COLUMNS = ["age_years", "mean", "variance", "lower95", "upper95"]

ArrayLike = Union[float, Sequence[float], np.ndarray]


def z_value(level: float = 0.95) -> float:
    """Two-sided Gaussian quantile (0.95 is fixed at 1.959964)"""
    if not (isinstance(level, (int, float)) and 0.0 < level < 1.0):
        raise DomainError(f"credible level must lie in (0, 1), got {level}")
    if level == 0.95:
        return Z_95
    return float(stats.norm.ppf(0.5 * (1.0 + level)))


def credible_interval(mean: ArrayLike, variance: ArrayLike, level: float = 0.95) -> Tuple[Any, Any]:
    """
    mean ± z(level)·sqrt(variance)

    Raises:
        DomainError: level ∉ (0, 1) 또는 음수 분산
    """
    z = z_value(level)
    m = np.asarray(mean, dtype=float)
    v = np.asarray(variance, dtype=float)
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise DomainError("variance must be finite and non-negative")
    half_width = z * np.sqrt(v)
    lower, upper = m - half_width, m + half_width
    if lower.ndim == 0:
        return float(lower), float(upper)
    return lower, upper


class TrajectoryPrediction(BaseModel):
    """Predictive mean, variance and 95% band at sorted target ages"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    targets: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray
    params: Optional[IndividualHyperparameters] = None
    hp_strategy: Optional[str] = None

    @field_validator("targets", "mean", "variance", "lower95", "upper95", mode="before")
    @classmethod
    def _vector(cls, value) -> np.ndarray:
        array = np.array(value, dtype=float).reshape(-1)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def _consistent(self) -> "TrajectoryPrediction":
        n = self.targets.size
        if any(a.size != n for a in (self.mean, self.variance, self.lower95, self.upper95)):
            raise ValueError("prediction vectors must have equal lengths")
        if np.any(np.diff(self.targets) < 0):
            raise ValueError("targets must be sorted")
        if np.any(self.variance < 0):
            raise ValueError("variance must be non-negative")
        return self

    @classmethod
    def from_moments(
        cls,
        targets: np.ndarray,
        mean: np.ndarray,
        variance: np.ndarray,
        params: Optional[IndividualHyperparameters] = None,
        hp_strategy: Optional[str] = None
    ) -> "TrajectoryPrediction":
        variance = np.maximum(np.asarray(variance, dtype=float), 0.0)
        lower, upper = credible_interval(mean, variance)
        return cls(
            targets=targets,
            mean=mean,
            variance=variance,
            lower95=lower,
            upper95=upper,
            params=params,
            hp_strategy=hp_strategy
        )

    def with_observation_noise(self) -> "TrajectoryPrediction":
        """Band for a new noisy observation (latent variance + fitted noise variance)"""
        if self.params is None:
            return self
        return TrajectoryPrediction.from_moments(
            self.targets,
            self.mean,
            self.variance + self.params.noise.noise_variance,
            self.params,
            self.hp_strategy
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "age_years": self.targets,
            "mean": self.mean,
            "variance": self.variance,
            "lower95": self.lower95,
            "upper95": self.upper95
        }, columns=PREDICTION_COLUMNS)

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

    def sidecar(self) -> Dict[str, Any]:
        """Fitted individual hyperparameters for the JSON sidecar"""
        record: Dict[str, Any] = {"hp_strategy": self.hp_strategy, "n_targets": int(self.targets.size)}
        if self.params is not None:
            record["individual_params"] = {
                "variance": self.params.kernel.variance,
                "lengthscale": self.params.kernel.lengthscale,
                "noise_variance": self.params.noise.noise_variance
            }
        return record


def extend_hyper_posterior(
    hp: HyperPosterior,
    mean_kernel: KernelParams,
    prior_mean_constant: float,
    ages: Sequence[float],
    kernel_name: Optional[str] = None
) -> GaussianDist:
    """
    Joint belief of the mean process at arbitrary ages

    Off-grid ages condition the mean-process prior on the hyper-posterior:
    B = K(a, g) K(g, g)^-1, mean = m0 + B (m_hat - m0), cov = K(a, a) - B K(g, a) + B K_hat B^T.
    Grid ages (within 1e-9) take the hyper-posterior entries directly.
    """
    query = np.asarray(ages, dtype=float).reshape(-1)
    idx = hp.locate(query, strict=False)
    on_grid = idx >= 0
    if np.all(on_grid):
        return hp.belief.marginal(idx)

    kernel = get_kernel(kernel_name)
    grid = hp.grid
    k_gg = symmetrize(mean_process_matrix(kernel, mean_kernel, grid))
    k_ga = mean_process_matrix(kernel, mean_kernel, grid, query)
    k_aa = mean_process_matrix(kernel, mean_kernel, query)

    projection = cholesky_solve(safe_cholesky(k_gg), k_ga).T
    projection[on_grid] = 0.0
    projection[np.flatnonzero(on_grid), idx[on_grid]] = 1.0
    k_ga[:, on_grid] = k_gg[:, idx[on_grid]]

    mean = prior_mean_constant + projection @ (hp.mean - prior_mean_constant)
    cov = k_aa - projection @ k_ga + projection @ hp.covariance @ projection.T

    on = np.flatnonzero(on_grid)
    mean[on] = hp.mean[idx[on]]
    cov[np.ix_(on, on)] = hp.covariance[np.ix_(idx[on], idx[on])]
    return GaussianDist(mean=mean, covariance=symmetrize(cov))


def check_extrapolation(grid: np.ndarray, ages: Sequence[float]) -> None:
    query = np.asarray(ages, dtype=float).reshape(-1)
    low, high = grid[0] - EXTRAPOLATION_MARGIN, grid[-1] + EXTRAPOLATION_MARGIN
    outside = query[(query < low) | (query > high)]
    if outside.size:
        raise ExtrapolationError(
            f"target ages {outside.tolist()} outside the supported range [{low:g}, {high:g}]",
            {"range": [low, high], "ages": outside.tolist()}
        )


def shared_individual_params(model: TrainedModel) -> IndividualHyperparameters:
    """Shared set (Common) or element-wise median of training log-parameters (IndividualSpecific)"""
    if model.params.shared is not None:
        return model.params.shared
    logs = np.array([model.params.per_individual[i].to_log_vector() for i in sorted(model.params.per_individual)])
    return IndividualHyperparameters.from_log_vector(np.median(logs, axis=0))


def _observation_arrays(obs: Sequence[Observation]) -> Tuple[np.ndarray, np.ndarray]:
    ages = np.array([o.age for o in obs], dtype=float)
    values = np.array([o.value for o in obs], dtype=float)
    return ages, values


def fit_new_individual_hps(model: TrainedModel, obs: Sequence[Observation]) -> IndividualHyperparameters:
    """
    신규 개체 HP 추정

    log N(y; m_hat(t), K_hat(t, t) + K_θ(t, t) + σ²I) 를 (θ, σ²) 에 대해 최대화합니다.
    시작점은 shared_individual_params (ascent 기준점). Common 모드는 공유 HP 를 그대로 반환합니다.

    Raises:
        DataError: 관측이 없는 경우
        OptimizationFailedError: 섭동 재시작 후에도 실패
    """
    if model.hp_mode == HpMode.COMMON:
        return model.params.shared
    if not obs:
        raise DataError("cannot fit individual hyperparameters without observations")

    ages, values = _observation_arrays(obs)
    belief = extend_hyper_posterior(
        model.hyper_posterior, model.mean_params, model.prior_mean_constant, ages, model.kernel
    )
    block = IndividualBlock(ages=ages, values=values, posterior_mean=belief.mean, posterior_cov=belief.covariance)
    fitted = optimize_new_individual(block, shared_individual_params(model), get_kernel(model.kernel))
    logger.debug(f"Fitted new-individual hyperparameters: {fitted.kernel.to_text()}, "
                 f"noise_variance={fitted.noise.noise_variance:.6g}")
    return fitted


def resolve_individual_params(
    model: TrainedModel,
    obs: Sequence[Observation],
    strategy: HpStrategy = HpStrategy.AUTO,
    individual_id: Optional[str] = None
) -> Tuple[IndividualHyperparameters, str]:
    """
    예측에 사용할 개체 HP 결정

    Returns:
        Tuple: (HP, 실제 사용한 방식: "shared" | "training" | "refit")
    """
    if model.hp_mode == HpMode.COMMON:
        return model.params.shared, "shared"

    strategy = HpStrategy(strategy)
    if strategy == HpStrategy.AUTO and individual_id is not None and individual_id in model.params.per_individual:
        return model.params.per_individual[individual_id], "training"
    if strategy in (HpStrategy.AUTO, HpStrategy.REFIT):
        if obs:
            return fit_new_individual_hps(model, obs), "refit"
        logger.warning("No observations to refit individual hyperparameters; using the shared median")
    return shared_individual_params(model), "shared"


def _predict_from(
    hp: HyperPosterior,
    model: TrainedModel,
    obs: Sequence[Observation],
    targets: np.ndarray,
    params: IndividualHyperparameters,
    hp_strategy: Optional[str]
) -> TrajectoryPrediction:
    ages, values = _observation_arrays(obs)
    joint_ages = np.concatenate([targets, ages])
    belief = extend_hyper_posterior(hp, model.mean_params, model.prior_mean_constant, joint_ages, model.kernel)
    gamma = symmetrize(
        belief.covariance + get_kernel(model.kernel).matrix(params.kernel, joint_ages, joint_ages)
    )
    n_targets = targets.size

    if ages.size == 0:
        return TrajectoryPrediction.from_moments(
            targets, belief.mean[:n_targets], np.diag(gamma)[:n_targets], params, hp_strategy
        )

    joint = GaussianDist(mean=belief.mean, covariance=gamma)
    posterior = gp_condition(joint, np.arange(n_targets, joint_ages.size), values, params.noise)
    return TrajectoryPrediction.from_moments(
        targets, posterior.mean, posterior.variance, params, hp_strategy
    )


def _validated_targets(model: TrainedModel, targets: Sequence[float]) -> np.ndarray:
    query = np.asarray(targets, dtype=float).reshape(-1)
    if not np.all(np.isfinite(query)):
        raise DomainError("target ages must be finite")
    if np.any(np.diff(query) < 0):
        raise DomainError("target ages must be sorted")
    check_extrapolation(model.hyper_posterior.grid, query)
    return query


def predict_trajectory(
    model: TrainedModel,
    obs: Sequence[Observation],
    targets: Sequence[float],
    params: Optional[IndividualHyperparameters] = None,
    strategy: HpStrategy = HpStrategy.AUTO,
    individual_id: Optional[str] = None
) -> TrajectoryPrediction:
    """
    개체 궤적 예측

    targets ∪ 관측 나이에 대한 결합 Gaussian (평균 m_hat, 공분산 K_hat + K_θ*) 을 만들고
    σ*² 노이즈로 관측에 조건화합니다. 관측이 없으면 population prior 를 반환합니다.

    Args:
        model: 학습된 모델
        obs: 개체의 예측용 관측 (비어 있어도 됨)
        targets: 정렬된 예측 나이
        params: 개체 HP (None 이면 strategy 로 결정)
        strategy: HP 결정 방식
        individual_id: 학습 개체 id (auto 전략에서 학습 HP 재사용)

    Raises:
        ExtrapolationError: grid 범위 ±5년 밖의 target
    """
    query = _validated_targets(model, targets)
    hp_strategy = None
    if params is None:
        params, hp_strategy = resolve_individual_params(model, obs, strategy, individual_id)
    return _predict_from(model.hyper_posterior, model, obs, query, params, hp_strategy)


def predict_in_sample(
    model: TrainedModel,
    cohort: Cohort,
    individual_id: str,
    targets: Sequence[float]
) -> TrajectoryPrediction:
    """
    학습 개체의 leave-one-out 예측

    해당 개체를 뺀 코호트로 hyper-posterior 를 다시 계산(모델 HP 고정)한 뒤,
    그 개체의 관측과 학습된 개체 HP 로 예측합니다. 개체가 하나뿐이면 단일 GP 회귀와 같습니다.
    """
    individual = cohort.get(individual_id)
    if individual_id not in model.training_ids:
        raise DataError(f"{individual_id} is not a training individual of this model")
    query = _validated_targets(model, targets)

    remaining = [i for i in cohort.ids if i != individual_id]
    rest = cohort.subset(remaining) if remaining else None
    leave_one_out = e_step(
        rest,
        model.mean_params,
        model.prior_mean_constant,
        model.params.individual_map(remaining),
        model.hyper_posterior.grid,
        model.kernel
    )
    params = model.params.for_individual(individual_id)
    return _predict_from(
        leave_one_out, model, list(individual.observations), query, params,
        "shared" if model.hp_mode == HpMode.COMMON else "training"
    )


def mean_process_curve(
    model: TrainedModel,
    targets: Sequence[float],
    population_predictive: bool = False
) -> TrajectoryPrediction:
    """
    평균 과정 곡선과 credible band

    population_predictive=True 이면 개체 변동(K_θ 대각)과 관측 노이즈를 band 에 포함합니다.
    """
    query = _validated_targets(model, targets)
    belief = extend_hyper_posterior(
        model.hyper_posterior, model.mean_params, model.prior_mean_constant, query, model.kernel
    )
    variance = belief.variance
    params = None
    if population_predictive:
        params = shared_individual_params(model)
        variance = variance + params.kernel.variance + params.noise.noise_variance
    return TrajectoryPrediction.from_moments(
        query, belief.mean, variance, params, "population" if population_predictive else None
    )
