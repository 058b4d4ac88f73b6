"""
MAGMA Model Types

학습된 모델(TrainedModel), hyper-posterior, 하이퍼파라미터 묶음과
JSON 직렬화(format `magma-model/1`)를 정의합니다.
"""

from typing import Any, Dict, List, Mapping, Optional, Sequence
import json
import math
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.core.config import HpMode
from src.core.exceptions import ConfigError, DataError, GridMembershipError
from src.core.gp.kernels import DEFAULT_KERNEL, Kernel, KernelParams, NoiseParams
from src.core.gp.linalg import GaussianDist, symmetrize

# Configure logging
logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = "magma-model/1"
GRID_TOL = 1e-9

# white-noise nugget on the mean process, relative to its variance
MEAN_PROCESS_NUGGET = 1e-8


def mean_process_matrix(
    kernel: Kernel,
    params: KernelParams,
    xs: Sequence[float],
    ys: Optional[Sequence[float]] = None
) -> np.ndarray:
    """
    Mean-process covariance k0(x, y) + nugget * variance * [x == y]

    E-step, M-step, 로그 우도, 예측이 모두 이 행렬을 사용해야 EM 이 하나의 모델을 최적화합니다.
    """
    xs = np.asarray(xs, dtype=float).reshape(-1)
    ys = xs if ys is None else np.asarray(ys, dtype=float).reshape(-1)
    same = xs[:, None] == ys[None, :]
    return kernel.matrix(params, xs, ys) + MEAN_PROCESS_NUGGET * params.variance * same


def mean_process_gradients(kernel: Kernel, params: KernelParams, xs: Sequence[float]) -> List[np.ndarray]:
    """d/d log-variance and d/d log-lengthscale of mean_process_matrix(xs, xs)"""
    xs = np.asarray(xs, dtype=float).reshape(-1)
    d_variance, d_lengthscale = kernel.gradients(params, xs)
    same = xs[:, None] == xs[None, :]
    return [d_variance + MEAN_PROCESS_NUGGET * params.variance * same, d_lengthscale]


class IndividualHyperparameters(BaseModel):
    """Kernel and noise of one individual-specific GP"""

    model_config = ConfigDict(frozen=True)

    kernel: KernelParams
    noise: NoiseParams

    def to_log_vector(self) -> np.ndarray:
        return np.array([
            math.log(self.kernel.variance),
            math.log(self.kernel.lengthscale),
            math.log(self.noise.noise_variance)
        ])

    @classmethod
    def from_log_vector(cls, values: Sequence[float]) -> "IndividualHyperparameters":
        return cls(
            kernel=KernelParams(variance=math.exp(values[0]), lengthscale=math.exp(values[1])),
            noise=NoiseParams(noise_variance=math.exp(values[2]))
        )


class MagmaParameters(BaseModel):
    """All hyperparameters of a MAGMA model under one HP mode"""

    model_config = ConfigDict(frozen=True)

    mean_kernel: KernelParams
    prior_mean_constant: float
    shared: Optional[IndividualHyperparameters] = None
    per_individual: Optional[Dict[str, IndividualHyperparameters]] = None

    @model_validator(mode="after")
    def _one_regime(self) -> "MagmaParameters":
        if (self.shared is None) == (self.per_individual is None):
            raise ValueError("exactly one of shared / per_individual must be set")
        if not math.isfinite(self.prior_mean_constant):
            raise ValueError("prior_mean_constant must be finite")
        return self

    @property
    def hp_mode(self) -> HpMode:
        return HpMode.COMMON if self.shared is not None else HpMode.INDIVIDUAL

    def for_individual(self, individual_id: str) -> IndividualHyperparameters:
        if self.shared is not None:
            return self.shared
        try:
            return self.per_individual[individual_id]
        except KeyError:
            raise DataError(f"no hyperparameters for individual {individual_id}")

    def individual_map(self, ids: Sequence[str]) -> Dict[str, IndividualHyperparameters]:
        """id -> hyperparameters (Common mode broadcasts the shared set)"""
        return {i: self.for_individual(i) for i in ids}


class HyperPosterior(BaseModel):
    """Gaussian belief over the mean process on a working grid"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: np.ndarray
    belief: GaussianDist

    @field_validator("grid", mode="before")
    @classmethod
    def _grid_vector(cls, value) -> np.ndarray:
        array = np.array(value, dtype=float).reshape(-1)
        array.setflags(write=False)
        return array

    @model_validator(mode="after")
    def _consistent(self) -> "HyperPosterior":
        if self.grid.size == 0:
            raise ValueError("grid must not be empty")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if self.belief.dimension != self.grid.size:
            raise ValueError("belief dimension must equal grid length")
        return self

    @property
    def mean(self) -> np.ndarray:
        return self.belief.mean

    @property
    def covariance(self) -> np.ndarray:
        return self.belief.covariance

    def locate(self, ages: Sequence[float], strict: bool = True) -> np.ndarray:
        """
        Grid indices of the given ages (within 1e-9 years)

        strict=False 이면 grid 에 없는 나이는 -1 로 표시합니다.
        """
        return grid_indices(self.grid, ages, strict=strict)


def grid_indices(grid: np.ndarray, ages: Sequence[float], strict: bool = True) -> np.ndarray:
    query = np.asarray(ages, dtype=float).reshape(-1)
    if query.size == 0:
        return np.zeros(0, dtype=int)
    pos = np.searchsorted(grid, query)
    left = np.clip(pos - 1, 0, grid.size - 1)
    right = np.clip(pos, 0, grid.size - 1)
    nearest = np.where(np.abs(grid[left] - query) <= np.abs(grid[right] - query), left, right)
    found = np.abs(grid[nearest] - query) <= GRID_TOL
    if strict and not np.all(found):
        missing = query[~found].tolist()
        raise GridMembershipError(f"ages {missing} are not on the working grid", {"missing": missing})
    return np.where(found, nearest, -1)


class TrainedModel(BaseModel):
    """Fitted MAGMA model with training provenance"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    hp_mode: HpMode
    kernel: str = DEFAULT_KERNEL
    params: MagmaParameters
    hyper_posterior: HyperPosterior
    log_likelihood: float
    independent_log_likelihood: Optional[float] = None
    log_likelihood_trace: List[float] = Field(default_factory=list)
    em_iterations: int = Field(ge=0)
    restart_index: int = Field(default=0, ge=0)
    seed: int = Field(default=0, ge=0)
    restart_log_likelihoods: List[Optional[float]] = Field(default_factory=list)
    restart_failures: List[Dict[str, Any]] = Field(default_factory=list)
    training_ids: List[str] = Field(default_factory=list)
    run_config: Dict[str, Any] = Field(default_factory=dict)
    format_version: str = MODEL_FORMAT_VERSION

    @model_validator(mode="after")
    def _invariants(self) -> "TrainedModel":
        if not math.isfinite(self.log_likelihood):
            raise ValueError("log_likelihood must be finite")
        if self.params.hp_mode != self.hp_mode:
            raise ValueError("parameter regime does not match hp_mode")
        if self.hp_mode == HpMode.INDIVIDUAL and set(self.params.per_individual) != set(self.training_ids):
            raise ValueError("per-individual parameters must be keyed exactly by the training ids")
        return self

    @property
    def mean_params(self) -> KernelParams:
        return self.params.mean_kernel

    @property
    def prior_mean_constant(self) -> float:
        return self.params.prior_mean_constant

    def with_provenance(self, **updates: Any) -> "TrainedModel":
        return self.model_copy(update=updates)

    def to_document(self) -> Dict[str, Any]:
        """JSON document (K-hat stored as row-major lower triangle)"""
        cov = self.hyper_posterior.covariance
        rows, cols = np.tril_indices(cov.shape[0])
        if self.params.shared is not None:
            individual = {"shared": _hp_record(self.params.shared)}
        else:
            individual = {
                "per_individual": {
                    i: _hp_record(self.params.per_individual[i]) for i in sorted(self.params.per_individual)
                }
            }
        return {
            "format_version": self.format_version,
            "hp_mode": self.hp_mode.value,
            "kernel": self.kernel,
            "mean_params": self.mean_params.model_dump(),
            "prior_mean_constant": self.prior_mean_constant,
            "individual_params": individual,
            "hyper_posterior": {
                "grid": self.hyper_posterior.grid.tolist(),
                "mean": self.hyper_posterior.mean.tolist(),
                "covariance_lower": cov[rows, cols].tolist()
            },
            "log_likelihood": self.log_likelihood,
            "independent_log_likelihood": self.independent_log_likelihood,
            "log_likelihood_trace": list(self.log_likelihood_trace),
            "em_iterations": self.em_iterations,
            "restart_index": self.restart_index,
            "seed": self.seed,
            "restart_log_likelihoods": list(self.restart_log_likelihoods),
            "restart_failures": list(self.restart_failures),
            "training_ids": list(self.training_ids),
            "run_config": dict(self.run_config)
        }

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=2, allow_nan=False) + "\n"


def _hp_record(hp: IndividualHyperparameters) -> Dict[str, float]:
    return {
        "variance": hp.kernel.variance,
        "lengthscale": hp.kernel.lengthscale,
        "noise_variance": hp.noise.noise_variance
    }


def _hp_from_record(record: Mapping[str, float]) -> IndividualHyperparameters:
    return IndividualHyperparameters(
        kernel=KernelParams(variance=record["variance"], lengthscale=record["lengthscale"]),
        noise=NoiseParams(noise_variance=record["noise_variance"])
    )


class _HyperPosteriorDocument(BaseModel):
    grid: List[float]
    mean: List[float]
    covariance_lower: List[float]


class ModelDocument(BaseModel):
    """Schema of the model JSON file"""

    model_config = ConfigDict(extra="forbid")

    format_version: str
    hp_mode: HpMode
    kernel: str
    mean_params: KernelParams
    prior_mean_constant: float
    individual_params: Dict[str, Any]
    hyper_posterior: _HyperPosteriorDocument
    log_likelihood: float
    independent_log_likelihood: Optional[float] = None
    log_likelihood_trace: List[float] = Field(default_factory=list)
    em_iterations: int
    restart_index: int
    seed: int
    restart_log_likelihoods: List[Optional[float]] = Field(default_factory=list)
    restart_failures: List[Dict[str, Any]] = Field(default_factory=list)
    training_ids: List[str] = Field(default_factory=list)
    run_config: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("format_version")
    @classmethod
    def _supported(cls, value: str) -> str:
        if value != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format {value!r} (expected {MODEL_FORMAT_VERSION})")
        return value


def model_from_json(text: str) -> TrainedModel:
    """
    Model JSON 역직렬화 및 검증

    Raises:
        ConfigError: JSON/스키마 오류
    """
    try:
        document = ModelDocument.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(f"Invalid model file: {e.error_count()} validation error(s): {e.errors()[0]['msg']}")

    grid = np.asarray(document.hyper_posterior.grid, dtype=float)
    n = grid.size
    lower = np.asarray(document.hyper_posterior.covariance_lower, dtype=float)
    if lower.size != n * (n + 1) // 2 or len(document.hyper_posterior.mean) != n:
        raise ConfigError("Invalid model file: hyper-posterior dimensions are inconsistent")
    cov = np.zeros((n, n))
    cov[np.tril_indices(n)] = lower
    cov = cov + cov.T - np.diag(np.diag(cov))

    individual = document.individual_params
    try:
        if "shared" in individual:
            shared, per_individual = _hp_from_record(individual["shared"]), None
        elif "per_individual" in individual:
            shared = None
            per_individual = {i: _hp_from_record(r) for i, r in individual["per_individual"].items()}
        else:
            raise ConfigError("Invalid model file: individual_params needs 'shared' or 'per_individual'")
    except ValidationError as e:
        raise ConfigError(f"Invalid model file: individual_params: {e.errors()[0]['msg']}")
    except (KeyError, TypeError, AttributeError) as e:
        raise ConfigError(f"Invalid model file: malformed individual_params ({type(e).__name__}: {e})")

    try:
        return TrainedModel(
            hp_mode=document.hp_mode,
            kernel=document.kernel,
            params=MagmaParameters(
                mean_kernel=document.mean_params,
                prior_mean_constant=document.prior_mean_constant,
                shared=shared,
                per_individual=per_individual
            ),
            hyper_posterior=HyperPosterior(
                grid=grid,
                belief=GaussianDist(mean=document.hyper_posterior.mean, covariance=symmetrize(cov))
            ),
            log_likelihood=document.log_likelihood,
            independent_log_likelihood=document.independent_log_likelihood,
            log_likelihood_trace=document.log_likelihood_trace,
            em_iterations=document.em_iterations,
            restart_index=document.restart_index,
            seed=document.seed,
            restart_log_likelihoods=document.restart_log_likelihoods,
            restart_failures=document.restart_failures,
            training_ids=document.training_ids,
            run_config=document.run_config,
            format_version=document.format_version
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid model file: {e.errors()[0]['msg']}")
