"""
Configuration Module

실행 설정(RunConfig)과 시뮬레이션 설정(SimulationConfig)을 정의합니다.
우선순위: CLI flag > --config JSON 파일 > 환경 변수(MAGMA_*, .env) > 기본값
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple
import json
import logging

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.core.exceptions import ConfigError
from src.core.gp.kernels import KernelParams, NoiseParams

# Load environment variables
load_dotenv()

# Configure logging
logger = logging.getLogger(__name__)

FORMAT_VERSION = "magma/1"


class HpMode(str, Enum):
    """Hyperparameter sharing regime"""
    COMMON = "common"  # 모든 개체가 하나의 HP 공유
    INDIVIDUAL = "individual"  # 개체별 HP


class HpStrategy(str, Enum):
    """How test-time individual hyperparameters are obtained"""
    AUTO = "auto"
    REFIT = "refit"
    SHARED = "shared"


class RunConfig(BaseSettings):
    """Effective configuration of one pipeline run"""

    model_config = SettingsConfigDict(
        env_prefix="MAGMA_",
        env_file=".env",
        extra="ignore",
        frozen=True,
        use_enum_values=False
    )

    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    hp_mode: HpMode = HpMode.COMMON
    n_restarts: int = Field(default=25, ge=1)
    em_max_iter: int = Field(default=100, ge=1)
    em_rel_tol: float = Field(default=1e-4, gt=0)
    grid_extra_resolution: int = Field(default=200, ge=0)
    train_fraction: float = Field(default=0.75, gt=0, lt=1)
    n_jobs: int = Field(default=1, ge=1)
    hp_strategy: HpStrategy = HpStrategy.AUTO
    log_level: str = "INFO"
    metrics_file: Optional[str] = None

    def to_record(self) -> Dict[str, Any]:
        """JSON-friendly dict embedded into every artifact"""
        record = self.model_dump(mode="json", exclude={"log_level", "metrics_file", "n_jobs"})
        record["format_version"] = FORMAT_VERSION
        return record


def load_run_config(
    config_path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """
    RunConfig 생성 (flag > 파일 > 환경 변수 > 기본값)

    Args:
        config_path: JSON 설정 파일 경로 (선택적)
        overrides: CLI flag 로 지정된 값 (None 값은 무시)

    Returns:
        RunConfig: 검증된 설정

    Raises:
        ConfigError: 파일 오류 또는 검증 실패
    """
    values: Dict[str, Any] = {}

    if config_path:
        values.update(_read_json_file(config_path))

    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value

    try:
        config = RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {_format_validation_error(e)}")

    logger.debug(f"Effective run config: {config.to_record()}")
    return config


class SimulationConfig(BaseModel):
    """Synthetic cohort generator settings"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_individuals: int = Field(default=31, ge=1)
    observations_per_individual_range: Tuple[int, int] = (1, 16)
    age_range: Tuple[float, float] = (4.0, 26.0)
    mean_process_params: KernelParams = KernelParams(variance=4000.0, lengthscale=5.0)
    individual_params: KernelParams = KernelParams(variance=900.0, lengthscale=3.0)
    noise: NoiseParams = NoiseParams(noise_variance=100.0)
    prior_mean_constant: float = 300.0
    n_singletons: int = Field(default=0, ge=0)
    dense_grid_size: int = Field(default=200, ge=2)
    shared_ages: Optional[Tuple[float, ...]] = None  # every individual observed at these ages
    seed: int = Field(default=0, ge=0, lt=2 ** 64)

    @model_validator(mode="after")
    def _ranges(self) -> "SimulationConfig":
        low, high = self.observations_per_individual_range
        if low < 1 or high < low:
            raise ValueError("observations_per_individual_range must satisfy 1 <= low <= high")
        age_low, age_high = self.age_range
        if not (0 < age_low < age_high < 130):
            raise ValueError("age_range must satisfy 0 < low < high < 130")
        if self.n_singletons > self.n_individuals:
            raise ValueError("n_singletons cannot exceed n_individuals")
        # the remaining individuals then draw at least two observations
        if 0 < self.n_singletons < self.n_individuals and high < 2:
            raise ValueError("n_singletons requires observations_per_individual_range upper bound >= 2")
        if self.shared_ages is not None:
            if not self.shared_ages or any(not age_low <= a <= age_high for a in self.shared_ages):
                raise ValueError("shared_ages must be non-empty and inside age_range")
            if len(set(self.shared_ages)) != len(self.shared_ages):
                raise ValueError("shared_ages must be unique")
        return self


def load_simulation_config(config_path: str, seed: Optional[int] = None) -> SimulationConfig:
    """Read and validate a simulation config file; --seed overrides the file"""
    values = _read_json_file(config_path)
    if seed is not None:
        values["seed"] = seed
    try:
        return SimulationConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"Invalid simulation configuration: {_format_validation_error(e)}")


def _read_json_file(config_path: str) -> Dict[str, Any]:
    path = Path(config_path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {config_path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file is not valid JSON: {config_path} ({e})")
    if not isinstance(data, dict):
        raise ConfigError(f"Config file must contain a JSON object: {config_path}")
    return data


def _format_validation_error(error: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(p) for p in item['loc'])}: {item['msg']}" for item in error.errors()
    )
