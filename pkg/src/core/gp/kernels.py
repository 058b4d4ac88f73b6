"""
Kernel Module

GP 공분산 함수(kernel)와 하이퍼파라미터 타입을 정의합니다.
기본 커널은 exponentiated-quadratic(squared exponential)이며,
Kernel 인터페이스를 구현하면 호출부 변경 없이 다른 커널을 추가할 수 있습니다.
"""

from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence
import math
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.core.exceptions import DomainError

# Configure logging
logger = logging.getLogger(__name__)


class KernelParams(BaseModel):
    """Output variance and lengthscale of one GP"""

    model_config = ConfigDict(frozen=True)

    variance: float = Field(gt=0)
    lengthscale: float = Field(gt=0)

    @field_validator("variance", "lengthscale")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("must be finite")
        return value

    def to_log_vector(self) -> np.ndarray:
        """Unconstrained (log-space) representation"""
        return np.array([math.log(self.variance), math.log(self.lengthscale)])

    @classmethod
    def from_log_vector(cls, values: Sequence[float]) -> "KernelParams":
        return cls(variance=math.exp(values[0]), lengthscale=math.exp(values[1]))

    def to_text(self) -> str:
        """Decimal text with 17 significant digits (lossless for IEEE doubles)"""
        return f"variance={self.variance:.17g},lengthscale={self.lengthscale:.17g}"

    @classmethod
    def from_text(cls, text: str) -> "KernelParams":
        fields = dict(part.split("=", 1) for part in text.split(","))
        return cls(variance=float(fields["variance"]), lengthscale=float(fields["lengthscale"]))


class NoiseParams(BaseModel):
    """Observation-noise variance"""

    model_config = ConfigDict(frozen=True)

    noise_variance: float = Field(gt=0)

    @field_validator("noise_variance")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("must be finite")
        return value


def _as_finite_vector(values: Sequence[float], name: str) -> np.ndarray:
    array = np.asarray(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(array)):
        raise DomainError(f"{name} contains non-finite values")
    return array


class Kernel(ABC):
    """Stationary 1-D covariance function parameterised by KernelParams"""

    name: str = ""

    @abstractmethod
    def matrix(self, params: KernelParams, xs: Sequence[float], ys: Sequence[float]) -> np.ndarray:
        """
        Cross-covariance matrix

        Args:
            params: 커널 하이퍼파라미터
            xs: 행(row) 입력
            ys: 열(column) 입력

        Returns:
            np.ndarray: |xs| x |ys| 공분산 행렬
        """
        pass

    @abstractmethod
    def gradients(self, params: KernelParams, xs: Sequence[float]) -> List[np.ndarray]:
        """
        Derivatives of matrix(params, xs, xs) w.r.t. the log-parameters

        Returns:
            List[np.ndarray]: [dK/dlog(variance), dK/dlog(lengthscale)]
        """
        pass


class SquaredExponentialKernel(Kernel):
    """k(x, y) = variance * exp(-(x - y)^2 / (2 * lengthscale^2))"""

    name = "squared_exponential"

    def matrix(self, params: KernelParams, xs: Sequence[float], ys: Sequence[float]) -> np.ndarray:
        x = _as_finite_vector(xs, "xs")
        y = _as_finite_vector(ys, "ys")
        diff = x[:, None] - y[None, :]
        return params.variance * np.exp(-0.5 * diff * diff / (params.lengthscale ** 2))

    def gradients(self, params: KernelParams, xs: Sequence[float]) -> List[np.ndarray]:
        x = _as_finite_vector(xs, "xs")
        diff = x[:, None] - x[None, :]
        scaled = diff * diff / (params.lengthscale ** 2)
        k = params.variance * np.exp(-0.5 * scaled)
        return [k, k * scaled]


_KERNELS: Dict[str, Kernel] = {
    SquaredExponentialKernel.name: SquaredExponentialKernel()
}

DEFAULT_KERNEL = SquaredExponentialKernel.name


def get_kernel(name: Optional[str] = None) -> Kernel:
    """
    이름으로 커널 인스턴스 조회

    Args:
        name: 커널 이름 (기본: squared_exponential)

    Returns:
        Kernel: 등록된 커널
    """
    key = name or DEFAULT_KERNEL
    if key not in _KERNELS:
        raise ValueError(f"Unknown kernel: {key}. Available: {sorted(_KERNELS)}")
    return _KERNELS[key]


def kernel_matrix(
    params: KernelParams,
    xs: Sequence[float],
    ys: Sequence[float],
    kernel: Optional[str] = None
) -> np.ndarray:
    """Covariance matrix between xs and ys under the named kernel"""
    return get_kernel(kernel).matrix(params, xs, ys)
