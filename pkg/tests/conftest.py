"""
Shared test fixtures

작은 합성 코호트와 손으로 만든 코호트, 그리고 테스트마다 새 metrics registry 를 제공합니다.
"""

from typing import Dict, Optional, Sequence
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.config import SimulationConfig
from src.core.gp.kernels import KernelParams, NoiseParams, kernel_matrix
from src.core.services.metrics_service import reset_metrics_service
from src.data.cohort import Cohort, make_individual
from src.data.synthetic import synthesize_cohort
from src.magma.model import MEAN_PROCESS_NUGGET


def build_cohort(data: Dict[str, Sequence[Sequence[float]]]) -> Cohort:
    """{id: (ages, values)} -> Cohort"""
    return Cohort(individuals=tuple(
        make_individual(individual_id, ages, values) for individual_id, (ages, values) in data.items()
    ))


def unit_scale_config(**overrides) -> SimulationConfig:
    """Well-specified simulation on a unit scale (fast, well conditioned)"""
    values = dict(
        n_individuals=8,
        observations_per_individual_range=(4, 8),
        age_range=(4.0, 20.0),
        mean_process_params=KernelParams(variance=4.0, lengthscale=4.0),
        individual_params=KernelParams(variance=1.0, lengthscale=3.0),
        noise=NoiseParams(noise_variance=0.25),
        prior_mean_constant=10.0,
        dense_grid_size=50,
        seed=3
    )
    values.update(overrides)
    return SimulationConfig(**values)


@pytest.fixture(autouse=True)
def fresh_metrics():
    reset_metrics_service()
    yield
    reset_metrics_service()


@pytest.fixture
def small_cohort() -> Cohort:
    return synthesize_cohort(unit_scale_config()).cohort


@pytest.fixture
def tiny_cohort() -> Cohort:
    return build_cohort({
        "A": ([5.0, 8.0, 12.0], [10.2, 11.0, 9.5]),
        "B": ([6.0, 8.0, 15.0], [9.1, 10.4, 12.3]),
        "C": ([7.5, 13.0], [10.8, 11.9])
    })


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def central_difference(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function"""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        forward, backward = x.copy(), x.copy()
        forward[i] += step
        backward[i] -= step
        grad[i] = (fn(forward) - fn(backward)) / (2.0 * step)
    return grad


def mean_process_cov(params: KernelParams, xs: Sequence[float], ys: Optional[Sequence[float]] = None) -> np.ndarray:
    """Squared-exponential k0 plus the mean-process nugget on coinciding ages"""
    xs = np.asarray(xs, dtype=float)
    ys = xs if ys is None else np.asarray(ys, dtype=float)
    nugget = MEAN_PROCESS_NUGGET * params.variance * (xs[:, None] == ys[None, :])
    return kernel_matrix(params, xs, ys) + nugget
