"""
Synthetic Cohort Generator

공개되지 않은 임상 데이터를 대신하는 합성 코호트를 생성합니다.
공통 평균 과정(latent mean process) 1개 + 개체별 편차 GP + 관측 노이즈 구조이며,
모든 관측 시점에서의 실제 평균값(ground truth)을 함께 반환합니다.
"""

from typing import Dict, List, Optional
import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from src.core.config import SimulationConfig
from src.core.gp.kernels import kernel_matrix
from src.core.gp.linalg import GaussianDist, sample_mvn, symmetrize
from src.data.cohort import Cohort, FLOAT_FORMAT, make_individual
from src.data.splits import derive_seed

# Configure logging
logger = logging.getLogger(__name__)

TRUTH_COLUMNS = ["age_years", "true_mean"]


class SyntheticCohort(BaseModel):
    """Generated cohort plus the latent mean it was drawn around"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    cohort: Cohort
    truth_ages: np.ndarray
    truth_mean: np.ndarray
    observation_truth: Dict[str, np.ndarray]
    config: SimulationConfig

    def true_mean_at(self, ages) -> np.ndarray:
        """Latent mean at ages that belong to the truth grid (exact lookup)"""
        query = np.asarray(ages, dtype=float).reshape(-1)
        idx = np.searchsorted(self.truth_ages, query)
        idx = np.clip(idx, 0, self.truth_ages.size - 1)
        if not np.allclose(self.truth_ages[idx], query, rtol=0, atol=1e-9):
            raise KeyError("ages not on the ground-truth grid")
        return self.truth_mean[idx]

    def truth_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"age_years": self.truth_ages, "true_mean": self.truth_mean})

    def truth_csv(self) -> str:
        return self.truth_frame().to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _observation_counts(config: SimulationConfig, rng: np.random.Generator) -> List[int]:
    low, high = config.observations_per_individual_range
    n = config.n_individuals
    if config.shared_ages is not None:
        return [len(config.shared_ages)] * n

    singletons = set(rng.choice(n, size=config.n_singletons, replace=False).tolist()) if config.n_singletons else set()
    multi_low = max(2, low) if config.n_singletons else low
    counts = []
    for i in range(n):
        if i in singletons:
            counts.append(1)
        else:
            counts.append(int(rng.integers(multi_low, high + 1)))
    return counts


def synthesize_cohort(config: SimulationConfig, seed: Optional[int] = None) -> SyntheticCohort:
    """
    합성 코호트 생성

    1. 평균 과정: GP(prior_mean_constant, k_mean) 를 dense grid ∪ 모든 관측 나이에서 결합 샘플링
    2. 개체별: 나이를 age_range 에서 균등 추출, GP(0, k_individual) 편차 + Gaussian 노이즈

    Args:
        config: 시뮬레이션 설정
        seed: seed (None 이면 config.seed 사용)

    Returns:
        SyntheticCohort: 코호트와 ground truth
    """
    base_seed = config.seed if seed is None else seed
    rng = np.random.default_rng(derive_seed(base_seed, "synthesize-cohort"))
    age_low, age_high = config.age_range

    counts = _observation_counts(config, rng)
    width = len(str(config.n_individuals))
    ids = [f"S{i + 1:0{max(width, 3)}d}" for i in range(config.n_individuals)]

    ages_by_id: Dict[str, np.ndarray] = {}
    for individual_id, count in zip(ids, counts):
        if config.shared_ages is not None:
            ages_by_id[individual_id] = np.sort(np.asarray(config.shared_ages, dtype=float))
        else:
            ages = np.sort(rng.uniform(age_low, age_high, size=count))
            while np.any(np.diff(ages) <= 0):
                ages = np.sort(rng.uniform(age_low, age_high, size=count))
            ages_by_id[individual_id] = ages

    dense = np.linspace(age_low, age_high, config.dense_grid_size)
    truth_ages = np.unique(np.concatenate([dense] + list(ages_by_id.values())))

    prior = GaussianDist(
        mean=np.full(truth_ages.size, config.prior_mean_constant),
        covariance=symmetrize(kernel_matrix(config.mean_process_params, truth_ages, truth_ages))
    )
    truth_mean = sample_mvn(prior, rng)

    individuals = []
    observation_truth: Dict[str, np.ndarray] = {}
    n_clipped = 0
    for individual_id in ids:
        ages = ages_by_id[individual_id]
        latent = truth_mean[np.searchsorted(truth_ages, ages)]
        deviation_dist = GaussianDist(
            mean=np.zeros(ages.size),
            covariance=symmetrize(kernel_matrix(config.individual_params, ages, ages))
        )
        deviation = sample_mvn(deviation_dist, rng)
        noise = rng.normal(0.0, np.sqrt(config.noise.noise_variance), size=ages.size)
        values = latent + deviation + noise
        n_clipped += int(np.sum(values < 0))
        values = np.maximum(values, 0.0)

        observation_truth[individual_id] = latent
        individuals.append(make_individual(individual_id, ages, values))

    if n_clipped:
        logger.warning(f"{n_clipped} synthetic values fell below zero and were clipped to 0")

    cohort = Cohort(individuals=tuple(individuals))
    logger.info(f"Synthesized cohort (seed={base_seed}): {cohort.summarize()}")
    return SyntheticCohort(
        cohort=cohort,
        truth_ages=truth_ages,
        truth_mean=truth_mean,
        observation_truth=observation_truth,
        config=config
    )
