"""
Splits Module

학습/테스트 분할(quasi-random split)과 개체별 예측/평가 분할을 제공합니다.
모든 난수는 seed 로부터 이름 있는 파생(derive_seed)을 통해서만 생성됩니다.
"""

from typing import List, Tuple
import hashlib
import math
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.core.exceptions import DataError, SplitInfeasibleError
from src.data.cohort import Cohort, Individual, Observation

# Configure logging
logger = logging.getLogger(__name__)


class SplitSpec(BaseModel):
    """Train fraction and seed of a cohort split"""

    model_config = ConfigDict(frozen=True)

    train_fraction: float = Field(default=0.75, gt=0, lt=1)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)


def derive_seed(seed: int, *components: object) -> int:
    """
    Named seed derivation: first 8 bytes (big-endian) of SHA-256("seed|c1|c2|...")

    Adding a component (e.g. another patient id) never changes other derivations.
    """
    text = "|".join([str(int(seed))] + [str(c) for c in components])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def train_size(n_individuals: int, train_fraction: float) -> int:
    """round(N * train_fraction), ties rounded up"""
    return int(math.floor(n_individuals * train_fraction + 0.5))


def quasi_random_split(cohort: Cohort, spec: SplitSpec) -> Tuple[Cohort, Cohort]:
    """
    Quasi-random 학습/테스트 분할

    관측이 1개인 개체는 학습 세트에 고정하고, 나머지 개체를 seed 기반으로 섞어
    테스트 세트(N - round(N * train_fraction) 명)를 채웁니다.

    Args:
        cohort: 전체 코호트
        spec: 분할 설정

    Returns:
        Tuple[Cohort, Cohort]: (train, test), 각각 원래 코호트 순서 유지

    Raises:
        SplitInfeasibleError: 테스트 세트를 채울 다중 관측 개체가 부족한 경우
    """
    n_total = len(cohort)
    n_train = train_size(n_total, spec.train_fraction)
    n_test = n_total - n_train

    singletons = [ind.id for ind in cohort.individuals if ind.n_observations == 1]
    eligible = [ind.id for ind in cohort.individuals if ind.n_observations >= 2]

    if n_test < 1 or n_train < 1:
        raise SplitInfeasibleError(
            f"train_fraction {spec.train_fraction} on {n_total} individuals gives "
            f"{n_train} train / {n_test} test; both sets must be non-empty",
            {"n_total": n_total, "n_train": n_train, "n_test": n_test}
        )
    if len(eligible) < n_test:
        raise SplitInfeasibleError(
            f"test set needs {n_test} individuals with >= 2 observations but only "
            f"{len(eligible)} exist ({len(singletons)} of {n_total} individuals are singletons)",
            {"n_total": n_total, "n_test": n_test, "n_eligible": len(eligible), "n_singletons": len(singletons)}
        )

    rng = np.random.default_rng(derive_seed(spec.seed, "quasi-random-split"))
    shuffled = [eligible[i] for i in rng.permutation(len(eligible))]
    test_ids = set(shuffled[:n_test])
    train_ids = [i for i in cohort.ids if i not in test_ids]

    test_order = [i for i in cohort.ids if i in test_ids]
    train, test = cohort.subset(train_ids), cohort.subset(test_order)
    logger.info(
        f"Split {n_total} individuals into {len(train)} train / {len(test)} test "
        f"({len(singletons)} singletons forced into train)"
    )
    return train, test


def prediction_evaluation_split(
    individual: Individual,
    seed: int
) -> Tuple[List[Observation], List[Observation]]:
    """
    개체 관측을 예측용(floor(n/2))과 평가용(ceil(n/2))으로 무작위 분할

    Returns:
        Tuple: (prediction, evaluation), 각각 나이 순 정렬
    """
    n = individual.n_observations
    if n < 2:
        raise DataError(
            f"individual {individual.id} has {n} observation(s); at least 2 are required",
            {"id": individual.id, "n_observations": n}
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_prediction = n // 2
    prediction_idx = sorted(order[:n_prediction].tolist())
    evaluation_idx = sorted(order[n_prediction:].tolist())
    observations = individual.observations
    return (
        [observations[i] for i in prediction_idx],
        [observations[i] for i in evaluation_idx]
    )
