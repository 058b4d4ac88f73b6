"""
Split Unit Tests

Quasi-random 학습/테스트 분할과 개체별 예측/평가 분할
"""

import numpy as np
import pytest

from src.core.exceptions import DataError, SplitInfeasibleError
from src.data.cohort import make_individual
from src.data.splits import (
    SplitSpec,
    derive_seed,
    prediction_evaluation_split,
    quasi_random_split,
    train_size
)
from tests.conftest import build_cohort


def _cohort_with_singletons(n_total: int, n_singletons: int):
    data = {}
    for i in range(n_total):
        n_obs = 1 if i < n_singletons else 3
        ages = [5.0 + j for j in range(n_obs)]
        data[f"P{i:02d}"] = (ages, [1.0] * n_obs)
    return build_cohort(data)


class TestQuasiRandomSplit:
    """학습/테스트 분할"""

    def test_singletons_stay_in_train(self):
        cohort = _cohort_with_singletons(31, 6)
        train, test = quasi_random_split(cohort, SplitSpec(train_fraction=0.75, seed=0))
        assert len(train) == 23
        assert len(test) == 8
        singleton_ids = {f"P{i:02d}" for i in range(6)}
        assert singleton_ids <= set(train.ids)
        assert all(ind.n_observations >= 2 for ind in test.individuals)

    def test_partition_is_disjoint_and_complete(self):
        cohort = _cohort_with_singletons(20, 3)
        train, test = quasi_random_split(cohort, SplitSpec(seed=11))
        assert set(train.ids).isdisjoint(test.ids)
        assert set(train.ids) | set(test.ids) == set(cohort.ids)

    def test_same_seed_same_split(self):
        cohort = _cohort_with_singletons(20, 3)
        first = quasi_random_split(cohort, SplitSpec(seed=5))
        second = quasi_random_split(cohort, SplitSpec(seed=5))
        assert first[1].ids == second[1].ids

    def test_different_seeds_usually_differ(self):
        cohort = _cohort_with_singletons(30, 0)
        tests = {tuple(quasi_random_split(cohort, SplitSpec(seed=s))[1].ids) for s in range(5)}
        assert len(tests) > 1

    def test_too_many_singletons(self):
        cohort = _cohort_with_singletons(8, 7)
        with pytest.raises(SplitInfeasibleError):
            quasi_random_split(cohort, SplitSpec(train_fraction=0.5))

    def test_empty_test_set(self):
        cohort = _cohort_with_singletons(2, 0)
        with pytest.raises(SplitInfeasibleError):
            quasi_random_split(cohort, SplitSpec(train_fraction=0.9))

    def test_train_fraction_bounds(self):
        with pytest.raises(ValueError):
            SplitSpec(train_fraction=1.0)
        with pytest.raises(ValueError):
            SplitSpec(train_fraction=0.0)

    @pytest.mark.parametrize("n,fraction,expected", [(31, 0.75, 23), (10, 0.75, 8), (4, 0.5, 2), (3, 0.5, 2)])
    def test_train_size_rounding(self, n, fraction, expected):
        assert train_size(n, fraction) == expected


class TestPredictionEvaluationSplit:
    """개체별 예측/평가 분할"""

    @pytest.mark.parametrize("n,expected", [(5, (2, 3)), (9, (4, 5)), (2, (1, 1))])
    def test_sizes(self, n, expected):
        individual = make_individual("X", [4.0 + i for i in range(n)], [1.0] * n)
        prediction, evaluation = prediction_evaluation_split(individual, seed=1)
        assert (len(prediction), len(evaluation)) == expected

    def test_parts_are_sorted_and_cover_all_observations(self):
        individual = make_individual("X", [4.0 + i for i in range(9)], list(range(9)))
        prediction, evaluation = prediction_evaluation_split(individual, seed=3)
        for part in (prediction, evaluation):
            ages = [o.age for o in part]
            assert ages == sorted(ages)
        assert sorted(o.age for o in prediction + evaluation) == list(individual.ages)

    def test_singleton_rejected(self):
        with pytest.raises(DataError):
            prediction_evaluation_split(make_individual("X", [4.0], [1.0]), seed=0)


class TestDeriveSeed:
    """이름 있는 seed 파생"""

    def test_stable_value(self):
        assert derive_seed(0, "evaluation-split", "P1") == derive_seed(0, "evaluation-split", "P1")

    def test_components_change_the_seed(self):
        seeds = {derive_seed(0, "restart", k) for k in range(25)}
        assert len(seeds) == 25
        assert derive_seed(0, "a") != derive_seed(1, "a")

    def test_fits_numpy_generator(self):
        value = derive_seed(2 ** 63, "x")
        assert 0 <= value < 2 ** 64
        np.random.default_rng(value)
