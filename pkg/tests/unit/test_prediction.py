"""
Prediction Unit Tests

신규 개체 예측을 전체 계층 모델의 결합 Gaussian 조건화(brute force)와 비교하고,
hyper-posterior 확장, HP 결정 전략, credible interval 을 검증합니다.
"""

import logging
import math

import numpy as np
import pytest
from scipy import linalg

from src.core.config import HpMode, HpStrategy
from src.core.exceptions import DataError, DomainError, ExtrapolationError
from src.core.gp.kernels import KernelParams, NoiseParams, kernel_matrix
from src.data.cohort import Observation
from src.magma.model import IndividualHyperparameters, MagmaParameters, TrainedModel
from src.magma.objectives import new_individual_objective, IndividualBlock
from src.magma.prediction import (
    PREDICTION_COLUMNS,
    credible_interval,
    extend_hyper_posterior,
    fit_new_individual_hps,
    mean_process_curve,
    predict_in_sample,
    predict_trajectory,
    resolve_individual_params,
    shared_individual_params,
    z_value
)
from src.magma.training import e_step, working_grid
from tests.conftest import build_cohort, mean_process_cov

MEAN_KERNEL = KernelParams(variance=4.0, lengthscale=2.0)
M0 = 10.0


def _hp(variance: float, lengthscale: float, noise: float) -> IndividualHyperparameters:
    return IndividualHyperparameters(
        kernel=KernelParams(variance=variance, lengthscale=lengthscale),
        noise=NoiseParams(noise_variance=noise)
    )


def _model(cohort, params: MagmaParameters, extra_resolution: int = 0) -> TrainedModel:
    hp = e_step(
        cohort, params.mean_kernel, params.prior_mean_constant,
        params.individual_map(cohort.ids), working_grid(cohort, extra_resolution)
    )
    return TrainedModel(
        hp_mode=params.hp_mode,
        params=params,
        hyper_posterior=hp,
        log_likelihood=0.0,
        em_iterations=0,
        training_ids=list(cohort.ids)
    )


def _observations(ages, values):
    return [Observation(age=a, value=v) for a, v in zip(ages, values)]


@pytest.fixture
def common_model(tiny_cohort) -> TrainedModel:
    return _model(tiny_cohort, MagmaParameters(
        mean_kernel=MEAN_KERNEL, prior_mean_constant=M0, shared=_hp(1.0, 2.0, 0.3)
    ))


@pytest.fixture
def individual_model(tiny_cohort) -> TrainedModel:
    return _model(tiny_cohort, MagmaParameters(
        mean_kernel=MEAN_KERNEL,
        prior_mean_constant=M0,
        per_individual={"A": _hp(1.0, 2.0, 0.2), "B": _hp(4.0, 3.0, 0.4), "C": _hp(16.0, 1.0, 0.1)}
    ))


def _brute_force(cohort, params, new_hp, targets, new_ages, new_values):
    """Condition the full hierarchical Gaussian on every observation at once"""
    train_ages = cohort.all_ages
    z = np.concatenate([train_ages, targets, new_ages])
    cov = mean_process_cov(params.mean_kernel, z)
    n_train, n_t = train_ages.size, targets.size

    cov[:n_train, :n_train] += linalg.block_diag(*[
        kernel_matrix(params.for_individual(ind.id).kernel, ind.ages, ind.ages)
        + params.for_individual(ind.id).noise.noise_variance * np.eye(ind.n_observations)
        for ind in cohort.individuals
    ])
    new = np.concatenate([targets, new_ages])
    cov[n_train:, n_train:] += kernel_matrix(new_hp.kernel, new, new)
    cov[n_train + n_t:, n_train + n_t:] += new_hp.noise.noise_variance * np.eye(new_ages.size)

    observed = np.r_[np.arange(n_train), np.arange(n_train + n_t, z.size)]
    target_idx = np.arange(n_train, n_train + n_t)
    y = np.concatenate([cohort.all_values, new_values])
    gain = np.linalg.solve(cov[np.ix_(observed, observed)], cov[np.ix_(observed, target_idx)]).T
    mean = params.prior_mean_constant + gain @ (y - params.prior_mean_constant)
    variance = np.diag(cov[np.ix_(target_idx, target_idx)] - gain @ cov[np.ix_(observed, target_idx)])
    return mean, variance


class TestCredibleInterval:
    """95% credible interval"""

    def test_standard_normal(self):
        assert credible_interval(0.0, 1.0) == (-1.959964, 1.959964)

    def test_vector_form(self):
        lower, upper = credible_interval([10.0, 20.0], [4.0, 0.0])
        np.testing.assert_allclose(lower, [10.0 - 2 * 1.959964, 20.0])
        np.testing.assert_allclose(upper, [10.0 + 2 * 1.959964, 20.0])

    def test_other_level(self):
        assert z_value(0.9) == pytest.approx(1.6448536, rel=1e-6)

    @pytest.mark.parametrize("level", [0.0, 1.0, 1.5, -0.1])
    def test_invalid_level(self, level):
        with pytest.raises(DomainError):
            credible_interval(0.0, 1.0, level)

    def test_negative_variance(self):
        with pytest.raises(DomainError):
            credible_interval(0.0, -1.0)


class TestExtendHyperPosterior:
    """Grid 밖 나이로의 hyper-posterior 확장"""

    def test_grid_ages_are_exact_entries(self, common_model):
        hp = common_model.hyper_posterior
        belief = extend_hyper_posterior(hp, MEAN_KERNEL, M0, [6.0, 12.0])
        idx = hp.locate([6.0, 12.0])
        np.testing.assert_array_equal(belief.mean, hp.mean[idx])
        np.testing.assert_array_equal(belief.covariance, hp.covariance[np.ix_(idx, idx)])

    def test_matches_e_step_on_refined_grid(self, tiny_cohort, common_model):
        extra = np.array([5.5, 9.25, 14.0, 18.0])
        params = common_model.params
        refined_grid = np.union1d(working_grid(tiny_cohort), extra)
        refined = e_step(tiny_cohort, MEAN_KERNEL, M0, params.individual_map(tiny_cohort.ids), refined_grid)
        query = np.array([5.5, 8.0, 9.25, 14.0, 18.0])
        idx = refined.locate(query)

        extended = extend_hyper_posterior(common_model.hyper_posterior, MEAN_KERNEL, M0, query)
        np.testing.assert_allclose(extended.mean, refined.mean[idx], rtol=0, atol=1e-6)
        np.testing.assert_allclose(extended.covariance, refined.covariance[np.ix_(idx, idx)], rtol=0, atol=1e-6)


class TestPredictTrajectory:
    """신규 개체 궤적 예측"""

    def test_matches_brute_force_conditioning(self, tiny_cohort, common_model):
        new_hp = _hp(1.5, 2.5, 0.2)
        targets = np.array([4.0, 6.5, 10.0, 13.0, 17.0])
        new_ages = np.array([6.0, 9.0, 11.5])
        new_values = np.array([9.8, 11.2, 10.5])

        prediction = predict_trajectory(common_model, _observations(new_ages, new_values), targets, params=new_hp)
        mean, variance = _brute_force(tiny_cohort, common_model.params, new_hp, targets, new_ages, new_values)
        np.testing.assert_allclose(prediction.mean, mean, rtol=0, atol=1e-6)
        np.testing.assert_allclose(prediction.variance, variance, rtol=0, atol=1e-6)

    def test_no_observations_gives_population_prior(self, common_model):
        targets = np.array([6.0, 12.0])
        prediction = predict_trajectory(common_model, [], targets)
        hp = common_model.hyper_posterior
        idx = hp.locate(targets)
        np.testing.assert_array_equal(prediction.mean, hp.mean[idx])
        np.testing.assert_allclose(prediction.variance, np.diag(hp.covariance)[idx] + 1.0)
        assert prediction.hp_strategy == "shared"

    def test_observations_reduce_variance(self, common_model):
        targets = np.linspace(5.0, 15.0, 11)
        prior = predict_trajectory(common_model, [], targets)
        posterior = predict_trajectory(common_model, _observations([7.0, 11.0], [10.0, 12.0]), targets)
        assert np.all(posterior.variance <= prior.variance + 1e-12)

    def test_each_observation_reduces_variance(self, common_model):
        params = _hp(1.0, 2.0, 0.3)
        ages, values = [5.5, 7.0, 9.5, 11.0, 13.5], [9.5, 10.5, 11.5, 11.0, 10.0]
        targets = np.linspace(5.0, 15.0, 11)
        previous = predict_trajectory(common_model, [], targets, params=params).variance
        for n in range(1, len(ages) + 1):
            current = predict_trajectory(common_model, _observations(ages[:n], values[:n]), targets, params=params).variance
            assert np.all(current <= previous + 1e-10)
            previous = current

    def test_near_noiseless_interpolation(self, common_model):
        params = _hp(1.0, 2.0, 1e-8)
        ages, values = [6.5, 9.5, 14.5], [9.0, 12.5, 11.0]
        prediction = predict_trajectory(common_model, _observations(ages, values), ages, params=params)
        np.testing.assert_allclose(prediction.mean, values, atol=1e-4)
        assert np.all(prediction.variance < 1e-4)

    def test_band_contains_mean(self, common_model):
        prediction = predict_trajectory(common_model, _observations([8.0], [11.0]), [5.0, 10.0, 15.0])
        assert np.all(prediction.lower95 <= prediction.mean)
        assert np.all(prediction.mean <= prediction.upper95)

    def test_observation_noise_widens_band(self, common_model):
        prediction = predict_trajectory(common_model, _observations([8.0], [11.0]), [5.0, 10.0])
        noisy = prediction.with_observation_noise()
        np.testing.assert_allclose(noisy.variance, prediction.variance + 0.3)
        np.testing.assert_array_equal(noisy.mean, prediction.mean)

    def test_extrapolation_guard(self, common_model):
        # grid spans [5, 15]
        predict_trajectory(common_model, [], [0.5, 19.5])
        with pytest.raises(ExtrapolationError):
            predict_trajectory(common_model, [], [21.0])
        with pytest.raises(ExtrapolationError):
            predict_trajectory(common_model, [], [-0.5])

    @pytest.mark.parametrize("targets", [[10.0, 5.0], [5.0, math.nan]])
    def test_invalid_targets(self, common_model, targets):
        with pytest.raises(DomainError):
            predict_trajectory(common_model, [], targets)

    def test_frame_columns(self, common_model):
        frame = predict_trajectory(common_model, [], [5.0, 10.0]).to_frame()
        assert list(frame.columns) == PREDICTION_COLUMNS
        assert predict_trajectory(common_model, [], [5.0]).to_csv().startswith(
            "age_years,mean,variance,lower95,upper95\n"
        )


class TestPredictInSample:
    """학습 개체 leave-one-out 예측"""

    def test_single_individual_reduces_to_gp_regression(self):
        cohort = build_cohort({"A": ([5.0, 8.0, 12.0], [9.0, 11.5, 10.0])})
        hp = _hp(1.0, 2.0, 0.3)
        model = _model(cohort, MagmaParameters(mean_kernel=MEAN_KERNEL, prior_mean_constant=M0, shared=hp))
        targets = np.array([6.0, 10.0])
        prediction = predict_in_sample(model, cohort, "A", targets)

        ages, values = cohort.get("A").ages, cohort.get("A").values
        k_oo = mean_process_cov(MEAN_KERNEL, ages) + kernel_matrix(hp.kernel, ages, ages) + 0.3 * np.eye(3)
        k_to = mean_process_cov(MEAN_KERNEL, targets, ages) + kernel_matrix(hp.kernel, targets, ages)
        k_tt = mean_process_cov(MEAN_KERNEL, targets) + kernel_matrix(hp.kernel, targets, targets)
        gain = np.linalg.solve(k_oo, k_to.T).T
        np.testing.assert_allclose(prediction.mean, M0 + gain @ (values - M0), atol=1e-8)
        np.testing.assert_allclose(prediction.variance, np.diag(k_tt - gain @ k_to.T), atol=1e-8)

        # plain k0 + ki regression, without the nugget
        plain_oo = kernel_matrix(MEAN_KERNEL, ages, ages) + kernel_matrix(hp.kernel, ages, ages) + 0.3 * np.eye(3)
        plain_to = kernel_matrix(MEAN_KERNEL, targets, ages) + kernel_matrix(hp.kernel, targets, ages)
        plain_tt = kernel_matrix(MEAN_KERNEL, targets, targets) + kernel_matrix(hp.kernel, targets, targets)
        plain_gain = np.linalg.solve(plain_oo, plain_to.T).T
        np.testing.assert_allclose(prediction.mean, M0 + plain_gain @ (values - M0), atol=1e-6)
        np.testing.assert_allclose(prediction.variance, np.diag(plain_tt - plain_gain @ plain_to.T), atol=1e-6)

    def test_uses_training_hyperparameters(self, tiny_cohort, individual_model):
        prediction = predict_in_sample(individual_model, tiny_cohort, "B", [6.0, 10.0])
        assert prediction.params == individual_model.params.per_individual["B"]
        assert prediction.hp_strategy == "training"

    def test_unknown_individual(self, tiny_cohort, common_model):
        with pytest.raises(DataError):
            predict_in_sample(common_model, tiny_cohort, "Z", [6.0])


class TestIndividualHyperparameters:
    """테스트 개체 HP 결정"""

    def test_common_mode_bypasses_fitting(self, common_model):
        assert fit_new_individual_hps(common_model, _observations([6.0], [10.0])) == common_model.params.shared

    def test_shared_is_median_of_log_parameters(self, individual_model):
        shared = shared_individual_params(individual_model)
        assert shared.kernel.variance == pytest.approx(4.0, rel=1e-12)
        assert shared.kernel.lengthscale == pytest.approx(2.0, rel=1e-12)
        assert shared.noise.noise_variance == pytest.approx(0.2, rel=1e-12)

    def test_refit_does_not_decrease_objective(self, individual_model):
        ages, values = np.array([6.0, 9.0, 11.0, 14.0]), np.array([8.5, 12.0, 11.0, 9.0])
        fitted = fit_new_individual_hps(individual_model, _observations(ages, values))
        belief = extend_hyper_posterior(individual_model.hyper_posterior, MEAN_KERNEL, M0, ages)
        block = IndividualBlock(ages=ages, values=values, posterior_mean=belief.mean, posterior_cov=belief.covariance)
        start = shared_individual_params(individual_model)
        before = new_individual_objective(start.to_log_vector(), block)[0]
        assert new_individual_objective(fitted.to_log_vector(), block)[0] >= before - 1e-9 * abs(before)

    def test_refit_needs_observations(self, individual_model):
        with pytest.raises(DataError):
            fit_new_individual_hps(individual_model, [])

    def test_auto_reuses_training_parameters(self, individual_model):
        params, used = resolve_individual_params(individual_model, [], HpStrategy.AUTO, "C")
        assert used == "training"
        assert params == individual_model.params.per_individual["C"]

    def test_auto_refits_unknown_individual(self, individual_model):
        _, used = resolve_individual_params(individual_model, _observations([6.0, 9.0], [9.0, 11.0]), HpStrategy.AUTO, "new")
        assert used == "refit"

    def test_shared_strategy(self, individual_model):
        params, used = resolve_individual_params(individual_model, _observations([6.0], [9.0]), HpStrategy.SHARED)
        assert used == "shared"
        assert params == shared_individual_params(individual_model)

    def test_refit_without_observations_falls_back(self, individual_model, caplog):
        with caplog.at_level(logging.WARNING):
            _, used = resolve_individual_params(individual_model, [], HpStrategy.REFIT)
        assert used == "shared"
        assert "shared median" in caplog.text

    def test_common_mode_always_shared(self, common_model):
        _, used = resolve_individual_params(common_model, _observations([6.0], [9.0]), HpStrategy.REFIT)
        assert used == "shared"


class TestMeanProcessCurve:
    """평균 과정 곡선"""

    def test_curve_follows_hyper_posterior(self, common_model):
        hp = common_model.hyper_posterior
        curve = mean_process_curve(common_model, hp.grid)
        np.testing.assert_array_equal(curve.mean, hp.mean)
        np.testing.assert_allclose(curve.variance, np.diag(hp.covariance))

    def test_population_band_is_wider(self, common_model):
        targets = [5.0, 10.0, 15.0]
        latent = mean_process_curve(common_model, targets)
        population = mean_process_curve(common_model, targets, population_predictive=True)
        np.testing.assert_allclose(population.variance, latent.variance + 1.0 + 0.3)
        assert population.hp_strategy == "population"

    def test_individual_mode_uses_model_grid(self, individual_model):
        assert individual_model.hp_mode == HpMode.INDIVIDUAL
        curve = mean_process_curve(individual_model, [7.0, 9.0])
        assert curve.targets.size == 2
