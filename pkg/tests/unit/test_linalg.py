"""
Linear Algebra Unit Tests

safe_cholesky, mvn_logpdf, gp_condition 을 명시적 역행렬 oracle 과 비교합니다.
"""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from src.core.exceptions import DomainError, NonPSDError
from src.core.gp.kernels import KernelParams, NoiseParams, kernel_matrix
from src.core.gp.linalg import GaussianDist, gp_condition, mvn_logpdf, safe_cholesky, sample_mvn


class TestSafeCholesky:
    """Jitter 가 있는 Cholesky"""

    def test_positive_definite_needs_no_jitter(self):
        matrix = np.array([[4.0, 2.0], [2.0, 3.0]])
        result = safe_cholesky(matrix)
        assert result.jitter == 0.0
        np.testing.assert_allclose(result.factor @ result.factor.T, matrix, rtol=1e-12)

    def test_rank_deficient_matrix_gets_smallest_working_jitter(self):
        v = np.array([1.0, 2.0, 3.0])
        matrix = np.outer(v, v)
        result = safe_cholesky(matrix)
        assert result.jitter > 0
        scale = np.mean(np.diag(matrix))
        assert result.jitter <= 1e-4 * scale
        np.testing.assert_allclose(
            result.factor @ result.factor.T, matrix + result.jitter * np.eye(3), rtol=1e-5, atol=1e-8
        )

    def test_negative_definite_raises_with_attempted_jitters(self):
        with pytest.raises(NonPSDError) as info:
            safe_cholesky(-np.eye(3))
        assert info.value.dimension == 3
        assert len(info.value.jitters) >= 1

    def test_asymmetric_input_is_domain_error(self):
        with pytest.raises(DomainError):
            safe_cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_non_square_input_is_domain_error(self):
        with pytest.raises(DomainError):
            safe_cholesky(np.ones((2, 3)))

    def test_empty_matrix(self):
        assert safe_cholesky(np.zeros((0, 0))).factor.shape == (0, 0)


class TestGaussianDist:
    """GaussianDist 검증"""

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            GaussianDist(mean=[0.0, 1.0], covariance=np.eye(3))

    def test_asymmetric_covariance(self):
        with pytest.raises(ValueError):
            GaussianDist(mean=[0.0, 0.0], covariance=[[1.0, 0.2], [0.1, 1.0]])

    def test_marginal_keeps_requested_order(self):
        dist = GaussianDist(mean=[1.0, 2.0, 3.0], covariance=np.diag([1.0, 2.0, 3.0]))
        marginal = dist.marginal([2, 0])
        np.testing.assert_array_equal(marginal.mean, [3.0, 1.0])
        np.testing.assert_array_equal(marginal.variance, [3.0, 1.0])


class TestMvnLogpdf:
    """Multivariate normal log-density"""

    def test_standard_normal_at_zero(self):
        value = mvn_logpdf([0.0], GaussianDist(mean=[0.0], covariance=[[1.0]]))
        assert value == pytest.approx(-0.5 * math.log(2.0 * math.pi), abs=1e-15)

    def test_matches_scipy(self, rng):
        for _ in range(5):
            a = rng.normal(size=(4, 4))
            cov = a @ a.T + 0.5 * np.eye(4)
            mean = rng.normal(size=4)
            y = rng.normal(size=4)
            expected = stats.multivariate_normal(mean=mean, cov=cov).logpdf(y)
            assert mvn_logpdf(y, GaussianDist(mean=mean, covariance=0.5 * (cov + cov.T))) == pytest.approx(
                expected, rel=1e-10
            )

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            mvn_logpdf([0.0, 1.0], GaussianDist(mean=[0.0], covariance=[[1.0]]))

    def test_one_dimensional_density_integrates_to_one(self, rng):
        for _ in range(5):
            mean, variance = float(rng.normal(0.0, 10.0)), float(rng.uniform(0.1, 25.0))
            dist = GaussianDist(mean=[mean], covariance=[[variance]])
            half_width = 12.0 * math.sqrt(variance)
            total, _ = integrate.quad(lambda y: math.exp(mvn_logpdf([y], dist)), mean - half_width, mean + half_width)
            assert total == pytest.approx(1.0, abs=1e-6)


class TestGpCondition:
    """gp_condition vs 명시적 역행렬"""

    def test_matches_explicit_inversion(self, rng):
        xs = np.array([1.0, 2.5, 4.0, 6.0, 7.0])
        cov = kernel_matrix(KernelParams(variance=2.0, lengthscale=1.5), xs, xs)
        mean = rng.normal(size=5)
        joint = GaussianDist(mean=mean, covariance=cov)
        b = np.array([1, 3, 4])
        a = np.array([0, 2])
        y = rng.normal(size=3)
        noise = 0.3

        s_bb_inv = np.linalg.inv(cov[np.ix_(b, b)] + noise * np.eye(3))
        expected_mean = mean[a] + cov[np.ix_(a, b)] @ s_bb_inv @ (y - mean[b])
        expected_cov = cov[np.ix_(a, a)] - cov[np.ix_(a, b)] @ s_bb_inv @ cov[np.ix_(b, a)]

        result = gp_condition(joint, b, y, NoiseParams(noise_variance=noise))
        np.testing.assert_allclose(result.mean, expected_mean, rtol=0, atol=1e-10)
        np.testing.assert_allclose(result.covariance, expected_cov, rtol=0, atol=1e-10)

    def test_noise_is_added_to_observed_block_only(self):
        joint = GaussianDist(mean=[0.0, 0.0], covariance=np.eye(2))
        result = gp_condition(joint, [1], [1.0], NoiseParams(noise_variance=1.0))
        # independent coordinates: the unobserved one keeps its prior
        assert result.mean[0] == 0.0
        assert result.covariance[0, 0] == pytest.approx(1.0)

    def test_conditioning_reduces_variance(self):
        xs = np.array([0.0, 1.0, 2.0])
        joint = GaussianDist(mean=np.zeros(3), covariance=kernel_matrix(KernelParams(variance=1.0, lengthscale=1.0), xs, xs))
        result = gp_condition(joint, [2], [0.5], NoiseParams(noise_variance=0.1))
        assert np.all(result.variance <= joint.variance[:2] + 1e-12)

    def test_requires_observations(self):
        joint = GaussianDist(mean=[0.0], covariance=[[1.0]])
        with pytest.raises(DomainError):
            gp_condition(joint, [], [], NoiseParams(noise_variance=1.0))

    def test_rejects_duplicate_indices(self):
        joint = GaussianDist(mean=[0.0, 0.0], covariance=np.eye(2))
        with pytest.raises(DomainError):
            gp_condition(joint, [1, 1], [0.0, 0.0], NoiseParams(noise_variance=1.0))


class TestSampleMvn:
    """sample_mvn"""

    def test_sample_moments(self):
        dist = GaussianDist(mean=[1.0, -2.0], covariance=[[2.0, 0.6], [0.6, 1.0]])
        draws = sample_mvn(dist, np.random.default_rng(0), size=20000)
        np.testing.assert_allclose(draws.mean(axis=0), dist.mean, atol=0.05)
        np.testing.assert_allclose(np.cov(draws.T), dist.covariance, atol=0.08)

    def test_same_generator_state_same_draw(self):
        dist = GaussianDist(mean=[0.0, 0.0], covariance=np.eye(2))
        first = sample_mvn(dist, np.random.default_rng(7))
        second = sample_mvn(dist, np.random.default_rng(7))
        np.testing.assert_array_equal(first, second)
