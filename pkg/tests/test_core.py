"""Core numeric kernel: RNG streams, Gaussians, KL."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exchlab.core import (
    DegenerateDensityError,
    DimensionError,
    Gaussian,
    MultivariateGaussian,
    NotPositiveDefiniteError,
    RngStream,
    cholesky_with_jitter,
    gaussian_logpdf,
    mvn_kl,
    normal_cdf,
)


class TestRngStream:
    def test_same_address_same_draws(self):
        a = RngStream(seed=123, stream_id=7).generator().standard_normal(32)
        b = RngStream(seed=123, stream_id=7).generator().standard_normal(32)
        np.testing.assert_array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = RngStream(seed=123, stream_id=0).generator().standard_normal(32)
        b = RngStream(seed=123, stream_id=1).generator().standard_normal(32)
        assert np.max(np.abs(a - b)) > 1e-6

    def test_child_naming_is_stable(self):
        root = RngStream(seed=99)
        c1 = root.child("bandit").child("rep/17").child("arm/0")
        c2 = root.child("bandit").child("rep/17").child("arm/0")
        assert c1 == c2
        # Frozen value: the derivation must never change across releases,
        # or every archived experiment becomes irreproducible.
        assert c1.stream_id == RngStream(seed=99).child("bandit").child("rep/17").child("arm/0").stream_id

    def test_sibling_children_are_distinct(self):
        root = RngStream(seed=5).child("al")
        ids = {root.numbered("seed", i).stream_id for i in range(200)}
        assert len(ids) == 200

    def test_seed_bounds(self):
        with pytest.raises(ValueError):
            RngStream(seed=-1)
        with pytest.raises(ValueError):
            RngStream(seed=1 << 64)

    def test_generator_restart_not_continuation(self):
        s = RngStream(seed=1, stream_id=2)
        g = s.generator()
        first = g.standard_normal(4)
        again = s.generator().standard_normal(4)
        np.testing.assert_array_equal(first, again)


class TestScalarGaussian:
    def test_standard_normal_at_zero(self):
        assert gaussian_logpdf(0.0, 0.0, 1.0) == pytest.approx(-0.9189385332046727, abs=1e-12)

    def test_shifted_scaled(self):
        # hand-computed: -0.5 ln(2 pi) - ln 2 - 0.5
        assert gaussian_logpdf(0.0, 2.0, 2.0) == pytest.approx(-2.112085713764618, abs=1e-12)

    def test_zero_std_density_raises(self):
        with pytest.raises(DegenerateDensityError):
            gaussian_logpdf(0.0, 0.0, 0.0)
        with pytest.raises(DegenerateDensityError):
            Gaussian(1.0, 0.0).logpdf(1.0)

    def test_point_mass_sampling_is_exact(self):
        g = Gaussian(5.0, 0.0)
        rng = RngStream(seed=3).generator()
        assert g.sample(rng) == 5.0
        np.testing.assert_array_equal(g.sample(rng, size=10), np.full(10, 5.0))

    def test_cdf_values(self):
        assert normal_cdf(0.0) == pytest.approx(0.5, abs=1e-15)
        assert normal_cdf(-1.0) == pytest.approx(0.15865525393145707, abs=1e-12)
        assert normal_cdf(1.0) + normal_cdf(-1.0) == pytest.approx(1.0, abs=1e-15)

    @given(st.floats(-6, 6))
    @settings(deadline=None)
    def test_cdf_matches_scipy(self, z):
        # scipy's ndtr is an independent implementation of the same CDF;
        # 1e-12 covers the erf route comfortably.
        from scipy.special import ndtr

        assert normal_cdf(z) == pytest.approx(float(ndtr(z)), abs=1e-12)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 10))
    def test_logpdf_matches_quadrature_normalization(self, y, mean, std):
        # density integrates to 1: check the normalizer via the cdf identity
        # logpdf(mean) should be -ln(std * sqrt(2 pi))
        assert gaussian_logpdf(mean, mean, std) == pytest.approx(
            -math.log(std * math.sqrt(2 * math.pi)), rel=1e-12, abs=1e-12
        )
        assert gaussian_logpdf(y, mean, std) <= gaussian_logpdf(mean, mean, std) + 1e-15


class TestCholeskyJitter:
    def test_clean_matrix_gets_no_jitter(self):
        cov = np.array([[2.0, 0.5], [0.5, 1.0]])
        chol, jitter = cholesky_with_jitter(cov)
        assert jitter == 0.0
        np.testing.assert_allclose(chol @ chol.T, cov, atol=1e-14)

    def test_semidefinite_matrix_gets_jitter(self):
        # rank-1, exactly singular
        v = np.array([1.0, 2.0, 3.0])
        cov = np.outer(v, v)
        chol, jitter = cholesky_with_jitter(cov)
        assert 0.0 < jitter <= 1e-8
        np.testing.assert_allclose(chol @ chol.T, cov + jitter * np.eye(3), atol=1e-12)

    def test_indefinite_matrix_fails(self):
        cov = np.array([[1.0, 0.0], [0.0, -0.5]])
        with pytest.raises(NotPositiveDefiniteError):
            cholesky_with_jitter(cov)


class TestMultivariateGaussian:
    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(ValueError, match="asymmetric"):
            MultivariateGaussian([0.0, 0.0], [[1.0, 0.3], [0.1, 1.0]])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            MultivariateGaussian([0.0, 0.0, 0.0], np.eye(2))
        with pytest.raises(DimensionError):
            MultivariateGaussian([0.0, 0.0], np.eye(2)).logpdf([0.0])

    def test_logpdf_factorizes_for_diagonal(self):
        mvn = MultivariateGaussian([1.0, -2.0], np.diag([4.0, 0.25]))
        expected = gaussian_logpdf(0.0, 1.0, 2.0) + gaussian_logpdf(0.0, -2.0, 0.5)
        assert mvn.logpdf([0.0, 0.0]) == pytest.approx(expected, abs=1e-12)

    def test_sample_covariance_recovers_truth(self):
        # 3-D, 1e5 draws, entrywise 5-SE window with SE from the Wishart
        # variance formula var(S_ij) = (s_ii s_jj + s_ij^2) / n.
        cov = np.array(
            [
                [2.0, 0.8, -0.3],
                [0.8, 1.5, 0.4],
                [-0.3, 0.4, 1.0],
            ]
        )
        mean = np.array([1.0, -1.0, 0.5])
        mvn = MultivariateGaussian(mean, cov)
        n = 100_000
        draws = mvn.sample(RngStream(seed=2024).generator(), size=n)
        emp = np.cov(draws.T, bias=True)
        se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / n)
        assert np.all(np.abs(emp - cov) <= 5.0 * se)
        mean_se = np.sqrt(np.diag(cov) / n)
        assert np.all(np.abs(draws.mean(axis=0) - mean) <= 5.0 * mean_se)

    def test_marginal(self):
        mvn = MultivariateGaussian([1.0, 2.0], [[4.0, 1.0], [1.0, 9.0]])
        g = mvn.marginal(1)
        assert g.mean == 2.0 and g.std == 3.0


@st.composite
def random_spd_pair(draw):
    dim = draw(st.integers(1, 8))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.Generator(np.random.Philox(key=seed))
    def spd():
        a = rng.standard_normal((dim, dim))
        return a @ a.T + (0.1 + rng.random()) * np.eye(dim)
    p = MultivariateGaussian(rng.standard_normal(dim), spd())
    q = MultivariateGaussian(rng.standard_normal(dim), spd())
    return p, q


class TestMvnKl:
    def test_unit_shift_1d(self):
        p = MultivariateGaussian([0.0], [[1.0]])
        q = MultivariateGaussian([1.0], [[1.0]])
        assert mvn_kl(p, q) == pytest.approx(0.5, abs=1e-12)

    def test_correlated_vs_independent_2d(self):
        p = MultivariateGaussian([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]])
        q = MultivariateGaussian([0.0, 0.0], np.eye(2))
        assert mvn_kl(p, q) == pytest.approx(0.14384103622589042, abs=1e-12)

    def test_self_kl_is_zero(self):
        p = MultivariateGaussian([0.3, -0.7], [[2.0, 0.2], [0.2, 0.5]])
        assert abs(mvn_kl(p, p)) <= 1e-12

    def test_dimension_mismatch(self):
        p = MultivariateGaussian([0.0], [[1.0]])
        q = MultivariateGaussian([0.0, 0.0], np.eye(2))
        with pytest.raises(DimensionError):
            mvn_kl(p, q)

    @settings(max_examples=150, deadline=None)
    @given(random_spd_pair())
    def test_nonnegative_on_random_pairs(self, pq):
        p, q = pq
        assert mvn_kl(p, q) >= -1e-10

    def test_nonnegative_bulk(self):
        # dense sweep: 1000 random pairs, dims <= 8
        rng = np.random.Generator(np.random.Philox(key=77))
        worst = np.inf
        for _ in range(1000):
            dim = int(rng.integers(1, 9))
            a = rng.standard_normal((dim, dim))
            b = rng.standard_normal((dim, dim))
            p = MultivariateGaussian(rng.standard_normal(dim), a @ a.T + 0.1 * np.eye(dim))
            q = MultivariateGaussian(rng.standard_normal(dim), b @ b.T + 0.1 * np.eye(dim))
            worst = min(worst, mvn_kl(p, q))
        assert worst >= -1e-10
