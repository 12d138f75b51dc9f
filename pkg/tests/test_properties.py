"""Property checkers against known-good and known-bad models."""

import math

import numpy as np
import pytest

from exchlab.core import Gaussian, RngStream
from exchlab.models import (
    BetaBernoulli,
    BinaryMixtureCounterexample,
    ConjugateGaussian,
    DiscreteDistribution,
    GaussianProcess,
)
from exchlab.properties import (
    NondeterministicPredictiveError,
    PropertyKind,
    check_cid,
    check_joint_exchangeability,
    check_perm_invariance,
    distribution_distance,
)


class TestDistributionDistance:
    def test_gaussian_metric(self):
        a, b = Gaussian(0.0, 1.0), Gaussian(0.3, 1.5)
        assert distribution_distance(a, b) == pytest.approx(0.5)

    def test_total_variation(self):
        a = DiscreteDistribution((0.0, 1.0), (0.2, 0.8))
        b = DiscreteDistribution((0.0, 1.0), (0.5, 0.5))
        assert distribution_distance(a, b) == pytest.approx(0.3)

    def test_mismatched_families(self):
        with pytest.raises(TypeError):
            distribution_distance(Gaussian(0, 1), DiscreteDistribution((0.0,), (1.0,)))


class TestPermInvariance:
    def test_conjugate_passes(self):
        m = ConjugateGaussian(0.0, 1.0, 0.7)
        ctx = [(None, y) for y in (0.3, -1.2, 0.8, 2.0)]
        rng = RngStream(seed=70).generator()
        report = check_perm_invariance(m, ctx, rng, tol=1e-10)
        assert report.passed
        assert report.max_violation <= 1e-12

    def test_gp_passes(self):
        gp = GaussianProcess(1.0, 1.0, 0.1)
        rng = RngStream(seed=71).generator()
        ctx = [(np.array([v]), float(rng.standard_normal())) for v in (-1.0, 0.0, 0.5, 1.4)]
        report = check_perm_invariance(gp, ctx, rng, tol=1e-8, x_probe=np.array([0.2]))
        assert report.passed

    def test_counterexample_passes_at_length_two(self):
        m = BinaryMixtureCounterexample()
        rng = RngStream(seed=72).generator()
        report = check_perm_invariance(m, [(None, 1.0), (None, 0.0)], rng, tol=1e-12)
        assert report.passed

    def test_recency_model_fails_at_longer_history(self):
        # the same model privileges recency once histories exceed 2
        m = BinaryMixtureCounterexample()
        rng = RngStream(seed=73).generator()
        report = check_perm_invariance(
            m, [(None, 1.0), (None, 0.0), (None, 0.0)], rng, n_permutations=50, tol=1e-12
        )
        assert not report.passed
        assert report.max_violation >= 0.25

    def test_short_history_trivially_passes(self):
        m = ConjugateGaussian(0.0, 1.0, 1.0)
        rng = RngStream(seed=74).generator()
        report = check_perm_invariance(m, [(None, 1.0)], rng)
        assert report.passed and report.max_violation == 0.0

    def test_stochastic_predictive_rejected(self):
        state = {"calls": 0}

        def noisy_fn(context, x_probe):
            state["calls"] += 1
            return Gaussian(float(state["calls"]), 1.0)

        rng = RngStream(seed=75).generator()
        with pytest.raises(NondeterministicPredictiveError):
            check_perm_invariance(noisy_fn, [(None, 0.0), (None, 1.0)], rng)


class TestCid:
    def test_conjugate_passes(self):
        m = ConjugateGaussian(0.0, 1.0, 1.0)
        ctx = [(None, 0.4), (None, -0.9)]
        rng = RngStream(seed=76).generator()
        report = check_cid(m, ctx, rng, n_mc=3000)
        assert report.passed

    def test_gp_passes_with_input_sampler(self):
        gp = GaussianProcess(1.0, 1.0, 0.1)
        ctx = [(np.array([-0.5]), 0.7)]
        rng = RngStream(seed=77).generator()

        def x_sampler(r):
            return r.uniform(-2.0, 2.0, size=1)

        report = check_cid(
            gp, ctx, rng, n_mc=1500, x_probe=np.array([0.3]), x_sampler=x_sampler
        )
        assert report.passed

    def test_counterexample_fails_with_half_violation(self):
        # After observing a single 1, the current rule says P(0) = 1/3 but
        # the averaged next-step rule gives E[(1 + Y)/2] = 5/6.
        m = BinaryMixtureCounterexample()
        rng = RngStream(seed=78).generator()
        report = check_cid(m, [(None, 1.0)], rng, n_mc=4000)
        assert not report.passed
        assert report.max_violation == pytest.approx(0.5, abs=0.03)
        at_zero = [e for e in report.evidence if e["probe"] == 0.0][0]
        assert at_zero["current_density"] == pytest.approx(1 / 3, abs=1e-12)
        assert at_zero["averaged_density"] == pytest.approx(5 / 6, abs=0.03)

    def test_report_units_are_densities(self):
        m = BinaryMixtureCounterexample()
        rng = RngStream(seed=79).generator()
        report = check_cid(m, [(None, 1.0)], rng, n_mc=2000)
        assert report.kind is PropertyKind.CID
        # binding-point contract: passed <=> max_violation <= tolerance
        assert report.passed == (report.max_violation <= report.tolerance)


class TestJointExchangeability:
    def test_urn_model_passes(self):
        report = check_joint_exchangeability(BetaBernoulli(1.0, 1.0), n_steps=4)
        assert report.passed
        assert report.max_violation <= 1e-15

    def test_counterexample_truncation_passes(self):
        # first two steps are iid, so length-2 joints are exchangeable
        report = check_joint_exchangeability(BinaryMixtureCounterexample(), n_steps=2)
        assert report.passed

    def test_counterexample_fails_at_three(self):
        report = check_joint_exchangeability(BinaryMixtureCounterexample(), n_steps=3)
        assert not report.passed
        # hand enumeration: P(1,1,0) = 4/9 while P(1,0,1) = P(0,1,1) = 1/9
        assert report.max_violation == pytest.approx(3 / 9, abs=1e-12)
        exhibit = report.evidence[0]
        assert exhibit["sequence_high"] == [1.0, 1.0, 0.0]
        assert exhibit["prob_high"] == pytest.approx(4 / 9, abs=1e-12)

    def test_enumeration_guard(self):
        with pytest.raises(ValueError):
            check_joint_exchangeability(BetaBernoulli(), n_steps=20)
