"""Gap routes: closed form, Monte Carlo, KL diagonalization."""

import math

import numpy as np
import pytest

from exchlab.core import MultivariateGaussian, RngStream
from exchlab.diagnostics import (
    _conj_gap_diffs,
    gap_closed_form_gaussian,
    gap_monte_carlo,
    kl_blr,
    kl_diagonalization,
    kl_gp,
)
from exchlab.inference import marginal_product_logloss, multistep_logloss
from exchlab.models import BayesianLinearRegression, ConjugateGaussian, GaussianProcess

HEADLINE_GAP = 0.1438410362258904  # 0.5 * (2 ln 2 - ln 3), two steps from scratch


def mi_sum_oracle(prior_std, noise_std, n_context, horizon):
    # Independent route: the gap telescopes into a sum of mutual
    # informations, each 0.5*ln((v_t + tau^2)/(v_{i-1} + tau^2)).
    tau2 = noise_std**2
    def post_var(n):
        return 1.0 / (1.0 / prior_std**2 + n / tau2)
    total = 0.0
    for i in range(n_context + 1, horizon + 1):
        total += 0.5 * math.log((post_var(n_context) + tau2) / (post_var(i - 1) + tau2))
    return total


class TestClosedForm:
    def test_headline_cell(self):
        assert gap_closed_form_gaussian(1.0, 1.0, 0, 2) == pytest.approx(
            HEADLINE_GAP, abs=1e-12
        )

    def test_single_future_point_has_no_gap(self):
        assert gap_closed_form_gaussian(1.0, 1.0, 4, 5) == 0.0

    def test_pinned_prior_has_no_gap(self):
        assert gap_closed_form_gaussian(0.0, 1.0, 0, 10) == 0.0

    def test_monotone_in_context_and_block(self):
        g = [gap_closed_form_gaussian(1.0, 1.0, t, t + 5) for t in range(6)]
        assert all(a > b for a, b in zip(g, g[1:]))
        h = [gap_closed_form_gaussian(1.0, 1.0, 2, 2 + k) for k in (2, 5, 10, 20)]
        assert all(a < b for a, b in zip(h, h[1:]))

    def test_matches_mutual_information_sum(self):
        for sigma in (0.1, 0.5, 1.0, 2.0):
            for t in (0, 1, 5):
                for k in (2, 5, 10):
                    want = mi_sum_oracle(sigma, 1.0, t, t + k)
                    got = gap_closed_form_gaussian(sigma, 1.0, t, t + k)
                    assert got == pytest.approx(want, abs=1e-12)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            gap_closed_form_gaussian(1.0, 0.0, 0, 2)
        with pytest.raises(ValueError):
            gap_closed_form_gaussian(1.0, 1.0, 3, 3)


class TestKlDiagonalization:
    def test_independent_joint_is_zero(self):
        joint = MultivariateGaussian(np.zeros(3), np.diag([1.0, 2.0, 3.0]))
        assert kl_diagonalization(joint) == pytest.approx(0.0, abs=1e-12)

    def test_coincident_gp_targets(self):
        # Covariance [[1.01, 1], [1, 1.01]]: 0.5*ln(1.0201/0.0201)
        gp = GaussianProcess(1.0, 1.0, 0.1)
        got = kl_gp(gp, [[0.0], [0.0]])
        assert got == pytest.approx(1.9634680628117216, abs=1e-9)

    def test_matches_closed_form_on_conjugate_joint(self):
        for sigma in (0.1, 0.5, 1.0, 2.0):
            for t in (0, 1, 5):
                m = ConjugateGaussian(0.0, sigma, 1.0)
                rng = RngStream(seed=t).generator()
                for _ in range(t):
                    m = m.condition(None, float(rng.standard_normal()))
                for k in (2, 5, 10):
                    want = gap_closed_form_gaussian(sigma, 1.0, t, t + k)
                    got = kl_diagonalization(m.joint_predictive(k))
                    assert got == pytest.approx(want, abs=1e-9)

    def test_blr_includes_noise(self):
        m = BayesianLinearRegression(np.zeros(1), np.eye(1), noise_std=1.0)
        xs = np.array([[1.0], [1.0]])
        # weights variance 1, noise 1: joint [[2,1],[1,2]] -> 0.5 ln(4/3)
        assert kl_blr(m, xs) == pytest.approx(HEADLINE_GAP, abs=1e-12)
        # without the noise term the answer would be infinite (singular);
        # this cell existing at all proves the noise sits in the joint.

    def test_nonnegative_on_random_gp_sets(self):
        rng = RngStream(seed=55).generator()
        gp = GaussianProcess(1.0, 1.0, 0.1)
        for _ in range(50):
            xs = rng.uniform(-2, 2, size=(5, 1))
            assert kl_gp(gp, xs) >= -1e-10


class TestMonteCarlo:
    def test_vectorized_terms_match_reference_loop(self):
        # Same sequences through the batched computation and the generic
        # log-loss calls; agreement must be exact to float addition.
        m = ConjugateGaussian(0.2, 0.9, 0.7)
        rng = RngStream(seed=60).generator()
        ys = np.array([m.sample_path(6, rng) for _ in range(8)])
        t = 2
        diffs = _conj_gap_diffs(m, ys, t)
        for i in range(8):
            state = m
            for j in range(t):
                state = state.condition(None, float(ys[i, j]))
            future = [(None, float(y)) for y in ys[i, t:]]
            want = marginal_product_logloss(state, future) - multistep_logloss(state, future)
            assert diffs[i] == pytest.approx(want, abs=1e-10)

    def test_conjugate_matches_closed_form(self):
        m = ConjugateGaussian(0.0, 1.0, 1.0)
        rng = RngStream(seed=61).generator()
        report = gap_monte_carlo(m, 0, 2, 100_000, rng)
        assert report.closed_form == pytest.approx(HEADLINE_GAP, abs=1e-12)
        assert abs(report.mc_mean - HEADLINE_GAP) <= 4 * report.mc_se
        assert report.mc_se < 0.01

    def test_generic_route_agrees(self):
        # Push the conjugate model through the generic state loop by
        # hiding its type behind a wrapper-free spot check: use the GP
        # machinery instead, where no closed form exists, then compare
        # against the KL route. Covariances do not depend on observed
        # values, so the KL is exact for any conditioning data.
        gp = GaussianProcess(1.0, 1.0, 0.1)
        rng = RngStream(seed=62).generator()
        xs_fixed = [np.array([v]) for v in (-1.5, -0.6, 0.1, 0.8, 1.7)]

        def x_sampler(r):
            # fixed design replayed cyclically: prefix 2, future 3
            i = x_sampler.calls % 5
            x_sampler.calls += 1
            return xs_fixed[i]

        x_sampler.calls = 0
        report = gap_monte_carlo(gp, 2, 5, 2000, rng, x_sampler=x_sampler)
        conditioned = gp.condition(xs_fixed[0], 0.3).condition(xs_fixed[1], -0.2)
        want = kl_gp(conditioned, np.array([x.tolist() for x in xs_fixed[2:]]))
        assert abs(report.mc_mean - want) <= 4 * report.mc_se

    def test_requires_multiple_sequences(self):
        m = ConjugateGaussian(0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            gap_monte_carlo(m, 0, 2, 1, RngStream(seed=1).generator())
