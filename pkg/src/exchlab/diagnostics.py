"""Quantifying the cost of one-step inference over a future block.

Three routes to the same quantity, kept deliberately separate so they can
cross-check each other:

* a closed form for the conjugate Gaussian family,
* a Monte Carlo estimate valid for any exchangeable model (average
  difference between the marginal-product log score and the joint
  teacher-forced log score on data from the true process),
* the KL divergence between a joint Gaussian predictive and the product
  of its marginals, which reduces to a determinant ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from exchlab.core import LOG_2PI, MultivariateGaussian
from exchlab.inference import generate_multistep, marginal_product_logloss, multistep_logloss
from exchlab.models import (
    BayesianLinearRegression,
    ConjugateGaussian,
    GaussianProcess,
    SequenceModel,
)


@dataclass(frozen=True)
class GapReport:
    """Monte Carlo estimate of the one-step/multi-step log-score gap.

    ``closed_form`` is filled when the model family has one (conjugate
    Gaussian); otherwise None and the caller compares against a KL route.
    """

    n_context: int
    horizon: int
    n_sequences: int
    mc_mean: float
    mc_se: float
    closed_form: float | None = None


def gap_closed_form_gaussian(
    prior_std: float, noise_std: float, n_context: int, horizon: int
) -> float:
    """Expected log-score gap for the conjugate Gaussian location model.

    With posterior variance v after n_context observations, the joint law
    of the remaining K = horizon - n_context points has covariance
    noise^2 I + v 11^T, and the gap is
    0.5 * [K ln(1 + v/noise^2) - ln(1 + K v/noise^2)].
    """
    if noise_std <= 0:
        raise ValueError("noise_std must be positive for the closed form")
    if n_context < 0 or horizon <= n_context:
        raise ValueError("need 0 <= n_context < horizon")
    k = horizon - n_context
    if prior_std == 0.0:
        return 0.0
    v = 1.0 / (1.0 / prior_std**2 + n_context / noise_std**2)
    r = v / noise_std**2
    return 0.5 * (k * math.log1p(r) - math.log1p(k * r))


def _conj_gap_diffs(model: ConjugateGaussian, ys: np.ndarray, n_context: int) -> np.ndarray:
    """Per-sequence (marginal-product minus joint) log-loss difference.

    ys is an (n, horizon) matrix of sequences from the true process.
    Vectorized across sequences; the posterior-variance recursion is data
    independent, the mean recursion is a running weighted sum. Matches
    the per-sequence loop over marginal_product_logloss/multistep_logloss
    exactly (same formulas, batched).
    """
    n, horizon = ys.shape
    tau2 = model.noise_std**2
    if tau2 == 0.0:
        raise ValueError("Monte Carlo gap needs positive observation noise")
    # posterior variance after i observations (scalar recursion)
    variances = np.empty(horizon + 1)
    variances[0] = model.post_var
    for i in range(horizon):
        v = variances[i]
        variances[i + 1] = v if v == 0.0 else 1.0 / (1.0 / v + 1.0 / tau2)
    # posterior means after each prefix, per sequence
    means = np.empty((n, horizon + 1))
    means[:, 0] = model.post_mean
    for i in range(horizon):
        v = variances[i]
        if v == 0.0:
            means[:, i + 1] = means[:, i]
        else:
            means[:, i + 1] = (means[:, i] / v + ys[:, i] / tau2) * variances[i + 1]

    def step_loglik(step: int, cond: int) -> np.ndarray:
        s2 = variances[cond] + tau2
        z2 = (ys[:, step] - means[:, cond]) ** 2 / s2
        return -0.5 * (LOG_2PI + np.log(s2) + z2)

    joint = np.zeros(n)
    marginal = np.zeros(n)
    for i in range(n_context, horizon):
        joint += step_loglik(i, i)           # conditions on all ys before step i
        marginal += step_loglik(i, n_context)  # frozen at the context boundary
    return joint - marginal


def _conj_sample_sequences(
    model: ConjugateGaussian, n: int, horizon: int, rng: np.random.Generator
) -> np.ndarray:
    latents = model.post_mean + math.sqrt(model.post_var) * rng.standard_normal(n)
    return latents[:, None] + model.noise_std * rng.standard_normal((n, horizon))


def gap_monte_carlo(
    model: SequenceModel,
    n_context: int,
    horizon: int,
    n_sequences: int,
    rng: np.random.Generator,
    x_sampler=None,
) -> GapReport:
    """Estimate the expected log-score gap on data from the model itself.

    Per sequence: draw a length-`horizon` chain from the model (prefix and
    future in one run), then score the future block both ways from the
    post-prefix state. Contextual models draw inputs iid via x_sampler.
    The conjugate family takes a vectorized path; anything else runs the
    generic state loop.
    """
    if n_sequences < 2:
        raise ValueError("n_sequences must be >= 2 to report a standard error")
    if n_context < 0 or horizon <= n_context:
        raise ValueError("need 0 <= n_context < horizon")
    closed = None
    if isinstance(model, ConjugateGaussian) and x_sampler is None:
        ys = _conj_sample_sequences(model, n_sequences, horizon, rng)
        diffs = _conj_gap_diffs(model, ys, n_context)
        if model.n_observed == 0:
            closed = gap_closed_form_gaussian(
                model.prior_std, model.noise_std, n_context, horizon
            )
    else:
        diffs = np.empty(n_sequences)
        for i in range(n_sequences):
            if x_sampler is None:
                xs = [None] * horizon
            else:
                xs = [x_sampler(rng) for _ in range(horizon)]
            chain = generate_multistep(model, xs, 1, rng).samples[0]
            state = model
            for j in range(n_context):
                state = state.condition(xs[j], float(chain[j]))
            future = [(xs[j], float(chain[j])) for j in range(n_context, horizon)]
            diffs[i] = marginal_product_logloss(state, future) - multistep_logloss(state, future)
    return GapReport(
        n_context=n_context,
        horizon=horizon,
        n_sequences=n_sequences,
        mc_mean=float(diffs.mean()),
        mc_se=float(diffs.std(ddof=1) / math.sqrt(n_sequences)),
        closed_form=closed,
    )


def kl_diagonalization(joint: MultivariateGaussian) -> float:
    """KL from a joint Gaussian to the product of its own marginals.

    Means cancel; what is left is half the log ratio of the diagonal
    determinant to the full determinant, nonnegative by Hadamard's
    inequality.
    """
    log_diag = float(np.sum(np.log(np.diag(joint.cov))))
    return 0.5 * (log_diag - joint.logdet())


def kl_blr(model: BayesianLinearRegression, xs) -> float:
    """Joint-vs-marginals KL for linear-regression observations at xs.

    The observation covariance includes the noise term; dropping it would
    overstate the correlation the latent weights induce.
    """
    return kl_diagonalization(model.joint_predictive(xs))


def kl_gp(model: GaussianProcess, xs) -> float:
    """Joint-vs-marginals KL for GP observations at xs (noise included)."""
    return kl_diagonalization(model.joint_predictive(xs))
