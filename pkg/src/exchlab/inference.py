"""Inference over sequence models: generation and log-loss evaluation.

Two inference regimes share one vocabulary here. One-step inference reads
a single marginal predictive per future point; multi-step inference rolls
the model forward, conditioning on its own samples, so that epistemic
uncertainty is carried across the generated future instead of being
re-mixed into every marginal.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from exchlab.core import DegenerateDensityError
from exchlab.models import SequenceModel


class InferenceKind(enum.Enum):
    ONE_STEP = "one_step"
    MULTI_STEP = "multi_step"


@dataclass(frozen=True)
class InferenceMode:
    """Inference regime plus its generation budget.

    One-step mode is pinned to a single generation per estimate; the whole
    point of that regime is that it never rolls the model forward.
    """

    kind: InferenceKind
    j_generations: int = 1

    def __post_init__(self) -> None:
        if self.j_generations < 1:
            raise ValueError("j_generations must be >= 1")
        if self.kind is InferenceKind.ONE_STEP and self.j_generations != 1:
            raise ValueError("one-step mode uses exactly one generation")

    @classmethod
    def one_step(cls) -> "InferenceMode":
        return cls(InferenceKind.ONE_STEP, 1)

    @classmethod
    def multi_step(cls, j_generations: int) -> "InferenceMode":
        return cls(InferenceKind.MULTI_STEP, j_generations)


@dataclass(frozen=True)
class GenerationResult:
    """Sampled continuations: samples[j, i] is trajectory j at step i.

    logpdf_terms holds the log density of each sample under the predictive
    it was drawn from; +inf marks a draw from a point mass (zero-width
    predictive), where the sample equals the atom by construction.
    """

    samples: np.ndarray
    logpdf_terms: np.ndarray

    @property
    def n_trajectories(self) -> int:
        return self.samples.shape[0]

    @property
    def n_steps(self) -> int:
        return self.samples.shape[1]


def _as_inputs(xs_target) -> list:
    if isinstance(xs_target, int):
        return [None] * xs_target
    return list(xs_target)


def generate_multistep(
    model: SequenceModel,
    xs_target,
    n_trajectories: int,
    rng: np.random.Generator,
) -> GenerationResult:
    """Draw n_trajectories independent autoregressive continuations.

    Each trajectory forks the caller's state, then alternates sample and
    condition along xs_target (an int means that many context-free steps).
    The caller's state is never touched.
    """
    inputs = _as_inputs(xs_target)
    if n_trajectories < 1:
        raise ValueError("n_trajectories must be >= 1")
    samples = np.empty((n_trajectories, len(inputs)))
    terms = np.empty((n_trajectories, len(inputs)))
    for j in range(n_trajectories):
        state = model
        for i, x in enumerate(inputs):
            y = state.sample_next(rng, x)
            samples[j, i] = y
            try:
                terms[j, i] = state.logpdf(y, x)
            except DegenerateDensityError:
                terms[j, i] = math.inf
            state = state.condition(x, y)
    return GenerationResult(samples=samples, logpdf_terms=terms)


def onestep_logloss(model: SequenceModel, y: float, x=None) -> float:
    """Negative log density of one observation under the current predictive."""
    return -model.logpdf(y, x)


def multistep_logloss(model: SequenceModel, pairs: Sequence[tuple]) -> float:
    """Teacher-forced joint negative log density of a target block.

    Each term conditions on the true preceding targets (never on model
    samples), so the sum is the exact log joint under the model's chain
    rule. Returns the sum over pairs of (x, y).
    """
    total = 0.0
    state = model
    for x, y in pairs:
        total -= state.logpdf(y, x)
        state = state.condition(x, y)
    return total


def marginal_product_logloss(model: SequenceModel, pairs: Sequence[tuple]) -> float:
    """Negative log of the product of current marginals, no conditioning.

    This is what repeated one-step inference implicitly scores: every
    future point is read from the same frozen predictive.
    """
    return -sum(model.logpdf(y, x) for x, y in pairs)


def posterior_mean_estimate(
    model: SequenceModel,
    mode: InferenceMode,
    rng: np.random.Generator,
    x_probe=None,
) -> float:
    """Estimate the latent mean at x_probe from one generation chain.

    Multi-step mode averages one autoregressive chain of j_generations
    samples at the probe (the chain keeps conditioning on its own draws,
    which integrates the noise away and leaves the latent). One-step mode
    is the single-sample special case: latent and noise stay conflated.

    Non-contextual models that expose the joint-law ``sample_path`` hook
    are sampled through it; the distribution of the estimate is identical.
    """
    j = mode.j_generations
    if x_probe is None and hasattr(model, "sample_path"):
        return float(np.mean(model.sample_path(j, rng)))
    result = generate_multistep(model, [x_probe] * j, 1, rng)
    return float(result.samples[0].mean())
