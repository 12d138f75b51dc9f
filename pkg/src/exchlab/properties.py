"""Property checkers: what a sequence model must satisfy to be trusted
as a posterior-in-disguise.

Two properties are checked empirically on a black-box predictive:

* permutation invariance of the predictive in the conditioning history,
* the martingale property of the predictive sequence (conditional
  identity in distribution): averaging the next-step predictive over one
  simulated observation must reproduce the current predictive.

The second is strictly stronger in practice: a model can use only
symmetric statistics of its history and still drift when it conditions
on its own samples. A small binary model built exactly that way lives in
``exchlab.models`` and is the canonical failing case.

Joint exchangeability is checked exactly, by enumeration, for discrete
models.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from exchlab.core import Gaussian
from exchlab.models import DiscreteDistribution, SequenceModel


class PropertyKind(enum.Enum):
    PERM_INVARIANCE = "perm_invariance"
    CID = "cid"
    JOINT_EXCHANGEABILITY = "joint_exchangeability"


@dataclass(frozen=True)
class PropertyReport:
    """Outcome of one property check.

    max_violation and tolerance are quoted at the most binding probe, in
    the check's native units (distribution-parameter distance for
    permutation checks, density/probability units for the martingale
    check, raw probability for exhaustive exchangeability), so
    ``passed == (max_violation <= tolerance)`` always holds.
    """

    kind: PropertyKind
    passed: bool
    max_violation: float
    tolerance: float
    evidence: tuple

    def as_dict(self) -> dict:
        return {
            "property": self.kind.value,
            "passed": self.passed,
            "max_violation": self.max_violation,
            "tolerance": self.tolerance,
            "evidence": list(self.evidence),
        }


class NondeterministicPredictiveError(RuntimeError):
    """The model returned different predictives for identical histories."""


def distribution_distance(a, b) -> float:
    """Distance between two predictives of the same family.

    Gaussians compare by max of |mean difference| and |std difference|;
    finite distributions by total variation.
    """
    if isinstance(a, Gaussian) and isinstance(b, Gaussian):
        return max(abs(a.mean - b.mean), abs(a.std - b.std))
    if isinstance(a, DiscreteDistribution) and isinstance(b, DiscreteDistribution):
        if a.values != b.values:
            raise ValueError("supports differ; distributions are not comparable")
        return 0.5 * sum(abs(p - q) for p, q in zip(a.probs, b.probs))
    raise TypeError(f"cannot compare {type(a).__name__} with {type(b).__name__}")


def _as_predictive_fn(model):
    """Accept a SequenceModel or a bare callable(context, x_probe)."""
    if isinstance(model, SequenceModel):

        def fn(context, x_probe):
            state = model
            for x, y in context:
                state = state.condition(x, y)
            return state.predictive(x_probe)

        return fn
    if callable(model):
        return model
    raise TypeError(f"expected a SequenceModel or callable, got {type(model).__name__}")


def check_perm_invariance(
    model,
    context,
    rng: np.random.Generator,
    n_permutations: int = 20,
    tol: float = 1e-9,
    x_probe=None,
) -> PropertyReport:
    """Does reordering the conditioning history move the predictive?

    The predictive must first be deterministic (two identical calls agree
    exactly); a stochastic predictive cannot be checked this way and
    raises. Histories shorter than 2 pass trivially.
    """
    fn = _as_predictive_fn(model)
    context = list(context)
    base = fn(context, x_probe)
    again = fn(context, x_probe)
    if distribution_distance(base, again) != 0.0:
        raise NondeterministicPredictiveError(
            "predictive changed between identical calls; disable any "
            "sampling inside the model (e.g. dropout) before checking"
        )
    if len(context) < 2:
        return PropertyReport(
            kind=PropertyKind.PERM_INVARIANCE,
            passed=True,
            max_violation=0.0,
            tolerance=tol,
            evidence=(
                {"note": f"history of length {len(context)} has a single ordering"},
            ),
        )
    evidence = []
    worst = 0.0
    for _ in range(n_permutations):
        order = rng.permutation(len(context))
        permuted = [context[i] for i in order]
        violation = distribution_distance(base, fn(permuted, x_probe))
        evidence.append({"order": [int(i) for i in order], "violation": violation})
        worst = max(worst, violation)
    return PropertyReport(
        kind=PropertyKind.PERM_INVARIANCE,
        passed=worst <= tol,
        max_violation=worst,
        tolerance=tol,
        evidence=tuple(evidence),
    )


def _bonferroni_threshold(se_multiplier: float, n_points: int) -> float:
    """Per-point z threshold whose family-wise false-alarm rate matches a
    single two-sided se_multiplier-SE test."""
    base_alpha = 2.0 * (1.0 - 0.5 * (1.0 + math.erf(se_multiplier / math.sqrt(2.0))))
    per_point = base_alpha / n_points
    return float(ndtri(1.0 - per_point / 2.0))


def _density_at(dist, y: float) -> float:
    if isinstance(dist, DiscreteDistribution):
        return dist.prob_of(y)
    return math.exp(dist.logpdf(y))


def check_cid(
    model,
    context,
    rng: np.random.Generator,
    n_mc: int = 4000,
    se_multiplier: float = 4.0,
    grid_size: int = 33,
    x_probe=None,
    x_sampler=None,
) -> PropertyReport:
    """Martingale check: E[next predictive density] == current density.

    One simulated observation is drawn from the model's own predictive
    (input drawn fresh from x_sampler for contextual models), the state
    is advanced, and the advanced predictive's density is averaged over
    n_mc such draws at a fixed probe grid. For a Gaussian predictive the
    grid spans mean +/- 4 std with grid_size points; finite distributions
    are probed on their support. Pass/fail applies se_multiplier-SE bands
    Bonferroni-adjusted across the grid.
    """
    fn = _as_predictive_fn(model)
    context = list(context)
    base = fn(context, x_probe)
    if isinstance(base, DiscreteDistribution):
        grid = list(base.values)
    else:
        grid = list(base.mean + 4.0 * base.std * np.linspace(-1.0, 1.0, grid_size))
    base_density = np.array([_density_at(base, y) for y in grid])
    densities = np.empty((n_mc, len(grid)))
    for s in range(n_mc):
        x_next = x_sampler(rng) if x_sampler is not None else None
        draw_dist = base if x_next is None else fn(context, x_next)
        y_sim = draw_dist.sample(rng)
        advanced = fn(context + [(x_next, float(y_sim))], x_probe)
        densities[s] = [_density_at(advanced, y) for y in grid]
    avg = densities.mean(axis=0)
    se = densities.std(axis=0, ddof=1) / math.sqrt(n_mc)
    z = _bonferroni_threshold(se_multiplier, len(grid))
    diffs = np.abs(avg - base_density)
    thresholds = z * se
    slack = diffs - thresholds
    binding = int(np.argmax(slack))
    evidence = tuple(
        {
            "probe": float(grid[i]),
            "current_density": float(base_density[i]),
            "averaged_density": float(avg[i]),
            "violation": float(diffs[i]),
            "threshold": float(thresholds[i]),
        }
        for i in range(len(grid))
    )
    return PropertyReport(
        kind=PropertyKind.CID,
        passed=bool(slack[binding] <= 0.0),
        max_violation=float(diffs[binding]),
        tolerance=float(thresholds[binding]),
        evidence=evidence,
    )


def check_joint_exchangeability(
    model: SequenceModel, n_steps: int, tol: float = 1e-12
) -> PropertyReport:
    """Exhaustive exchangeability check for finite-alphabet models.

    Enumerates every length-n_steps sequence, computes its joint
    probability by the chain rule, and compares probabilities within each
    permutation class. The worst within-class spread is the violation.
    """
    support = model.predictive().values
    if len(support) ** n_steps > 100_000:
        raise ValueError("enumeration too large; reduce n_steps")
    class_probs: dict[tuple, list[tuple[tuple, float]]] = {}
    for seq in itertools.product(support, repeat=n_steps):
        state = model
        prob = 1.0
        for y in seq:
            prob *= state.predictive().prob_of(y)
            state = state.condition(None, y)
        class_probs.setdefault(tuple(sorted(seq)), []).append((seq, prob))
    worst = 0.0
    exhibit = None
    for members in class_probs.values():
        lo, hi = min(members, key=lambda m: m[1]), max(members, key=lambda m: m[1])
        spread = hi[1] - lo[1]
        if spread > worst:
            worst = spread
            exhibit = {
                "sequence_high": list(hi[0]),
                "prob_high": hi[1],
                "sequence_low": list(lo[0]),
                "prob_low": lo[1],
            }
    evidence = (exhibit,) if exhibit is not None else ({"note": "all classes uniform"},)
    return PropertyReport(
        kind=PropertyKind.JOINT_EXCHANGEABILITY,
        passed=worst <= tol,
        max_violation=worst,
        tolerance=tol,
        evidence=evidence,
    )
