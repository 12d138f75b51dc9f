"""Exact Bayesian sequence models with immutable conditioning.

Every model maps an observation history to a one-step predictive
distribution. ``condition`` never mutates: it returns a new state, so a
state can be forked freely during simulation (generation, bandit rounds,
acquisition scoring) without defensive copies.

Non-contextual models follow the empty-context convention: they accept
``x=None`` and ignore it, so the same inference code drives contextual
and non-contextual models alike.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace

import numpy as np

from exchlab.core import (
    DegenerateDensityError,
    DimensionError,
    Gaussian,
    MultivariateGaussian,
    cholesky_with_jitter,
)

# Gram matrices are rebuilt from scratch up to this many points; past it,
# conditioning switches to an append-row Cholesky update.
GP_FULL_REFACTOR_MAX = 512


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite-support distribution; values and probabilities run in parallel."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != len(self.probs):
            raise DimensionError("values and probs must have equal length")
        if any(p < -1e-12 for p in self.probs):
            raise ValueError(f"negative probability in {self.probs}")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {sum(self.probs)}, not 1")

    def prob_of(self, y: float) -> float:
        for v, p in zip(self.values, self.probs):
            if v == y:
                return p
        raise ValueError(f"value {y} not in support {self.values}")

    def logpdf(self, y: float) -> float:
        p = self.prob_of(y)
        return math.log(p) if p > 0.0 else -math.inf

    def sample(self, rng: np.random.Generator) -> float:
        u = rng.random()
        acc = 0.0
        for v, p in zip(self.values, self.probs):
            acc += p
            if u < acc:
                return v
        return self.values[-1]


class SequenceModel(ABC):
    """One-step predictive model over a growing observation history."""

    contextual: bool = False

    @abstractmethod
    def condition(self, x, y: float) -> "SequenceModel":
        """Return the state after observing (x, y)."""

    @abstractmethod
    def predictive(self, x=None):
        """Distribution of the next observation at input x."""

    @property
    @abstractmethod
    def n_observed(self) -> int:
        """How many observations the state has absorbed."""

    def logpdf(self, y: float, x=None) -> float:
        return self.predictive(x).logpdf(y)

    def sample_next(self, rng: np.random.Generator, x=None) -> float:
        return float(self.predictive(x).sample(rng))

    def _require_context(self, x):
        if x is None and self.contextual:
            raise DimensionError(f"{type(self).__name__} requires an input point x")


# ---------------------------------------------------------------------------
# Conjugate Gaussian (latent location, known noise)


@dataclass(frozen=True)
class ConjugateGaussian(SequenceModel):
    """Gaussian location model: latent m ~ N(prior_mean, prior_std^2),
    observations y = m + N(0, noise_std^2).

    The posterior over m stays Gaussian; ``post_mean``/``post_var`` track it.
    A zero prior_std pins the latent at prior_mean regardless of data; a
    zero noise_std means one observation reveals the latent exactly.
    """

    prior_mean: float
    prior_std: float
    noise_std: float
    n_obs: int = 0
    post_mean: float | None = None
    post_var: float | None = None

    def __post_init__(self) -> None:
        if self.prior_std < 0 or self.noise_std < 0:
            raise ValueError("scales must be nonnegative")
        if self.post_mean is None:
            object.__setattr__(self, "post_mean", self.prior_mean)
        if self.post_var is None:
            object.__setattr__(self, "post_var", self.prior_std**2)

    @property
    def n_observed(self) -> int:
        return self.n_obs

    def condition(self, x, y: float) -> "ConjugateGaussian":
        if self.prior_std == 0.0:
            # Latent is already known exactly; data cannot move it.
            return replace(self, n_obs=self.n_obs + 1)
        if self.noise_std == 0.0:
            return replace(self, n_obs=self.n_obs + 1, post_mean=float(y), post_var=0.0)
        noise_prec = 1.0 / self.noise_std**2
        if self.post_var == 0.0:
            return replace(self, n_obs=self.n_obs + 1)
        prec = 1.0 / self.post_var + noise_prec
        var = 1.0 / prec
        mean = (self.post_mean / self.post_var + y * noise_prec) * var
        return replace(self, n_obs=self.n_obs + 1, post_mean=mean, post_var=var)

    def predictive(self, x=None) -> Gaussian:
        return Gaussian(self.post_mean, math.sqrt(self.post_var + self.noise_std**2))

    def joint_predictive(self, n_steps: int) -> MultivariateGaussian:
        """Joint law of the next n_steps observations: shared latent draw
        plus independent noise, i.e. noise^2 I + post_var * ones."""
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        cov = self.noise_std**2 * np.eye(n_steps) + self.post_var * np.ones((n_steps, n_steps))
        return MultivariateGaussian(np.full(n_steps, self.post_mean), cov)

    def sample_path(self, length: int, rng: np.random.Generator) -> np.ndarray:
        """Draw one length-`length` continuation, jointly.

        Distributionally identical to autoregressive generation (the joint
        law factorizes as one latent draw plus iid noise), but O(length)
        with a single vectorized noise draw. Used by the decision
        simulators; the autoregressive route stays the reference.
        """
        latent = self.post_mean + math.sqrt(self.post_var) * rng.standard_normal()
        return latent + self.noise_std * rng.standard_normal(length)

    def path_mean_samples(self, n_paths: int, path_len: int, rng: np.random.Generator) -> np.ndarray:
        """Means of n_paths independent length-path_len continuations."""
        latents = self.post_mean + math.sqrt(self.post_var) * rng.standard_normal(n_paths)
        noise_means = self.noise_std / math.sqrt(path_len) * rng.standard_normal(n_paths)
        return latents + noise_means


# ---------------------------------------------------------------------------
# Bayesian linear regression


@dataclass(frozen=True, eq=False)
class BayesianLinearRegression(SequenceModel):
    """Linear model y = w.x + noise with Gaussian weight posterior."""

    weight_mean: np.ndarray
    weight_cov: np.ndarray
    noise_std: float
    n_obs: int = 0

    contextual = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "weight_mean", np.asarray(self.weight_mean, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "weight_cov", np.asarray(self.weight_cov, dtype=np.float64))
        d = self.weight_mean.shape[0]
        if self.weight_cov.shape != (d, d):
            raise DimensionError(
                f"weight_cov shape {self.weight_cov.shape} does not match weight dim {d}"
            )
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    @property
    def dim(self) -> int:
        return self.weight_mean.shape[0]

    @property
    def n_observed(self) -> int:
        return self.n_obs

    def _as_input(self, x) -> np.ndarray:
        self._require_context(x)
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dim:
            raise DimensionError(f"input dim {x.shape[0]}, model expects {self.dim}")
        return x

    def condition(self, x, y: float) -> "BayesianLinearRegression":
        x = self._as_input(x)
        sx = self.weight_cov @ x
        denom = self.noise_std**2 + float(x @ sx)
        if denom <= 0.0:
            raise DegenerateDensityError("degenerate density: zero predictive variance")
        gain = sx / denom
        mean = self.weight_mean + gain * (y - float(x @ self.weight_mean))
        cov = self.weight_cov - np.outer(gain, sx)
        cov = 0.5 * (cov + cov.T)
        return replace(self, weight_mean=mean, weight_cov=cov, n_obs=self.n_obs + 1)

    def predictive(self, x=None) -> Gaussian:
        x = self._as_input(x)
        var = float(x @ self.weight_cov @ x) + self.noise_std**2
        return Gaussian(float(self.weight_mean @ x), math.sqrt(var))

    def joint_predictive(self, xs) -> MultivariateGaussian:
        """Joint law of observations at the rows of xs (noise included)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        if xs.shape[1] != self.dim:
            raise DimensionError(f"input dim {xs.shape[1]}, model expects {self.dim}")
        mean = xs @ self.weight_mean
        cov = xs @ self.weight_cov @ xs.T + self.noise_std**2 * np.eye(xs.shape[0])
        return MultivariateGaussian(mean, cov)


# ---------------------------------------------------------------------------
# Gaussian process regression (squared-exponential kernel)


@dataclass(frozen=True, eq=False)
class GaussianProcess(SequenceModel):
    """Zero-mean GP with kernel s^2 exp(-|x-x'|^2 / (2 l^2)) plus iid noise."""

    signal_std: float = 1.0
    lengthscale: float = 1.0
    noise_std: float = 0.1
    xs: np.ndarray | None = None
    ys: np.ndarray | None = None
    _chol: np.ndarray | None = None
    _alpha: np.ndarray | None = None

    contextual = True

    def __post_init__(self) -> None:
        if self.signal_std <= 0 or self.lengthscale <= 0:
            raise ValueError("signal_std and lengthscale must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    @property
    def n_observed(self) -> int:
        return 0 if self.xs is None else self.xs.shape[0]

    def _as_point(self, x) -> np.ndarray:
        self._require_context(x)
        return np.asarray(x, dtype=np.float64).reshape(-1)

    def kernel(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Gram block between rows of a and rows of b."""
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        sq = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
        return self.signal_std**2 * np.exp(-0.5 * sq / self.lengthscale**2)

    def condition(self, x, y: float) -> "GaussianProcess":
        x = self._as_point(x)
        if self.xs is None:
            xs = x[None, :]
            ys = np.array([float(y)])
        else:
            if x.shape[0] != self.xs.shape[1]:
                raise DimensionError(
                    f"input dim {x.shape[0]}, model expects {self.xs.shape[1]}"
                )
            xs = np.vstack([self.xs, x[None, :]])
            ys = np.append(self.ys, float(y))
        n = xs.shape[0]
        if n <= GP_FULL_REFACTOR_MAX or self._chol is None:
            gram = self.kernel(xs, xs) + self.noise_std**2 * np.eye(n)
            chol, _ = cholesky_with_jitter(gram)
        else:
            chol = self._append_row(xs, x)
        alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, ys))
        return replace(self, xs=xs, ys=ys, _chol=chol, _alpha=alpha)

    def _append_row(self, xs: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Extend the cached Cholesky factor by one observation row."""
        old = self._chol
        k_vec = self.kernel(xs[:-1], x[None, :]).reshape(-1)
        w = np.linalg.solve(old, k_vec)
        resid = float(self.signal_std**2 + self.noise_std**2 - w @ w)
        jitter = 0.0
        while resid + jitter <= 0.0 and jitter < 1e-8:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
        n = xs.shape[0]
        chol = np.zeros((n, n))
        chol[:-1, :-1] = old
        chol[-1, :-1] = w
        chol[-1, -1] = math.sqrt(resid + jitter)
        return chol

    def predictive(self, x=None) -> Gaussian:
        x = self._as_point(x)
        prior_var = self.signal_std**2 + self.noise_std**2
        if self.xs is None:
            return Gaussian(0.0, math.sqrt(prior_var))
        k_vec = self.kernel(self.xs, x[None, :]).reshape(-1)
        mean = float(k_vec @ self._alpha)
        w = np.linalg.solve(self._chol, k_vec)
        var = prior_var - float(w @ w)
        return Gaussian(mean, math.sqrt(max(var, 0.0)))

    def joint_predictive(self, xs_new) -> MultivariateGaussian:
        """Joint law of observations at xs_new rows, noise on the diagonal."""
        xs_new = np.atleast_2d(np.asarray(xs_new, dtype=np.float64))
        m = xs_new.shape[0]
        prior = self.kernel(xs_new, xs_new) + self.noise_std**2 * np.eye(m)
        if self.xs is None:
            return MultivariateGaussian(np.zeros(m), prior)
        cross = self.kernel(self.xs, xs_new)
        mean = cross.T @ self._alpha
        w = np.linalg.solve(self._chol, cross)
        cov = prior - w.T @ w
        return MultivariateGaussian(mean, 0.5 * (cov + cov.T))


# ---------------------------------------------------------------------------
# Binary model that is permutation-symmetric per step but not c.i.d.


@dataclass(frozen=True)
class BinaryMixtureCounterexample(SequenceModel):
    """Binary sequence model whose third step targets the recent average.

    Steps 1 and 2 predict P(0) = 1/3 regardless of history. From step 3
    on, P(0) = (mean of the two most recent observations). Each step's
    rule is a symmetric function of the inputs it reads, yet the predictive
    sequence is not a martingale, which is exactly the point: it separates
    per-step permutation symmetry from conditional identity in
    distribution. Histories longer than 2 break full permutation
    invariance (the rule privileges recency), so symmetry checks against
    this model are meaningful at history length 2.
    """

    history: tuple[int, ...] = ()

    @property
    def n_observed(self) -> int:
        return len(self.history)

    def condition(self, x, y: float) -> "BinaryMixtureCounterexample":
        yi = int(y)
        if yi not in (0, 1) or yi != y:
            raise ValueError(f"binary model observed {y}")
        return BinaryMixtureCounterexample(self.history + (yi,))

    def predictive(self, x=None) -> DiscreteDistribution:
        if len(self.history) < 2:
            p0 = 1.0 / 3.0
        else:
            p0 = (self.history[-1] + self.history[-2]) / 2.0
        return DiscreteDistribution((0.0, 1.0), (p0, 1.0 - p0))


# ---------------------------------------------------------------------------
# Beta-Bernoulli (urn scheme): exchangeable discrete reference model


@dataclass(frozen=True)
class BetaBernoulli(SequenceModel):
    """Bernoulli with Beta(alpha, beta) prior; predictive is the urn rule."""

    alpha: float = 1.0
    beta: float = 1.0
    n_ones: int = 0
    n_zeros: int = 0

    def __post_init__(self) -> None:
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")

    @property
    def n_observed(self) -> int:
        return self.n_ones + self.n_zeros

    def condition(self, x, y: float) -> "BetaBernoulli":
        yi = int(y)
        if yi not in (0, 1) or yi != y:
            raise ValueError(f"binary model observed {y}")
        if yi == 1:
            return replace(self, n_ones=self.n_ones + 1)
        return replace(self, n_zeros=self.n_zeros + 1)

    def predictive(self, x=None) -> DiscreteDistribution:
        p1 = (self.alpha + self.n_ones) / (self.alpha + self.beta + self.n_observed)
        return DiscreteDistribution((0.0, 1.0), (1.0 - p1, p1))


# ---------------------------------------------------------------------------
# Constant reward source (degenerate arm in bandit problems)


@dataclass(frozen=True)
class ConstantValue(SequenceModel):
    """Deterministic source: every observation equals `value`."""

    value: float
    n_obs: int = 0

    @property
    def n_observed(self) -> int:
        return self.n_obs

    def condition(self, x, y: float) -> "ConstantValue":
        return replace(self, n_obs=self.n_obs + 1)

    def predictive(self, x=None) -> Gaussian:
        return Gaussian(self.value, 0.0)

    def sample_path(self, length: int, rng: np.random.Generator) -> np.ndarray:
        return np.full(length, self.value)

    def path_mean_samples(self, n_paths: int, path_len: int, rng: np.random.Generator) -> np.ndarray:
        return np.full(n_paths, self.value)


# ---------------------------------------------------------------------------
# Independent per-cluster location models keyed by nearest center


@dataclass(frozen=True, eq=False)
class ClusteredGaussian(SequenceModel):
    """Contextual model: nearest cluster center selects an independent
    conjugate-Gaussian location model.

    This is the exact posterior for data generated as (cluster mean drawn
    once per cluster) + per-observation noise, which is how the active
    learning tasks are built, so it plays the role of the oracle
    predictive there.
    """

    centers: np.ndarray
    clusters: tuple[ConjugateGaussian, ...]

    contextual = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "centers", np.atleast_2d(np.asarray(self.centers, dtype=np.float64)))
        if self.centers.shape[0] != len(self.clusters):
            raise DimensionError("one cluster model per center required")

    @property
    def n_observed(self) -> int:
        return sum(c.n_obs for c in self.clusters)

    def cluster_of(self, x) -> int:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.centers.shape[1]:
            raise DimensionError(f"input dim {x.shape[0]}, centers have dim {self.centers.shape[1]}")
        d2 = np.sum((self.centers - x[None, :]) ** 2, axis=1)
        return int(np.argmin(d2))

    def condition(self, x, y: float) -> "ClusteredGaussian":
        self._require_context(x)
        k = self.cluster_of(x)
        clusters = tuple(
            c.condition(None, y) if i == k else c for i, c in enumerate(self.clusters)
        )
        return replace(self, clusters=clusters)

    def predictive(self, x=None) -> Gaussian:
        self._require_context(x)
        return self.clusters[self.cluster_of(x)].predictive()

    def path_mean_samples_batch(
        self, xs, n_paths: int, path_len: int, rng: np.random.Generator
    ) -> np.ndarray:
        """(len(xs), n_paths) matrix of continuation-path means.

        Vectorizes the per-point path sampling; each row is distributed
        exactly as n_paths independent autoregressive path means at that
        input (latent draw + averaged noise).
        """
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        ks = np.array([self.cluster_of(x) for x in xs])
        means = np.array([self.clusters[k].post_mean for k in ks])
        stds = np.array([math.sqrt(self.clusters[k].post_var) for k in ks])
        noise = np.array([self.clusters[k].noise_std for k in ks])
        latent = means[:, None] + stds[:, None] * rng.standard_normal((len(xs), n_paths))
        return latent + (noise[:, None] / math.sqrt(path_len)) * rng.standard_normal((len(xs), n_paths))
