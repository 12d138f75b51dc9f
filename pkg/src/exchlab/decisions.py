"""Decision-making simulators driven by sequence models.

Two testbeds where the one-step/multi-step distinction has teeth:

* Thompson sampling where the per-arm statistic is an average of model
  generations. A single generation (one-step) mixes reward noise into
  the decision forever; a long autoregressive chain (multi-step)
  integrates the noise away and recovers posterior-sample behavior.
* Uncertainty-based active learning where candidate inputs are scored by
  the variance of generation-path means. One-step scoring cannot tell
  epistemic from aleatoric spread; multi-step scoring can.

Runners are deterministic functions of (config, root stream): every
replication draws from its own named sub-stream, so results do not
depend on scheduling or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from exchlab.core import RngStream, cholesky_with_jitter
from exchlab.inference import InferenceMode, generate_multistep, posterior_mean_estimate
from exchlab.models import ClusteredGaussian, ConjugateGaussian, ConstantValue, SequenceModel


# ---------------------------------------------------------------------------
# Bandits


@dataclass(frozen=True)
class BanditArm:
    """One environment arm: either a Gaussian latent or a constant payout.

    Gaussian arms draw a latent value once per replication from
    N(latent_mean, latent_std^2) and pay that value plus
    N(0, noise_std^2) per pull. Constant arms always pay `constant`.
    Exactly one of the two parameterizations must be present.
    """

    latent_mean: float | None = None
    latent_std: float | None = None
    noise_std: float | None = None
    constant: float | None = None

    def __post_init__(self) -> None:
        gaussian = (self.latent_mean, self.latent_std, self.noise_std)
        has_gaussian = all(v is not None for v in gaussian)
        if has_gaussian == (self.constant is not None) or (
            not has_gaussian and any(v is not None for v in gaussian)
        ):
            raise ValueError("arm must be fully Gaussian or constant, not both or neither")

    @classmethod
    def gaussian(cls, latent_mean: float, latent_std: float, noise_std: float) -> "BanditArm":
        return cls(latent_mean=latent_mean, latent_std=latent_std, noise_std=noise_std)

    @classmethod
    def fixed(cls, value: float) -> "BanditArm":
        return cls(constant=value)

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def draw_latent(self, rng: np.random.Generator) -> float:
        if self.is_constant:
            return self.constant
        return self.latent_mean + self.latent_std * rng.standard_normal()

    def draw_reward(self, latent: float, rng: np.random.Generator) -> float:
        if self.is_constant:
            return self.constant
        return latent + self.noise_std * rng.standard_normal()

    def fresh_model(self) -> SequenceModel:
        """Sequence model matching this arm's true generative law."""
        if self.is_constant:
            return ConstantValue(self.constant)
        return ConjugateGaussian(self.latent_mean, self.latent_std, self.noise_std)


@dataclass(frozen=True)
class BanditConfig:
    arms: tuple[BanditArm, ...]
    horizon: int
    n_reps: int

    def __post_init__(self) -> None:
        if len(self.arms) < 2:
            raise ValueError("need at least two arms")
        if self.horizon < 1 or self.n_reps < 1:
            raise ValueError("horizon and n_reps must be positive")


@dataclass(frozen=True)
class RegretCurve:
    """Cumulative regret summarized across replications."""

    steps: np.ndarray        # (T,) 1-based round index
    mean: np.ndarray         # (T,) mean cumulative regret
    se: np.ndarray           # (T,) standard error across replications
    suboptimal_rate: np.ndarray  # (T,) fraction of reps pulling a worse arm at step t
    n_reps: int

    def slope(self, start_frac: float = 0.5) -> float:
        """Least-squares slope of mean regret over the trailing window."""
        start = int(len(self.steps) * start_frac)
        x = self.steps[start:]
        y = self.mean[start:]
        return float(np.polyfit(x, y, 1)[0])

    def overall_suboptimal_rate(self) -> float:
        return float(self.suboptimal_rate.mean())


@dataclass(frozen=True)
class BanditRunResult:
    """Per-replication trace of one bandit experiment."""

    arms_pulled: np.ndarray   # (n_reps, T) int
    rewards: np.ndarray       # (n_reps, T)
    cum_regret: np.ndarray    # (n_reps, T)
    latents: np.ndarray       # (n_reps, n_arms)
    rep_indices: tuple[int, ...]

    def regret_curve(self) -> RegretCurve:
        n_reps, horizon = self.cum_regret.shape
        best = self.latents.max(axis=1)
        suboptimal = self.latents[np.arange(n_reps), self.arms_pulled.T].T < best[:, None] - 1e-12
        return RegretCurve(
            steps=np.arange(1, horizon + 1, dtype=float),
            mean=self.cum_regret.mean(axis=0),
            se=self.cum_regret.std(axis=0, ddof=1) / math.sqrt(n_reps),
            suboptimal_rate=suboptimal.mean(axis=0),
            n_reps=n_reps,
        )


def _run_bandit(config, root, rep_indices, choose):
    reps = tuple(range(config.n_reps)) if rep_indices is None else tuple(rep_indices)
    n_arms = len(config.arms)
    arms_pulled = np.empty((len(reps), config.horizon), dtype=np.int64)
    rewards = np.empty((len(reps), config.horizon))
    cum_regret = np.empty((len(reps), config.horizon))
    latents = np.empty((len(reps), n_arms))
    for row, rep in enumerate(reps):
        rep_stream = root.numbered("rep", rep)
        env_rng = rep_stream.child("env").generator()
        arm_rngs = [rep_stream.numbered("arm", a).generator() for a in range(n_arms)]
        theta = np.array([arm.draw_latent(env_rng) for arm in config.arms])
        latents[row] = theta
        best = float(theta.max())
        states = [arm.fresh_model() for arm in config.arms]
        total_reward = 0.0
        for t in range(config.horizon):
            a = choose(states, arm_rngs)
            reward = config.arms[a].draw_reward(float(theta[a]), env_rng)
            states[a] = states[a].condition(None, reward)
            total_reward += reward
            arms_pulled[row, t] = a
            rewards[row, t] = reward
            cum_regret[row, t] = (t + 1) * best - total_reward
    return BanditRunResult(
        arms_pulled=arms_pulled,
        rewards=rewards,
        cum_regret=cum_regret,
        latents=latents,
        rep_indices=reps,
    )


def run_thompson_seqmodel(
    config: BanditConfig,
    mode: InferenceMode,
    root: RngStream,
    rep_indices: Sequence[int] | None = None,
) -> BanditRunResult:
    """Thompson-style selection from sequence-model generations.

    Each round scores every arm by the mean of one generation chain from
    that arm's model (one-step mode: a single generated reward;
    multi-step mode: a length-J autoregressive chain) and pulls the
    argmax, ties to the lowest index. Only the observed reward enters the
    pulled arm's state.
    """

    def choose(states, arm_rngs):
        stats = [
            posterior_mean_estimate(state, mode, arm_rng)
            for state, arm_rng in zip(states, arm_rngs)
        ]
        return int(np.argmax(stats))

    return _run_bandit(config, root, rep_indices, choose)


def run_thompson_exact(
    config: BanditConfig,
    root: RngStream,
    rep_indices: Sequence[int] | None = None,
) -> BanditRunResult:
    """Classic Thompson sampling from the exact per-arm posterior.

    Gaussian arms sample the latent from its conjugate posterior;
    constant arms contribute their known value.
    """

    def choose(states, arm_rngs):
        stats = []
        for state, arm_rng in zip(states, arm_rngs):
            if isinstance(state, ConjugateGaussian):
                stats.append(
                    state.post_mean + math.sqrt(state.post_var) * arm_rng.standard_normal()
                )
            else:
                stats.append(state.predictive().mean)
        return int(np.argmax(stats))

    return _run_bandit(config, root, rep_indices, choose)


# ---------------------------------------------------------------------------
# Active learning


@dataclass(frozen=True)
class ALTaskConfig:
    """Clustered regression task for active-learning experiments.

    Cluster centers sit on a lattice spaced 4x the cluster diameter, so
    membership is unambiguous. Each cluster's latent function is a
    cluster-wide value of scale value_std plus a short-lengthscale
    within-cluster wiggle at value_std^2/19 variance, keeping
    same-cluster correlation above 0.9 while clusters stay independent.
    Noise defaults alternate high/low across clusters.
    """

    n_clusters: int = 2
    dim: int = 1
    pool_per_cluster: int = 30
    test_per_cluster: int = 20
    cluster_radius: float = 0.5
    value_std: tuple[float, ...] | float = 1.0
    noise_std: tuple[float, ...] | None = None
    high_noise: float = 1.0
    low_noise: float = 0.1

    def per_cluster_value_std(self) -> tuple[float, ...]:
        if isinstance(self.value_std, tuple):
            if len(self.value_std) != self.n_clusters:
                raise ValueError("value_std tuple must have one entry per cluster")
            return self.value_std
        return (float(self.value_std),) * self.n_clusters

    def per_cluster_noise_std(self) -> tuple[float, ...]:
        if self.noise_std is not None:
            if len(self.noise_std) != self.n_clusters:
                raise ValueError("noise_std tuple must have one entry per cluster")
            return tuple(float(v) for v in self.noise_std)
        return tuple(
            self.high_noise if k % 2 == 0 else self.low_noise for k in range(self.n_clusters)
        )


@dataclass(frozen=True, eq=False)
class ALTask:
    """One sampled task: fixed pool, fixed labeled test set, hidden truth."""

    centers: np.ndarray          # (K, d)
    value_std: np.ndarray        # (K,)
    noise_std: np.ndarray        # (K,)
    pool_x: np.ndarray           # (N, d)
    pool_cluster: np.ndarray     # (N,) int
    pool_f: np.ndarray           # (N,) latent function at pool points
    test_x: np.ndarray           # (M, d)
    test_cluster: np.ndarray     # (M,) int
    test_y: np.ndarray           # (M,) noisy test labels

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[0]

    def observe(self, pool_index: int, rng: np.random.Generator) -> float:
        k = int(self.pool_cluster[pool_index])
        return float(self.pool_f[pool_index] + self.noise_std[k] * rng.standard_normal())

    def oracle_model(self) -> ClusteredGaussian:
        """Exact per-cluster location posterior for this task family.

        Per-cluster prior scale is the full marginal spread of the latent
        (cluster value plus wiggle).
        """
        clusters = tuple(
            ConjugateGaussian(
                prior_mean=0.0,
                prior_std=float(self.value_std[k]) * math.sqrt(20.0 / 19.0),
                noise_std=float(self.noise_std[k]),
            )
            for k in range(self.n_clusters)
        )
        return ClusteredGaussian(centers=self.centers, clusters=clusters)


def _lattice_centers(n_clusters: int, dim: int, spacing: float) -> np.ndarray:
    per_axis = math.ceil(n_clusters ** (1.0 / dim))
    coords = np.arange(per_axis, dtype=np.float64) * spacing
    grids = np.meshgrid(*([coords] * dim), indexing="ij")
    flat = np.stack([g.reshape(-1) for g in grids], axis=1)
    return flat[:n_clusters]


def sample_al_task(config: ALTaskConfig, stream: RngStream) -> ALTask:
    """Draw one task: centers, latent function, pool and test sets."""
    rng = stream.child("task").generator()
    spacing = 4.0 * (2.0 * config.cluster_radius)
    centers = _lattice_centers(config.n_clusters, config.dim, spacing)
    value_std = np.array(config.per_cluster_value_std())
    noise_std = np.array(config.per_cluster_noise_std())

    def draw_points(per_cluster: int):
        xs, ks = [], []
        for k in range(config.n_clusters):
            offsets = rng.uniform(-config.cluster_radius, config.cluster_radius,
                                  size=(per_cluster, config.dim))
            xs.append(centers[k] + offsets)
            ks.extend([k] * per_cluster)
        return np.vstack(xs), np.array(ks, dtype=np.int64)

    pool_x, pool_cluster = draw_points(config.pool_per_cluster)
    test_x, test_cluster = draw_points(config.test_per_cluster)

    def latent_values(xs: np.ndarray, ks: np.ndarray) -> np.ndarray:
        out = np.empty(xs.shape[0])
        wiggle_ls = config.cluster_radius / 2.0
        for k in range(config.n_clusters):
            mask = ks == k
            pts = xs[mask]
            base = value_std[k] * rng.standard_normal()
            wiggle_var = value_std[k] ** 2 / 19.0
            if wiggle_var > 0 and pts.shape[0] > 0:
                sq = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
                cov = wiggle_var * np.exp(-0.5 * sq / wiggle_ls**2)
                chol, _ = cholesky_with_jitter(cov + 1e-12 * np.eye(pts.shape[0]))
                wiggle = chol @ rng.standard_normal(pts.shape[0])
            else:
                wiggle = np.zeros(pts.shape[0])
            out[mask] = base + wiggle
        return out

    # one latent surface shared by pool and test: evaluate jointly
    all_x = np.vstack([pool_x, test_x])
    all_k = np.concatenate([pool_cluster, test_cluster])
    all_f = latent_values(all_x, all_k)
    pool_f = all_f[: pool_x.shape[0]]
    test_f = all_f[pool_x.shape[0]:]
    test_y = test_f + noise_std[test_cluster] * rng.standard_normal(test_x.shape[0])
    return ALTask(
        centers=centers,
        value_std=value_std,
        noise_std=noise_std,
        pool_x=pool_x,
        pool_cluster=pool_cluster,
        pool_f=pool_f,
        test_x=test_x,
        test_cluster=test_cluster,
        test_y=test_y,
    )


@dataclass(frozen=True)
class ALRunResult:
    """One active-learning run: queries made and test loss after each."""

    queried_indices: np.ndarray   # (horizon,) int pool indices
    queried_clusters: np.ndarray  # (horizon,) int
    test_nll: np.ndarray          # (horizon,) mean test NLL after each update


@dataclass(frozen=True)
class LossCurve:
    """Per-step loss summarized across runs (one run per seed)."""

    steps: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    n_runs: int

    @classmethod
    def from_runs(cls, losses: Sequence[np.ndarray]) -> "LossCurve":
        stack = np.stack(list(losses))
        n = stack.shape[0]
        return cls(
            steps=np.arange(1, stack.shape[1] + 1, dtype=float),
            mean=stack.mean(axis=0),
            se=stack.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(stack.shape[1]),
            n_runs=n,
        )


def _path_mean_scores(
    model: SequenceModel, xs: np.ndarray, mode: InferenceMode, i_paths: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Variance of generation-path means for every candidate row of xs."""
    if hasattr(model, "path_mean_samples_batch"):
        means = model.path_mean_samples_batch(xs, i_paths, mode.j_generations, rng)
        return means.var(axis=1, ddof=1)
    scores = np.empty(xs.shape[0])
    for i, x in enumerate(xs):
        result = generate_multistep(model, [x] * mode.j_generations, i_paths, rng)
        scores[i] = result.samples.mean(axis=1).var(ddof=1)
    return scores


def run_uncertainty_sampling(
    task: ALTask,
    mode: InferenceMode,
    stream: RngStream,
    horizon: int,
    i_paths: int = 20,
    model: SequenceModel | None = None,
) -> ALRunResult:
    """Query the pool by largest variance of generation-path means.

    Each step scores every unqueried pool point with i_paths independent
    generation paths of length mode.j_generations (one-step mode: single
    draws, so the score conflates noise with uncertainty about the
    latent), queries the argmax (ties to the lowest index), conditions
    the model on the observed label, and records mean test NLL.
    """
    if horizon > task.pool_x.shape[0]:
        raise ValueError("horizon exceeds pool size")
    if i_paths < 2:
        raise ValueError("need at least two paths to estimate a variance")
    state = task.oracle_model() if model is None else model
    score_rng = stream.child("scores").generator()
    label_rng = stream.child("labels").generator()
    available = np.ones(task.pool_x.shape[0], dtype=bool)
    queried = np.empty(horizon, dtype=np.int64)
    clusters = np.empty(horizon, dtype=np.int64)
    nll = np.empty(horizon)
    for t in range(horizon):
        idx = np.flatnonzero(available)
        scores = _path_mean_scores(state, task.pool_x[idx], mode, i_paths, score_rng)
        pick = int(idx[int(np.argmax(scores))])
        y = task.observe(pick, label_rng)
        state = state.condition(task.pool_x[pick], y)
        available[pick] = False
        queried[t] = pick
        clusters[t] = task.pool_cluster[pick]
        nll[t] = -float(
            np.mean([state.logpdf(float(yy), xx) for xx, yy in zip(task.test_x, task.test_y)])
        )
    return ALRunResult(queried_indices=queried, queried_clusters=clusters, test_nll=nll)
