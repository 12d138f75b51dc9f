"""Experiment implementations behind the command-line subcommands.

Each ``cmd_*`` function takes a fully resolved config dict (already
validated against the command's default tree) and writes one artifact.
All randomness descends from ``config["seed"]`` through named
substreams, so every run is a pure function of its config. Replicated
experiments (uq, bandit, active) split replication indices across
worker processes; per-replication streams are addressed by index, so
the merged result is identical for any worker count. The worker count
is an execution detail, not part of the experiment identity, so it is
excluded from the config block embedded in output headers — files are
byte-identical across worker counts.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from itertools import repeat

import numpy as np

from exchlab.cli.config import ConfigError
from exchlab.cli.output import write_csv, write_json
from exchlab.core import RngStream
from exchlab.decisions import (
    ALTaskConfig,
    BanditArm,
    BanditConfig,
    BanditRunResult,
    LossCurve,
    run_thompson_exact,
    run_thompson_seqmodel,
    run_uncertainty_sampling,
    sample_al_task,
)
from exchlab.diagnostics import gap_closed_form_gaussian, gap_monte_carlo
from exchlab.inference import InferenceMode, posterior_mean_estimate
from exchlab.models import BetaBernoulli, BinaryMixtureCounterexample, ConjugateGaussian
from exchlab.properties import (
    check_cid,
    check_joint_exchangeability,
    check_perm_invariance,
)
from exchlab.tinyformer import (
    GPDataConfig,
    MaskScheme,
    OptimizerConfig,
    TransformerConfig,
    TransformerWeights,
    parameter_count,
    predictive_fn,
    save_checkpoint,
    train,
)
from exchlab.tinyformer.masks import build_mask
from exchlab.tinyformer.model import forward, tokens_from_batch
from exchlab.tinyformer.train import sample_gp_batch

__all__ = [
    "BudgetExceededError",
    "cmd_active",
    "cmd_arch",
    "cmd_bandit",
    "cmd_gap",
    "cmd_propcheck",
    "cmd_train",
    "cmd_uq",
    "estimate_training_flops",
]

LOG_2PI = math.log(2.0 * math.pi)


class BudgetExceededError(Exception):
    """Estimated compute exceeds the configured budget; run refused."""


# ---------------------------------------------------------------------------
# Defaults (one tree per subcommand; config files/flags override keys)

GAP_DEFAULTS: dict = {
    "seed": 0,
    "prior_stds": [0.1, 0.5, 1.0, 2.0],
    "noise_stds": [1.0],
    "n_contexts": [0, 1, 5],
    "n_futures": [2, 5, 10],
    "n_sequences": 20000,
    "out": "gap.csv",
}

UQ_DEFAULTS: dict = {
    "seed": 0,
    "prior_mean": 0.0,
    "prior_std": 1.0,
    "noise_std": 1.0,
    "n_context": 5,
    "chain_lengths": [1, 2, 5, 10, 20, 50, 100],
    "n_reps": 1000,
    "workers": 1,
    "out": "uq.csv",
}

BANDIT_DEFAULTS: dict = {
    "seed": 0,
    "horizon": 100,
    "n_reps": 200,
    "chain_length": 100,
    "arms": [
        {"kind": "gaussian", "latent_mean": 0.0, "latent_std": 0.5, "noise_std": 0.5},
        {"kind": "gaussian", "latent_mean": 0.0, "latent_std": 0.9, "noise_std": 0.1},
    ],
    "modes": ["one_step", "multi_step", "exact"],
    "workers": 1,
    "out": "bandit.csv",
}

ACTIVE_DEFAULTS: dict = {
    "seed": 0,
    "n_seeds": 50,
    "horizon": 30,
    "i_paths": 20,
    "chain_length": 20,
    "task": {
        "n_clusters": 2,
        "dim": 1,
        "pool_per_cluster": 30,
        "test_per_cluster": 20,
        "cluster_radius": 0.5,
        "value_std": [0.05, 1.0],
        "noise_std": [1.14, 0.5],
        "high_noise": 1.0,
        "low_noise": 0.1,
    },
    "modes": ["one_step", "multi_step"],
    "workers": 1,
    "out": "active.csv",
}

PROPCHECK_DEFAULTS: dict = {
    "seed": 0,
    "model": "counterexample",
    "model_params": {},
    "context": [1],
    "x_probe": None,
    "checks": ["perm_invariance", "cid"],
    "n_permutations": 20,
    "perm_tol": None,
    "n_mc": 4000,
    "joint_steps": 3,
    "x_low": -2.0,
    "x_high": 2.0,
    "out": "propcheck.json",
}

_MODEL_DEFAULTS: dict = {
    "x_dim": 1,
    "d_model": 64,
    "d_ff": 256,
    "n_heads": 4,
    "n_layers": 4,
    "dropout": 0.1,
    "embed_hidden": [256, 64],
    "std_floor": 1e-4,
}

_DATA_DEFAULTS: dict = {
    "signal_std": 1.0,
    "lengthscale": 1.0,
    "noise_std": 0.1,
    "x_low": -2.0,
    "x_high": 2.0,
    "x_dim": 1,
}

_OPT_DEFAULTS: dict = {
    "lr_max": 3e-4,
    "lr_min": 3e-5,
    "warmup_ratio": 0.03,
    "weight_decay": 0.01,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "batch_size": 64,
}

TRAIN_DEFAULTS: dict = {
    "seed": 0,
    "scheme": "c_perm",
    "model": dict(_MODEL_DEFAULTS),
    "data": dict(_DATA_DEFAULTS),
    "opt": dict(_OPT_DEFAULTS),
    "n_epochs": 20,
    "steps_per_epoch": 40,
    "horizon": 32,
    "val_batches": 4,
    "val_context_lens": [2, 5, 10, 20],
    "flop_budget": 5e13,
    "checkpoint": "model.ckpt",
    "out": "train_log.csv",
}

ARCH_DEFAULTS: dict = {
    "seed": 0,
    "model": dict(_MODEL_DEFAULTS),
    "data": dict(_DATA_DEFAULTS),
    "opt": dict(_OPT_DEFAULTS),
    "n_epochs": 10,
    "steps_per_epoch": 40,
    "train_horizon": 15,
    "eval_context_lens": [2, 5, 10, 14, 20, 30],
    "eval_block": 5,
    "n_eval_sequences": 256,
    "flop_budget": 5e13,
    "out": "arch.csv",
}


# ---------------------------------------------------------------------------
# Shared plumbing

def _require_positive(config: dict, *keys: str) -> None:
    for key in keys:
        if config[key] < 1:
            raise ConfigError(f"config key {key} must be >= 1")


def _inference_mode(name: str, chain_length: int) -> InferenceMode:
    if name == "one_step":
        return InferenceMode.one_step()
    if name == "multi_step":
        return InferenceMode.multi_step(chain_length)
    raise ConfigError(f"unknown inference mode {name!r} (expected one_step or multi_step)")


def _mask_scheme(name: str) -> MaskScheme:
    if name == "c_perm":
        return MaskScheme.c_perm()
    if name == "causal":
        return MaskScheme.causal()
    raise ConfigError(f"unknown scheme {name!r} (expected c_perm or causal)")


def _provenance(config: dict) -> dict:
    """Config as embedded in artifacts: execution details stripped."""
    return {k: v for k, v in config.items() if k != "workers"}


def _chunks(n_items: int, n_workers: int) -> list[tuple[int, ...]]:
    """Contiguous ascending index ranges; concatenation restores order."""
    n_workers = max(1, min(int(n_workers), n_items))
    base, extra = divmod(n_items, n_workers)
    out = []
    start = 0
    for w in range(n_workers):
        size = base + (1 if w < extra else 0)
        if size:
            out.append(tuple(range(start, start + size)))
        start += size
    return out


def _map_chunks(worker, args: tuple, n_items: int, n_workers: int) -> list:
    """Run worker(args, chunk) over index chunks, in order.

    A single chunk runs in-process; multiple chunks fan out to a process
    pool. Both paths execute the identical per-index computation, so the
    merged output does not depend on the split.
    """
    chunks = _chunks(n_items, n_workers)
    if len(chunks) == 1:
        return [worker(args, chunks[0])]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        return list(pool.map(worker, repeat(args), chunks))


# ---------------------------------------------------------------------------
# gap: predicted-information gain of the joint over the marginal product

def cmd_gap(config: dict) -> None:
    """Closed-form vs Monte Carlo log-score gap over a parameter grid."""
    if config["n_sequences"] < 2:
        raise ConfigError("config key n_sequences must be >= 2")
    for key in ("prior_stds", "noise_stds", "n_contexts", "n_futures"):
        if not config[key]:
            raise ConfigError(f"config key {key} must be a non-empty list")
    root = RngStream(config["seed"]).child("gap")
    rows = []
    for sigma in (float(v) for v in config["prior_stds"]):
        for tau in (float(v) for v in config["noise_stds"]):
            for t in (int(v) for v in config["n_contexts"]):
                for k in (int(v) for v in config["n_futures"]):
                    horizon = t + k
                    closed = gap_closed_form_gaussian(sigma, tau, t, horizon)
                    model = ConjugateGaussian(0.0, sigma, tau)
                    rng = root.child(f"cell/{sigma!r}/{tau!r}/{t}/{horizon}").generator()
                    report = gap_monte_carlo(model, t, horizon, config["n_sequences"], rng)
                    rows.append((sigma, tau, t, horizon, closed, report.mc_mean, report.mc_se))
    write_csv(
        config["out"],
        "gap",
        _provenance(config),
        ("sigma", "tau", "t", "T", "closed_form", "mc_mean", "mc_se"),
        rows,
    )


# ---------------------------------------------------------------------------
# uq: posterior-mean estimation error vs generation-chain length

def _uq_chunk(args: tuple, indices: tuple[int, ...]) -> np.ndarray:
    prior_mean, prior_std, noise_std, n_context, chain_lengths, seed = args
    root = RngStream(seed).child("uq")
    sq_err = np.empty((len(indices), len(chain_lengths)))
    for row, rep in enumerate(indices):
        rep_stream = root.numbered("rep", rep)
        state = ConjugateGaussian(prior_mean, prior_std, noise_std)
        ctx_rng = rep_stream.child("context").generator()
        for _ in range(n_context):
            y = float(state.predictive().sample(ctx_rng))
            state = state.condition(None, y)
        for col, j in enumerate(chain_lengths):
            est_rng = rep_stream.numbered("chain", j).generator()
            mode = _inference_mode("one_step" if j == 1 else "multi_step", j)
            estimate = posterior_mean_estimate(state, mode, est_rng)
            sq_err[row, col] = (estimate - state.post_mean) ** 2
    return sq_err


def cmd_uq(config: dict) -> None:
    """Squared error of chain-mean estimates of the posterior mean.

    Each replication conditions a fresh conjugate model on its own
    simulated context, then estimates the posterior mean from one
    generation chain per configured length. The theory column is the
    exact mean squared error: posterior variance plus noise variance
    over the chain length (the irreducible epistemic floor plus the
    averaged-out aleatoric part).
    """
    _require_positive(config, "n_reps", "workers")
    if config["n_reps"] < 2:
        raise ConfigError("config key n_reps must be >= 2 to report a standard error")
    if config["n_context"] < 0:
        raise ConfigError("config key n_context must be >= 0")
    chain_lengths = [int(j) for j in config["chain_lengths"]]
    if not chain_lengths or min(chain_lengths) < 1:
        raise ConfigError("config key chain_lengths must list integers >= 1")
    args = (
        float(config["prior_mean"]),
        float(config["prior_std"]),
        float(config["noise_std"]),
        int(config["n_context"]),
        tuple(chain_lengths),
        config["seed"],
    )
    parts = _map_chunks(_uq_chunk, args, config["n_reps"], config["workers"])
    sq_err = np.vstack(parts)

    theory_state = ConjugateGaussian(args[0], args[1], args[2])
    for _ in range(args[3]):
        theory_state = theory_state.condition(None, 0.0)
    rows = []
    n = sq_err.shape[0]
    for col, j in enumerate(chain_lengths):
        theory = theory_state.post_var + args[2] ** 2 / j
        rows.append(
            (
                j,
                n,
                float(sq_err[:, col].mean()),
                float(sq_err[:, col].std(ddof=1) / math.sqrt(n)),
                float(theory),
            )
        )
    write_csv(
        config["out"],
        "uq",
        _provenance(config),
        ("chain_length", "n_reps", "mse", "se", "theory_mse"),
        rows,
    )


# ---------------------------------------------------------------------------
# bandit: Thompson-style selection under the three inference regimes

def _parse_arm(spec: dict, index: int) -> BanditArm:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"config key arms[{index}] must be an object with a kind")
    kind = spec.get("kind")
    known_gaussian = {"kind", "latent_mean", "latent_std", "noise_std"}
    known_constant = {"kind", "value"}
    if kind == "gaussian":
        extra = set(spec) - known_gaussian
        if extra:
            raise ConfigError(f"config key arms[{index}].{sorted(extra)[0]} is unknown")
        try:
            return BanditArm.gaussian(
                float(spec["latent_mean"]), float(spec["latent_std"]), float(spec["noise_std"])
            )
        except KeyError as exc:
            raise ConfigError(f"config key arms[{index}].{exc.args[0]} is missing") from exc
    if kind == "constant":
        extra = set(spec) - known_constant
        if extra:
            raise ConfigError(f"config key arms[{index}].{sorted(extra)[0]} is unknown")
        if "value" not in spec:
            raise ConfigError(f"config key arms[{index}].value is missing")
        return BanditArm.fixed(float(spec["value"]))
    raise ConfigError(f"config key arms[{index}].kind must be gaussian or constant")


def _bandit_chunk(args: tuple, indices: tuple[int, ...]) -> BanditRunResult:
    bandit_config, mode_name, chain_length, seed = args
    root = RngStream(seed).child("bandit")
    if mode_name == "exact":
        return run_thompson_exact(bandit_config, root, indices)
    mode = _inference_mode(mode_name, chain_length)
    return run_thompson_seqmodel(bandit_config, mode, root, indices)


def _merge_bandit(parts: list[BanditRunResult]) -> BanditRunResult:
    return BanditRunResult(
        arms_pulled=np.vstack([p.arms_pulled for p in parts]),
        rewards=np.vstack([p.rewards for p in parts]),
        cum_regret=np.vstack([p.cum_regret for p in parts]),
        latents=np.vstack([p.latents for p in parts]),
        rep_indices=tuple(i for p in parts for i in p.rep_indices),
    )


def cmd_bandit(config: dict) -> None:
    """Cumulative-regret curves for the configured selection regimes.

    All regimes share the per-replication substreams (common random
    numbers), so curves are paired across regimes.
    """
    _require_positive(config, "horizon", "chain_length", "workers")
    if config["n_reps"] < 2:
        raise ConfigError("config key n_reps must be >= 2 to report a standard error")
    arms = tuple(_parse_arm(spec, i) for i, spec in enumerate(config["arms"]))
    try:
        bandit_config = BanditConfig(arms, int(config["horizon"]), int(config["n_reps"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    mode_names = list(config["modes"])
    if not mode_names:
        raise ConfigError("config key modes must be a non-empty list")
    for name in mode_names:
        if name not in ("one_step", "multi_step", "exact"):
            raise ConfigError(f"unknown bandit mode {name!r}")
    rows = []
    for name in mode_names:
        args = (bandit_config, name, int(config["chain_length"]), config["seed"])
        parts = _map_chunks(_bandit_chunk, args, config["n_reps"], config["workers"])
        curve = _merge_bandit(parts).regret_curve()
        for i in range(len(curve.steps)):
            rows.append(
                (
                    name,
                    int(curve.steps[i]),
                    float(curve.mean[i]),
                    float(curve.se[i]),
                    float(curve.suboptimal_rate[i]),
                    curve.n_reps,
                )
            )
    write_csv(
        config["out"],
        "bandit",
        _provenance(config),
        ("mode", "step", "mean_regret", "se_regret", "suboptimal_rate", "n_reps"),
        rows,
    )


# ---------------------------------------------------------------------------
# active: pool-based uncertainty sampling on the clustered task family

def _active_task_config(spec: dict) -> ALTaskConfig:
    value_std = spec["value_std"]
    if isinstance(value_std, list):
        value_std = tuple(float(v) for v in value_std)
    else:
        value_std = float(value_std)
    noise_std = spec["noise_std"]
    if isinstance(noise_std, list):
        noise_std = tuple(float(v) for v in noise_std)
    elif noise_std is not None:
        raise ConfigError("config key task.noise_std must be a list or null")
    try:
        return ALTaskConfig(
            n_clusters=int(spec["n_clusters"]),
            dim=int(spec["dim"]),
            pool_per_cluster=int(spec["pool_per_cluster"]),
            test_per_cluster=int(spec["test_per_cluster"]),
            cluster_radius=float(spec["cluster_radius"]),
            value_std=value_std,
            noise_std=noise_std,
            high_noise=float(spec["high_noise"]),
            low_noise=float(spec["low_noise"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _active_chunk(args: tuple, indices: tuple[int, ...]) -> dict:
    task_cfg, mode_names, chain_length, i_paths, horizon, seed = args
    root = RngStream(seed).child("active")
    nlls: dict[str, list[np.ndarray]] = {m: [] for m in mode_names}
    first_epistemic: dict[str, list[bool]] = {m: [] for m in mode_names}
    for s in indices:
        seed_stream = root.numbered("seed", s)
        task = sample_al_task(task_cfg, seed_stream.child("task"))
        epistemic_cluster = int(np.argmax(task.value_std))
        for name in mode_names:
            mode = _inference_mode(name, chain_length)
            run = run_uncertainty_sampling(
                task, mode, seed_stream.child(f"run/{name}"), horizon, i_paths=i_paths
            )
            nlls[name].append(run.test_nll)
            first_epistemic[name].append(int(run.queried_clusters[0]) == epistemic_cluster)
    return {"nlls": nlls, "first_epistemic": first_epistemic}


def cmd_active(config: dict) -> None:
    """Test-loss curves for uncertainty sampling under both regimes.

    Both regimes see the same sampled task per seed (paired comparison).
    Header metadata reports, per regime, the fraction of seeds whose
    first query landed in the cluster with the widest latent spread.
    """
    _require_positive(config, "horizon", "chain_length", "workers")
    if config["n_seeds"] < 2:
        raise ConfigError("config key n_seeds must be >= 2 to report a standard error")
    if config["i_paths"] < 2:
        raise ConfigError("config key i_paths must be >= 2")
    task_cfg = _active_task_config(config["task"])
    mode_names = list(config["modes"])
    if not mode_names:
        raise ConfigError("config key modes must be a non-empty list")
    for name in mode_names:
        _inference_mode(name, config["chain_length"])  # validates the name
    args = (
        task_cfg,
        tuple(mode_names),
        int(config["chain_length"]),
        int(config["i_paths"]),
        int(config["horizon"]),
        config["seed"],
    )
    try:
        parts = _map_chunks(_active_chunk, args, config["n_seeds"], config["workers"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = []
    meta = []
    for name in mode_names:
        losses = [arr for part in parts for arr in part["nlls"][name]]
        firsts = [b for part in parts for b in part["first_epistemic"][name]]
        curve = LossCurve.from_runs(losses)
        meta.append(
            (f"first_query_widest_cluster_fraction_{name}", float(np.mean(firsts)))
        )
        for i in range(len(curve.steps)):
            rows.append(
                (
                    name,
                    int(curve.steps[i]),
                    float(curve.mean[i]),
                    float(curve.se[i]),
                    curve.n_runs,
                )
            )
    write_csv(
        config["out"],
        "active",
        _provenance(config),
        ("mode", "step", "mean_nll", "se_nll", "n_seeds"),
        rows,
        extra_meta=meta,
    )


# ---------------------------------------------------------------------------
# propcheck: property reports for a configured model

_PROPCHECK_MODELS = (
    "counterexample",
    "conjugate",
    "beta_bernoulli",
    "tinyformer_cperm",
    "tinyformer_causal",
)


def _build_propcheck_model(config: dict):
    """Returns (model-or-callable, is_contextual, default_perm_tol)."""
    name = config["model"]
    params = dict(config["model_params"])
    if name == "counterexample":
        if params:
            raise ConfigError(f"config key model_params.{sorted(params)[0]} is unknown")
        return BinaryMixtureCounterexample(), False, 1e-9
    if name == "conjugate":
        known = {"prior_mean", "prior_std", "noise_std"}
        extra = set(params) - known
        if extra:
            raise ConfigError(f"config key model_params.{sorted(extra)[0]} is unknown")
        return (
            ConjugateGaussian(
                float(params.get("prior_mean", 0.0)),
                float(params.get("prior_std", 1.0)),
                float(params.get("noise_std", 1.0)),
            ),
            False,
            1e-9,
        )
    if name == "beta_bernoulli":
        known = {"alpha", "beta"}
        extra = set(params) - known
        if extra:
            raise ConfigError(f"config key model_params.{sorted(extra)[0]} is unknown")
        return (
            BetaBernoulli(float(params.get("alpha", 1.0)), float(params.get("beta", 1.0))),
            False,
            1e-9,
        )
    if name in ("tinyformer_cperm", "tinyformer_causal"):
        init_seed = int(params.pop("init_seed", config["seed"]))
        if "embed_hidden" in params:
            params["embed_hidden"] = tuple(params["embed_hidden"])
        try:
            model_cfg = TransformerConfig(**params)
        except TypeError as exc:
            raise ConfigError(f"bad model_params for {name}: {exc}") from exc
        weights = TransformerWeights.init(
            model_cfg, RngStream(init_seed).child("weights").generator()
        )
        scheme = _mask_scheme("c_perm" if name == "tinyformer_cperm" else "causal")
        return predictive_fn(weights, scheme), True, 1e-5
    raise ConfigError(f"unknown model {config['model']!r} (expected one of {_PROPCHECK_MODELS})")


def _propcheck_context(raw: list, contextual: bool) -> list[tuple]:
    context = []
    for i, entry in enumerate(raw):
        if isinstance(entry, (list, tuple)):
            if len(entry) != 2:
                raise ConfigError(f"config key context[{i}] must be [x, y]")
            context.append((float(entry[0]), float(entry[1])))
        elif isinstance(entry, (int, float)) and not isinstance(entry, bool):
            if contextual:
                raise ConfigError(f"config key context[{i}] needs an [x, y] pair for this model")
            context.append((None, float(entry)))
        else:
            raise ConfigError(f"config key context[{i}] must be a number or [x, y]")
    return context


def cmd_propcheck(config: dict) -> None:
    """JSON report of the requested invariance checks on one model."""
    model, contextual, default_tol = _build_propcheck_model(config)
    context = _propcheck_context(config["context"], contextual)
    x_probe = config["x_probe"]
    if contextual and x_probe is None:
        raise ConfigError(f"config key x_probe is required for model {config['model']}")
    if x_probe is not None:
        x_probe = float(x_probe)
    perm_tol = config["perm_tol"]
    perm_tol = default_tol if perm_tol is None else float(perm_tol)
    checks = list(config["checks"])
    if not checks:
        raise ConfigError("config key checks must be a non-empty list")
    root = RngStream(config["seed"]).child("propcheck")
    x_low, x_high = float(config["x_low"]), float(config["x_high"])

    def x_sampler(rng):
        return float(rng.uniform(x_low, x_high))

    reports = {}
    for check in checks:
        rng = root.child(f"check/{check}").generator()
        if check == "perm_invariance":
            report = check_perm_invariance(
                model,
                context,
                rng,
                n_permutations=int(config["n_permutations"]),
                tol=perm_tol,
                x_probe=x_probe,
            )
        elif check == "cid":
            report = check_cid(
                model,
                context,
                rng,
                n_mc=int(config["n_mc"]),
                x_probe=x_probe,
                x_sampler=x_sampler if contextual else None,
            )
        elif check == "joint_exchangeability":
            if config["model"] not in ("counterexample", "beta_bernoulli"):
                raise ConfigError(
                    "joint_exchangeability needs a finite-alphabet model "
                    "(counterexample or beta_bernoulli)"
                )
            report = check_joint_exchangeability(model, int(config["joint_steps"]))
        else:
            raise ConfigError(f"unknown check {check!r}")
        reports[check] = report.as_dict()
    write_json(
        config["out"],
        "propcheck",
        _provenance(config),
        {"model": config["model"], "reports": reports},
    )


# ---------------------------------------------------------------------------
# transformer runs: resource estimation, training, architecture comparison

def _transformer_config(spec: dict) -> TransformerConfig:
    spec = dict(spec)
    spec["embed_hidden"] = tuple(spec["embed_hidden"])
    try:
        return TransformerConfig(**spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad model config: {exc}") from exc


def _data_config(spec: dict) -> GPDataConfig:
    try:
        return GPDataConfig(**{k: (int(v) if k == "x_dim" else float(v)) for k, v in spec.items()})
    except TypeError as exc:
        raise ConfigError(f"bad data config: {exc}") from exc


def _opt_config(spec: dict) -> OptimizerConfig:
    spec = dict(spec)
    spec["batch_size"] = int(spec["batch_size"])
    try:
        return OptimizerConfig(**spec)
    except TypeError as exc:
        raise ConfigError(f"bad opt config: {exc}") from exc


def estimate_training_flops(
    model_cfg: TransformerConfig,
    batch_size: int,
    horizon: int,
    n_steps: int,
    n_schemes: int = 1,
) -> float:
    """Order-of-magnitude training cost for the resource guard.

    Per sequence: every parameter participates in one multiply-add per
    token (2 * params * horizon) plus the attention score/aggregation
    matmuls (4 * heads * horizon^2 * head_dim per layer). One training
    step costs roughly forward plus twice that for backward.
    """
    params = parameter_count(model_cfg)
    linear = 2.0 * params * horizon
    attention = model_cfg.n_layers * 4.0 * model_cfg.n_heads * horizon**2 * model_cfg.head_dim
    per_step = 3.0 * batch_size * (linear + attention)
    return per_step * n_steps * n_schemes


def _check_budget(estimated: float, budget: float) -> None:
    if estimated > budget:
        raise BudgetExceededError(
            f"estimated {estimated:.3e} FLOPs exceeds the configured budget {budget:.3e}; "
            "raise flop_budget or shrink the run"
        )


def _onestep_nlls(weights, scheme, xs, ys, context_len: int) -> np.ndarray:
    """Per-sequence NLL of position context_len given the prefix."""
    cfg = weights.config
    trimmed_xs = xs[:, : context_len + 1]
    trimmed_ys = ys[:, : context_len + 1]
    tokens = tokens_from_batch(cfg, trimmed_xs, trimmed_ys, context_len)
    mask = build_mask(scheme, context_len, 1)
    means, stds = forward(weights, tokens, mask)
    mu = means.data[:, context_len]
    sd = stds.data[:, context_len]
    z = (trimmed_ys[:, context_len] - mu) / sd
    return np.log(sd) + 0.5 * z**2 + 0.5 * LOG_2PI


def _multistep_nlls(weights, scheme, xs, ys, context_len: int, block: int) -> np.ndarray:
    """Per-sequence mean NLL over a block, scored autoregressively.

    The joint log-loss of the block decomposes by the chain rule into
    one-step terms at growing (true-label) contexts; the mean over the
    block is the per-position multi-step log-loss.
    """
    per_step = [
        _onestep_nlls(weights, scheme, xs, ys, context_len + k) for k in range(block)
    ]
    return np.mean(per_step, axis=0)


def cmd_train(config: dict) -> None:
    """Train one masking scheme; write an epoch log and a checkpoint."""
    _require_positive(config, "n_epochs", "steps_per_epoch", "val_batches")
    if config["horizon"] < 2:
        raise ConfigError("config key horizon must be >= 2")
    scheme_name = config["scheme"]
    scheme = _mask_scheme(scheme_name)
    model_cfg = _transformer_config(config["model"])
    data_cfg = _data_config(config["data"])
    opt_cfg = _opt_config(config["opt"])
    n_steps = int(config["n_epochs"]) * int(config["steps_per_epoch"])
    estimated = estimate_training_flops(
        model_cfg, opt_cfg.batch_size, int(config["horizon"]), n_steps
    )
    _check_budget(estimated, float(config["flop_budget"]))
    root = RngStream(config["seed"])
    weights = TransformerWeights.init(model_cfg, root.child("init").generator())
    log = train(
        weights,
        scheme,
        data_cfg,
        opt_cfg,
        root.child("train"),
        n_epochs=int(config["n_epochs"]),
        steps_per_epoch=int(config["steps_per_epoch"]),
        horizon=int(config["horizon"]),
        val_batches=int(config["val_batches"]),
        val_context_lens=tuple(int(c) for c in config["val_context_lens"]),
    )
    checkpoint = config["checkpoint"]
    if checkpoint:
        save_checkpoint(checkpoint, weights)
    rows = [
        (epoch + 1, log.train_nll[epoch], log.val_nll[epoch]) for epoch in range(log.n_epochs)
    ]
    meta = [
        ("scheme", scheme_name),
        ("diverged", log.diverged),
        ("n_parameters", weights.n_parameters),
        ("estimated_flops", estimated),
        ("prior_marginal_nll", data_cfg.prior_marginal_nll()),
        ("checkpoint", checkpoint or "none"),
    ]
    write_csv(
        config["out"],
        "train",
        _provenance(config),
        ("epoch", "train_nll", "val_nll"),
        rows,
        extra_meta=meta,
    )


def cmd_arch(config: dict) -> None:
    """Train both masking schemes on identical data; compare log-losses.

    The two schemes share the weight-init stream and the training-data
    stream, so they start from the same tensors and see the same batches;
    only the attention mask differs. Evaluation scores one-step and
    autoregressive-block log-loss at each configured context length on a
    shared held-out batch, including context lengths beyond the training
    horizon.
    """
    _require_positive(config, "n_epochs", "steps_per_epoch", "eval_block", "n_eval_sequences")
    if config["train_horizon"] < 2:
        raise ConfigError("config key train_horizon must be >= 2")
    context_lens = [int(c) for c in config["eval_context_lens"]]
    if not context_lens or min(context_lens) < 1:
        raise ConfigError("config key eval_context_lens must list integers >= 1")
    if config["n_eval_sequences"] < 2:
        raise ConfigError("config key n_eval_sequences must be >= 2")
    model_cfg = _transformer_config(config["model"])
    data_cfg = _data_config(config["data"])
    opt_cfg = _opt_config(config["opt"])
    n_steps = int(config["n_epochs"]) * int(config["steps_per_epoch"])
    estimated = estimate_training_flops(
        model_cfg, opt_cfg.batch_size, int(config["train_horizon"]), n_steps, n_schemes=2
    )
    _check_budget(estimated, float(config["flop_budget"]))
    root = RngStream(config["seed"])
    block = int(config["eval_block"])
    eval_horizon = max(context_lens) + block
    eval_rng = root.child("eval").generator()
    xs, ys = sample_gp_batch(data_cfg, int(config["n_eval_sequences"]), eval_horizon, eval_rng)

    rows = []
    meta = [("estimated_flops", estimated), ("train_horizon", config["train_horizon"])]
    for scheme_name in ("c_perm", "causal"):
        scheme = _mask_scheme(scheme_name)
        weights = TransformerWeights.init(model_cfg, root.child("init").generator())
        log = train(
            weights,
            scheme,
            data_cfg,
            opt_cfg,
            root.child("train"),
            n_epochs=int(config["n_epochs"]),
            steps_per_epoch=int(config["steps_per_epoch"]),
            horizon=int(config["train_horizon"]),
        )
        meta.append((f"diverged_{scheme_name}", log.diverged))
        meta.append((f"final_val_nll_{scheme_name}", log.val_nll[-1]))
        for c in context_lens:
            one = _onestep_nlls(weights, scheme, xs, ys, c)
            multi = _multistep_nlls(weights, scheme, xs, ys, c, block)
            for label, values in (("one_step", one), ("multi_step", multi)):
                rows.append(
                    (
                        scheme_name,
                        label,
                        c,
                        float(values.mean()),
                        float(values.std(ddof=1) / math.sqrt(len(values))),
                        len(values),
                    )
                )
    write_csv(
        config["out"],
        "arch",
        _provenance(config),
        ("scheme", "inference", "context_len", "nll", "se", "n_sequences"),
        rows,
        extra_meta=meta,
    )
