"""Negative-log-likelihood training on synthetic function-draw data.

Training blocks fix one context length per batch: the first c positions
carry observed (x, y) pairs, the remaining horizon - c positions are
targets scored simultaneously under the block mask. The optimizer is
AdamW with decoupled weight decay (matrices only) and a linear-warmup
cosine learning-rate schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from exchlab.core import RngStream
from exchlab.tinyformer.autodiff import Tape
from exchlab.tinyformer.masks import MaskScheme, build_mask
from exchlab.tinyformer.model import (
    TransformerConfig,
    TransformerWeights,
    forward,
    nll_loss,
    tokens_from_batch,
)


@dataclass(frozen=True)
class OptimizerConfig:
    lr_max: float = 3e-4
    lr_min: float = 3e-5
    warmup_ratio: float = 0.03
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64


def cosine_lr(step: int, total_steps: int, opt: OptimizerConfig) -> float:
    """Linear warmup to lr_max, cosine decay to exactly lr_min at the end.

    Step 0 returns lr_max / warmup_steps (the first ramp increment); the
    final step returns lr_min exactly.
    """
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warmup = max(1, int(round(total_steps * opt.warmup_ratio)))
    if step < warmup:
        return opt.lr_max * (step + 1) / warmup
    span = max(1, total_steps - 1 - warmup)
    progress = min(1.0, (step - warmup) / span)
    return opt.lr_min + 0.5 * (opt.lr_max - opt.lr_min) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay.

    Decay applies only to weight matrices (2-d parameters); biases and
    layer-norm parameters are not decayed.
    """

    def __init__(self, weights: TransformerWeights, opt: OptimizerConfig) -> None:
        self.opt = opt
        self.step_count = 0
        self._m = {name: np.zeros_like(weights[name].data) for name in weights.names()}
        self._v = {name: np.zeros_like(weights[name].data) for name in weights.names()}

    def apply(self, weights: TransformerWeights, grads: dict[int, np.ndarray], lr: float) -> None:
        opt = self.opt
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - opt.beta1**t
        bias2 = 1.0 - opt.beta2**t
        for name in weights.names():
            tensor = weights[name]
            g = grads[id(tensor)]
            m = self._m[name]
            v = self._v[name]
            m *= opt.beta1
            m += (1.0 - opt.beta1) * g
            v *= opt.beta2
            v += (1.0 - opt.beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + opt.eps)
            if tensor.data.ndim == 2:
                update = update + opt.weight_decay * tensor.data
            tensor.data -= lr * update


@dataclass(frozen=True)
class GPDataConfig:
    """Stationary squared-exponential function draws with observation noise."""

    signal_std: float = 1.0
    lengthscale: float = 1.0
    noise_std: float = 0.1
    x_low: float = -2.0
    x_high: float = 2.0
    x_dim: int = 1

    def prior_marginal_nll(self) -> float:
        """Analytic loss of always predicting the prior marginal
        N(0, sqrt(signal_std^2 + noise_std^2))."""
        var = self.signal_std**2 + self.noise_std**2
        return 0.5 * math.log(2.0 * math.pi * var) + 0.5


def sample_gp_batch(
    cfg: GPDataConfig, batch_size: int, horizon: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """(xs, ys): xs (B, h, x_dim) uniform, ys = function draw + noise."""
    xs = rng.uniform(cfg.x_low, cfg.x_high, size=(batch_size, horizon, cfg.x_dim))
    diff = xs[:, :, None, :] - xs[:, None, :, :]
    sq = np.sum(diff**2, axis=-1)
    cov = cfg.signal_std**2 * np.exp(-0.5 * sq / cfg.lengthscale**2)
    cov += 1e-10 * np.eye(horizon)
    chol = np.linalg.cholesky(cov)
    f = np.einsum("bij,bj->bi", chol, rng.standard_normal((batch_size, horizon)))
    ys = f + cfg.noise_std * rng.standard_normal((batch_size, horizon))
    return xs, ys


@dataclass
class TrainLog:
    train_nll: list[float] = field(default_factory=list)
    val_nll: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    diverged: bool = False

    @property
    def n_epochs(self) -> int:
        return len(self.train_nll)


class DivergenceGuard:
    """Flags divergence when the epoch loss stays above a multiple of the
    first epoch's loss for `patience` consecutive epochs."""

    def __init__(self, factor: float = 10.0, patience: int = 3) -> None:
        self.factor = factor
        self.patience = patience
        self._initial: float | None = None
        self._bad = 0

    def update(self, epoch_loss: float) -> bool:
        if self._initial is None:
            self._initial = epoch_loss
        if epoch_loss > self.factor * abs(self._initial):
            self._bad += 1
        else:
            self._bad = 0
        return self._bad >= self.patience


def eval_onestep(
    weights: TransformerWeights,
    scheme: MaskScheme,
    xs: np.ndarray,
    ys: np.ndarray,
    context_len: int,
) -> float:
    """Mean NLL of position context_len given the first context_len pairs."""
    horizon = ys.shape[1]
    if not 0 < context_len < horizon:
        raise ValueError(f"context_len must be in (0, {horizon})")
    trimmed_xs = xs[:, : context_len + 1]
    trimmed_ys = ys[:, : context_len + 1]
    tokens = tokens_from_batch(weights.config, trimmed_xs, trimmed_ys, context_len)
    mask = build_mask(scheme, context_len, 1)
    means, stds = forward(weights, tokens, mask)
    pos = np.zeros(context_len + 1)
    pos[-1] = 1.0
    return float(nll_loss(means, stds, trimmed_ys, pos).data)


def train(
    weights: TransformerWeights,
    scheme: MaskScheme,
    data_cfg: GPDataConfig,
    opt: OptimizerConfig,
    stream: RngStream,
    n_epochs: int,
    steps_per_epoch: int,
    horizon: int,
    val_batches: int = 4,
    val_context_lens: tuple[int, ...] = (2, 5, 10, 20),
) -> TrainLog:
    """Optimize weights in place; returns the per-epoch log.

    Each step draws a fresh batch, a uniform context length in
    [1, horizon), and applies one AdamW update on the block loss.
    Validation reports the mean one-step NLL on fixed held-out batches
    at fixed context lengths. Divergence guard: training aborts (flagged
    in the log) when the epoch-mean loss exceeds 10x the first epoch's
    for 3 consecutive epochs.
    """
    config = weights.config
    if config.x_dim != data_cfg.x_dim:
        raise ValueError("model and data disagree on input dimension")
    total_steps = n_epochs * steps_per_epoch
    optimizer = AdamW(weights, opt)
    data_rng = stream.child("data").generator()
    block_rng = stream.child("blocks").generator()
    dropout_rng = stream.child("dropout").generator()
    val_rng = stream.child("val").generator()
    val_sets = [
        sample_gp_batch(data_cfg, opt.batch_size, horizon, val_rng) for _ in range(val_batches)
    ]
    val_lens = [c for c in val_context_lens if c < horizon] or [max(1, horizon // 2)]

    def validate() -> float:
        losses = [
            eval_onestep(weights, scheme, xs, ys, c)
            for xs, ys in val_sets
            for c in val_lens
        ]
        return float(np.mean(losses))

    log = TrainLog()
    guard = DivergenceGuard()
    step = 0
    for _ in range(n_epochs):
        epoch_losses = []
        for _ in range(steps_per_epoch):
            xs, ys = sample_gp_batch(data_cfg, opt.batch_size, horizon, data_rng)
            context_len = int(block_rng.integers(1, horizon))
            tokens = tokens_from_batch(config, xs, ys, context_len)
            mask = build_mask(scheme, context_len, horizon - context_len)
            position_weights = np.zeros(horizon)
            position_weights[context_len:] = 1.0
            lr = cosine_lr(step, total_steps, opt)
            with Tape() as tape:
                means, stds = forward(
                    weights, tokens, mask,
                    dropout_rng=dropout_rng if config.dropout > 0 else None,
                )
                loss = nll_loss(means, stds, ys, position_weights)
                grads = tape.gradients(loss, weights.tensors())
            if lr > 0.0:
                optimizer.apply(weights, grads, lr)
            epoch_losses.append(float(loss.data))
            log.learning_rates.append(lr)
            step += 1
        epoch_mean = float(np.mean(epoch_losses))
        log.train_nll.append(epoch_mean)
        log.val_nll.append(validate())
        if guard.update(epoch_mean):
            log.diverged = True
            break
    return log
