"""Finite-difference verification of the autodiff gradients."""

from __future__ import annotations

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


def grad_check(
    config: TransformerConfig,
    scheme: MaskScheme,
    stream: RngStream,
    n_coords: int = 200,
    eps: float = 1e-5,
    batch_size: int = 2,
    horizon: int = 6,
    context_len: int = 3,
) -> float:
    """Max relative error between analytic and central-difference grads.

    Samples n_coords parameter coordinates uniformly across the whole
    parameter vector. Relative error uses the denominator
    max(|analytic|, |numeric|, 1e-3) so near-zero gradients are compared
    absolutely. Dropout must stay off (and is: no rng is passed).
    """
    rng = stream.child("weights").generator()
    weights = TransformerWeights.init(config, rng)
    data_rng = stream.child("data").generator()
    xs = data_rng.uniform(-2.0, 2.0, size=(batch_size, horizon, config.x_dim))
    ys = data_rng.standard_normal((batch_size, horizon))
    tokens = tokens_from_batch(config, xs, ys, context_len)
    mask = build_mask(scheme, context_len, horizon - context_len)
    position_weights = np.zeros(horizon)
    position_weights[context_len:] = 1.0

    def loss_value() -> float:
        means, stds = forward(weights, tokens, mask)
        return float(nll_loss(means, stds, ys, position_weights).data)

    with Tape() as tape:
        means, stds = forward(weights, tokens, mask)
        loss = nll_loss(means, stds, ys, position_weights)
        grads = tape.gradients(loss, weights.tensors())

    sizes = [weights[name].size for name in weights.names()]
    offsets = np.cumsum([0] + sizes)
    total = offsets[-1]
    coord_rng = stream.child("coords").generator()
    flat_indices = coord_rng.choice(total, size=min(n_coords, total), replace=False)

    worst = 0.0
    names = weights.names()
    for flat in flat_indices:
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[which]
        tensor = weights[name]
        local = np.unravel_index(int(flat - offsets[which]), tensor.data.shape)
        analytic = float(grads[id(tensor)][local])
        original = tensor.data[local]
        tensor.data[local] = original + eps
        up = loss_value()
        tensor.data[local] = original - eps
        down = loss_value()
        tensor.data[local] = original
        numeric = (up - down) / (2.0 * eps)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)
        worst = max(worst, rel)
    return worst
