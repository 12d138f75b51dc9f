"""Autoregressive generation under the two masking schemes.

The mutually-attending scheme must recompute all attention every step:
each generated point joins the context, and the context attends to it
in the next step, so earlier activations change and nothing can be
cached. Per-step attention cost therefore grows quadratically with the
number of generated points.

The causal scheme never lets a position see later ones, so per-position
keys and values are final the moment they are computed: generation can
keep a KV cache and pay only linear per-step attention cost. Cached and
uncached causal generation are algebraically identical.

Per-step attention FLOPs are logged on the result so complexity claims
can be asserted machine-independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erf

from exchlab.tinyformer.masks import MaskKind, MaskScheme, build_mask
from exchlab.tinyformer.model import FlopCounter, TransformerWeights, build_tokens, forward


@dataclass(frozen=True)
class MultistepGeneration:
    """One sampled continuation plus its per-step Gaussian parameters
    and attention-FLOP cost."""

    samples: np.ndarray          # (n_steps,)
    means: np.ndarray            # (n_steps,)
    stds: np.ndarray             # (n_steps,)
    attention_flops: np.ndarray  # (n_steps,) int64


def infer_multistep(
    weights: TransformerWeights,
    scheme: MaskScheme,
    context_pairs: Sequence[tuple],
    xs_target: Sequence,
    rng: np.random.Generator,
    use_cache: bool = False,
) -> MultistepGeneration:
    """Sample a continuation at xs_target, feeding each draw back in.

    use_cache requires the causal scheme; the mutually-attending scheme
    has no sound cache (see module docstring).
    """
    if use_cache and scheme.kind is MaskKind.C_PERM_INVARIANT:
        raise ValueError("cache unsound for this mask")
    if use_cache:
        return _generate_cached_causal(weights, list(context_pairs), list(xs_target), rng)
    return _generate_recompute(weights, scheme, list(context_pairs), list(xs_target), rng)


def _generate_recompute(weights, scheme, context, xs_target, rng) -> MultistepGeneration:
    n = len(xs_target)
    samples = np.empty(n)
    means = np.empty(n)
    stds = np.empty(n)
    flops = np.empty(n, dtype=np.int64)
    pairs = list(context)
    for t, x in enumerate(xs_target):
        counter = FlopCounter()
        tokens = build_tokens(weights.config, pairs, [x])
        mask = build_mask(scheme, len(pairs), 1)
        mean_t, std_t = forward(weights, tokens, mask, flops=counter)
        mu = float(mean_t.data[0, -1])
        sd = float(std_t.data[0, -1])
        y = mu + sd * rng.standard_normal()
        samples[t], means[t], stds[t], flops[t] = y, mu, sd, counter.total
        pairs.append((x, y))
    return MultistepGeneration(samples=samples, means=means, stds=stds, attention_flops=flops)


# ---------------------------------------------------------------------------
# Cached causal path: plain-numpy incremental forward, one token at a time.
# The full forward remains the reference; equality within 1e-9 over whole
# trajectories is part of the acceptance suite.


_INV_SQRT2 = 1.0 / math.sqrt(2.0)


def _gelu_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def _layernorm_np(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return gain * (x - mu) / math.sqrt(var + eps) + bias


def _softplus_np(x: float) -> float:
    return float(np.logaddexp(0.0, x))


class _KVCache:
    """Per-layer key/value history for causal incremental attention."""

    def __init__(self, n_layers: int, n_heads: int, head_dim: int) -> None:
        self.keys = [np.zeros((n_heads, 0, head_dim)) for _ in range(n_layers)]
        self.values = [np.zeros((n_heads, 0, head_dim)) for _ in range(n_layers)]

    def length(self) -> int:
        return self.keys[0].shape[1]


def _incremental_token(
    weights: TransformerWeights,
    token: np.ndarray,
    cache: _KVCache,
    append: bool,
    counter: FlopCounter,
) -> tuple[float, float]:
    """Run one token through all layers against the cache.

    The token attends to every cached position plus itself. With
    append=True its keys/values extend the cache (an observed pair
    joining the context); with append=False the cache is untouched (a
    probe target). Returns the head's (mean, std) for the token.
    """
    config = weights.config
    w = weights.params
    heads, head_dim = config.n_heads, config.head_dim
    h = token
    for i in range(len(config.embed_hidden)):
        h = h @ w[f"embed.{i}.w"].data + w[f"embed.{i}.b"].data
        if i < len(config.embed_hidden) - 1:
            h = _gelu_np(h)
    for layer in range(config.n_layers):
        p = f"block{layer}."
        a = _layernorm_np(h, w[p + "ln1.gain"].data, w[p + "ln1.bias"].data)
        q = (a @ w[p + "attn.q.w"].data + w[p + "attn.q.b"].data).reshape(heads, head_dim)
        k_new = (a @ w[p + "attn.k.w"].data + w[p + "attn.k.b"].data).reshape(heads, 1, head_dim)
        v_new = (a @ w[p + "attn.v.w"].data + w[p + "attn.v.b"].data).reshape(heads, 1, head_dim)
        ks = np.concatenate([cache.keys[layer], k_new], axis=1)
        vs = np.concatenate([cache.values[layer], v_new], axis=1)
        logits = np.einsum("hd,hld->hl", q, ks) / math.sqrt(head_dim)
        logits -= logits.max(axis=1, keepdims=True)
        weights_attn = np.exp(logits)
        weights_attn /= weights_attn.sum(axis=1, keepdims=True)
        ctx = np.einsum("hl,hld->hd", weights_attn, vs).reshape(-1)
        # scores q.k: 2*H*L*Dh, aggregation: 2*H*L*Dh
        counter.add(4 * heads * ks.shape[1] * head_dim)
        h = h + ctx @ w[p + "attn.out.w"].data + w[p + "attn.out.b"].data
        f = _layernorm_np(h, w[p + "ln2.gain"].data, w[p + "ln2.bias"].data)
        f = _gelu_np(f @ w[p + "ffn.0.w"].data + w[p + "ffn.0.b"].data)
        f = f @ w[p + "ffn.1.w"].data + w[p + "ffn.1.b"].data
        h = h + f
        if append:
            cache.keys[layer] = ks
            cache.values[layer] = vs
    h = _layernorm_np(h, w["final.gain"].data, w["final.bias"].data)
    raw = h @ w["head.w"].data + w["head.b"].data
    return float(raw[0]), _softplus_np(float(raw[1])) + config.std_floor


def _context_token(config, x, y) -> np.ndarray:
    token = np.zeros(config.token_dim)
    token[: config.x_dim] = np.asarray(x, dtype=np.float64).reshape(-1)
    token[config.x_dim] = float(y)
    return token


def _target_token(config, x) -> np.ndarray:
    token = np.zeros(config.token_dim)
    token[: config.x_dim] = np.asarray(x, dtype=np.float64).reshape(-1)
    token[config.x_dim + 1] = 1.0
    return token


def _generate_cached_causal(weights, context, xs_target, rng) -> MultistepGeneration:
    config = weights.config
    cache = _KVCache(config.n_layers, config.n_heads, config.head_dim)
    warmup = FlopCounter()  # context ingestion cost is not a per-step cost
    for x, y in context:
        _incremental_token(weights, _context_token(config, x, y), cache, True, warmup)
    n = len(xs_target)
    samples = np.empty(n)
    means = np.empty(n)
    stds = np.empty(n)
    flops = np.empty(n, dtype=np.int64)
    for t, x in enumerate(xs_target):
        counter = FlopCounter()
        mu, sd = _incremental_token(weights, _target_token(config, x), cache, False, counter)
        y = mu + sd * rng.standard_normal()
        _incremental_token(weights, _context_token(config, x, y), cache, True, counter)
        samples[t], means[t], stds[t], flops[t] = y, mu, sd, counter.total
    return MultistepGeneration(samples=samples, means=means, stds=stds, attention_flops=flops)
