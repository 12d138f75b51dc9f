"""Transformer configuration, weights, forward pass, and Gaussian head.

Architecture notes (all deliberate choices, stated for the record):

* No positional encodings in either masking scheme. Ordering
  information, where wanted, enters only through the causal mask;
  adding positions would destroy the mutually-attending scheme's
  designed permutation invariance.
* Pre-norm residual blocks with a final layer norm.
* A token is the raw feature vector ``(x..., y, is_target)``. Target
  tokens carry ``(x..., 0, 1)``: the flag channel keeps "placeholder
  zero" distinguishable from an observed y = 0.
* The head emits (mean, pre-std); std = softplus(pre-std) + a small
  floor, so it is smooth and strictly positive.
* Initialization is uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per linear
  layer; layer norms start at identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from exchlab.core import Gaussian, LOG_2PI
from exchlab.tinyformer import autodiff as ad
from exchlab.tinyformer.autodiff import Tensor
from exchlab.tinyformer.masks import MaskScheme, build_mask


@dataclass(frozen=True)
class TransformerConfig:
    x_dim: int = 1
    d_model: int = 64
    d_ff: int = 256
    n_heads: int = 4
    n_layers: int = 4
    dropout: float = 0.1
    embed_hidden: tuple[int, ...] = (256, 64)
    std_floor: float = 1e-4

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if not self.embed_hidden or self.embed_hidden[-1] != self.d_model:
            raise ValueError("embed_hidden must end at d_model")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def token_dim(self) -> int:
        return self.x_dim + 2  # features, y, is-target flag

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {
            "x_dim": self.x_dim,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "dropout": self.dropout,
            "embed_hidden": list(self.embed_hidden),
            "std_floor": self.std_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerConfig":
        d = dict(d)
        d["embed_hidden"] = tuple(d["embed_hidden"])
        return cls(**d)


def _parameter_shapes(config: TransformerConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) manifest; ordering defines serialization."""
    shapes: list[tuple[str, tuple[int, ...]]] = []
    fan_in = config.token_dim
    for i, width in enumerate(config.embed_hidden):
        shapes.append((f"embed.{i}.w", (fan_in, width)))
        shapes.append((f"embed.{i}.b", (width,)))
        fan_in = width
    d = config.d_model
    for layer in range(config.n_layers):
        p = f"block{layer}."
        shapes.extend(
            [
                (p + "ln1.gain", (d,)),
                (p + "ln1.bias", (d,)),
                (p + "attn.q.w", (d, d)),
                (p + "attn.q.b", (d,)),
                (p + "attn.k.w", (d, d)),
                (p + "attn.k.b", (d,)),
                (p + "attn.v.w", (d, d)),
                (p + "attn.v.b", (d,)),
                (p + "attn.out.w", (d, d)),
                (p + "attn.out.b", (d,)),
                (p + "ln2.gain", (d,)),
                (p + "ln2.bias", (d,)),
                (p + "ffn.0.w", (d, config.d_ff)),
                (p + "ffn.0.b", (config.d_ff,)),
                (p + "ffn.1.w", (config.d_ff, d)),
                (p + "ffn.1.b", (d,)),
            ]
        )
    shapes.extend(
        [
            ("final.gain", (d,)),
            ("final.bias", (d,)),
            ("head.w", (d, 2)),
            ("head.b", (2,)),
        ]
    )
    return shapes


def parameter_count(config: TransformerConfig) -> int:
    """Total trainable scalars for a config, without allocating tensors.

    Lets resource guards size a run before committing memory to it.
    """
    return sum(math.prod(shape) for _, shape in _parameter_shapes(config))


@dataclass
class TransformerWeights:
    """All parameters, in a canonical named order."""

    config: TransformerConfig
    params: dict[str, Tensor] = field(repr=False)

    @classmethod
    def init(cls, config: TransformerConfig, rng: np.random.Generator) -> "TransformerWeights":
        params: dict[str, Tensor] = {}
        for name, shape in _parameter_shapes(config):
            if name.endswith(".gain"):
                data = np.ones(shape)
            elif name.endswith(".bias"):
                data = np.zeros(shape)
            else:
                # every linear layer is "<stem>.w" / "<stem>.b"; both draw
                # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) of the matrix
                if name.endswith(".w"):
                    fan_in = shape[0]
                else:
                    fan_in = params[name[:-2] + ".w"].shape[0]
                bound = 1.0 / math.sqrt(fan_in)
                data = rng.uniform(-bound, bound, size=shape)
            params[name] = Tensor(data)
        return cls(config=config, params=params)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return [name for name, _ in _parameter_shapes(self.config)]

    def tensors(self) -> list[Tensor]:
        return [self.params[name] for name in self.names()]

    @property
    def n_parameters(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in _parameter_shapes(self.config))


@dataclass
class FlopCounter:
    """Accumulates floating-point-operation counts for attention matmuls.

    Instrumented counting (2*m*n*k per m-by-n-by-k matmul, scores and
    value aggregation) keeps complexity assertions machine-independent.
    """

    total: int = 0

    def add(self, n: int) -> None:
        self.total += int(n)


def build_tokens(
    config: TransformerConfig,
    context_pairs: Sequence[tuple],
    target_xs: Sequence,
) -> np.ndarray:
    """(1, c+n, token_dim) block: context (x, y, 0) then targets (x, 0, 1)."""
    c, n = len(context_pairs), len(target_xs)
    tokens = np.zeros((1, c + n, config.token_dim))
    for i, (x, y) in enumerate(context_pairs):
        tokens[0, i, : config.x_dim] = np.asarray(x, dtype=np.float64).reshape(-1)
        tokens[0, i, config.x_dim] = float(y)
    for j, x in enumerate(target_xs):
        tokens[0, c + j, : config.x_dim] = np.asarray(x, dtype=np.float64).reshape(-1)
        tokens[0, c + j, config.x_dim + 1] = 1.0
    return tokens


def tokens_from_batch(
    config: TransformerConfig, xs: np.ndarray, ys: np.ndarray, context_len: int
) -> np.ndarray:
    """(B, h, token_dim) training block with positions >= context_len as targets."""
    batch, horizon = ys.shape
    tokens = np.zeros((batch, horizon, config.token_dim))
    tokens[:, :, : config.x_dim] = xs.reshape(batch, horizon, config.x_dim)
    tokens[:, :context_len, config.x_dim] = ys[:, :context_len]
    tokens[:, context_len:, config.x_dim + 1] = 1.0
    return tokens


def forward(
    weights: TransformerWeights,
    tokens: np.ndarray,
    mask: np.ndarray,
    dropout_rng: np.random.Generator | None = None,
    flops: FlopCounter | None = None,
) -> tuple[Tensor, Tensor]:
    """Per-position Gaussian parameters: (means, stds), each (B, T).

    Deterministic unless dropout_rng is supplied (training mode).
    Records on the active Tape, if any.
    """
    config = weights.config
    batch, seq_len, token_dim = tokens.shape
    if token_dim != config.token_dim:
        raise ValueError(f"token dim {token_dim}, config expects {config.token_dim}")
    if mask.shape != (seq_len, seq_len):
        raise ValueError(f"mask shape {mask.shape} does not match sequence {seq_len}")
    w = weights.params
    heads, head_dim = config.n_heads, config.head_dim
    rate = config.dropout if dropout_rng is not None else 0.0

    def maybe_dropout(t: Tensor) -> Tensor:
        if rate > 0.0:
            return ad.dropout(t, rate, dropout_rng)
        return t

    h = Tensor(tokens)
    for i in range(len(config.embed_hidden)):
        h = ad.linear(h, w[f"embed.{i}.w"], w[f"embed.{i}.b"])
        if i < len(config.embed_hidden) - 1:
            h = ad.gelu(h)

    mask_add = np.where(mask, 0.0, ad._MASKED_LOGIT)
    for layer in range(config.n_layers):
        p = f"block{layer}."
        a = ad.layer_norm(h, w[p + "ln1.gain"], w[p + "ln1.bias"])
        q = ad.linear(a, w[p + "attn.q.w"], w[p + "attn.q.b"])
        k = ad.linear(a, w[p + "attn.k.w"], w[p + "attn.k.b"])
        v = ad.linear(a, w[p + "attn.v.w"], w[p + "attn.v.b"])
        # (B, T, D) -> (B, H, T, Dh)
        q = ad.transpose(ad.reshape(q, (batch, seq_len, heads, head_dim)), (0, 2, 1, 3))
        k = ad.transpose(ad.reshape(k, (batch, seq_len, heads, head_dim)), (0, 2, 1, 3))
        v = ad.transpose(ad.reshape(v, (batch, seq_len, heads, head_dim)), (0, 2, 1, 3))
        scores = ad.scale(
            ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim)
        )
        scores = ad.shift(scores, mask_add)
        attn = ad.softmax(scores)
        attn = maybe_dropout(attn)
        ctx = ad.matmul(attn, v)
        if flops is not None:
            # scores: 2*B*H*T*T*Dh, aggregation: same again
            flops.add(4 * batch * heads * seq_len * seq_len * head_dim)
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (batch, seq_len, config.d_model))
        attended = maybe_dropout(ad.linear(ctx, w[p + "attn.out.w"], w[p + "attn.out.b"]))
        h = ad.add(h, attended)
        f = ad.layer_norm(h, w[p + "ln2.gain"], w[p + "ln2.bias"])
        f = ad.linear(ad.gelu(ad.linear(f, w[p + "ffn.0.w"], w[p + "ffn.0.b"])), w[p + "ffn.1.w"], w[p + "ffn.1.b"])
        f = maybe_dropout(f)
        h = ad.add(h, f)

    h = ad.layer_norm(h, w["final.gain"], w["final.bias"])
    raw = ad.linear(h, w["head.w"], w["head.b"])
    means = ad.take_channel(raw, 0)
    stds = ad.shift(ad.softplus(ad.take_channel(raw, 1)), config.std_floor)
    return means, stds


def nll_loss(means: Tensor, stds: Tensor, ys: np.ndarray, position_weights) -> Tensor:
    """Mean Gaussian negative log density over the weighted positions.

    position_weights is a constant array broadcastable to (B, T); use a
    0/1 indicator to score only target positions.
    """
    if not (np.all(np.isfinite(means.data)) and np.all(np.isfinite(stds.data))):
        raise FloatingPointError("non-finite prediction passed to the loss")
    diff = ad.sub(means, Tensor(ys))
    z = ad.div(diff, stds)
    per_point = ad.add(ad.log(stds), ad.scale(ad.mul(z, z), 0.5))
    return ad.shift(ad.weighted_mean(per_point, position_weights), 0.5 * LOG_2PI)


def predictive(
    weights: TransformerWeights,
    scheme: MaskScheme,
    context_pairs: Sequence[tuple],
    x_probe,
) -> Gaussian:
    """Gaussian prediction for one probe input given (x, y) context pairs."""
    tokens = build_tokens(weights.config, list(context_pairs), [x_probe])
    mask = build_mask(scheme, len(context_pairs), 1)
    means, stds = forward(weights, tokens, mask)
    return Gaussian(float(means.data[0, -1]), float(stds.data[0, -1]))


def predictive_fn(weights: TransformerWeights, scheme: MaskScheme) -> Callable:
    """Adapter callable(context, x_probe) for the property checkers."""

    def fn(context, x_probe):
        if x_probe is None:
            raise ValueError("this model is contextual; provide x_probe")
        return predictive(weights, scheme, context, x_probe)

    return fn
