"""A from-scratch minimal transformer for sequence prediction.

Everything here is float64 numpy with a hand-built reverse-mode
autodiff tape: no deep-learning framework. The package provides the two
attention masking schemes (mutually-attending context vs strictly
causal), a Gaussian output head, negative-log-likelihood training with
AdamW and a cosine schedule, KV-cached causal generation, checkpoint
serialization, and finite-difference gradient checking.
"""

from exchlab.tinyformer.autodiff import Tape, Tensor, set_nan_guard
from exchlab.tinyformer.gradcheck import grad_check
from exchlab.tinyformer.generate import MultistepGeneration, infer_multistep
from exchlab.tinyformer.masks import MaskKind, MaskPhase, MaskScheme, build_mask
from exchlab.tinyformer.model import (
    FlopCounter,
    TransformerConfig,
    TransformerWeights,
    build_tokens,
    forward,
    nll_loss,
    parameter_count,
    predictive,
    predictive_fn,
)
from exchlab.tinyformer.serialize import load_checkpoint, save_checkpoint
from exchlab.tinyformer.train import (
    AdamW,
    DivergenceGuard,
    GPDataConfig,
    OptimizerConfig,
    TrainLog,
    cosine_lr,
    eval_onestep,
    sample_gp_batch,
    train,
)

__all__ = [
    "Tape",
    "Tensor",
    "set_nan_guard",
    "grad_check",
    "MultistepGeneration",
    "infer_multistep",
    "MaskKind",
    "MaskPhase",
    "MaskScheme",
    "build_mask",
    "FlopCounter",
    "TransformerConfig",
    "TransformerWeights",
    "build_tokens",
    "forward",
    "nll_loss",
    "parameter_count",
    "predictive",
    "predictive_fn",
    "load_checkpoint",
    "save_checkpoint",
    "AdamW",
    "DivergenceGuard",
    "GPDataConfig",
    "OptimizerConfig",
    "TrainLog",
    "cosine_lr",
    "eval_onestep",
    "sample_gp_batch",
    "train",
]
