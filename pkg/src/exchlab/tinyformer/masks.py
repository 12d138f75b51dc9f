"""Attention masks for the two sequence layouts.

A token block is laid out as ``[context tokens..., target tokens...]``.
Masks are boolean square matrices over that layout; entry (i, j) means
"position i may attend to position j". Two schemes:

* mutually-attending context ("c-perm-invariant"): every context token
  attends to every context token, so no ordering information survives;
  each target attends to the whole context plus itself.
* causal: context token i attends to context tokens 0..i; each target
  attends to the full context prefix plus itself.

In both schemes target tokens never attend to one another, so training
on several targets at once scores each one independently given the same
context.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class MaskKind(enum.Enum):
    C_PERM_INVARIANT = "c_perm_invariant"
    CAUSAL = "causal"


class MaskPhase(enum.Enum):
    TRAIN_BLOCK = "train_block"
    INFERENCE = "inference"


@dataclass(frozen=True)
class MaskScheme:
    kind: MaskKind
    phase: MaskPhase = MaskPhase.TRAIN_BLOCK

    @classmethod
    def c_perm(cls, phase: MaskPhase = MaskPhase.TRAIN_BLOCK) -> "MaskScheme":
        return cls(MaskKind.C_PERM_INVARIANT, phase)

    @classmethod
    def causal(cls, phase: MaskPhase = MaskPhase.TRAIN_BLOCK) -> "MaskScheme":
        return cls(MaskKind.CAUSAL, phase)


def build_mask(scheme: MaskScheme, context_len: int, n_targets: int) -> np.ndarray:
    """Boolean (context_len + n_targets)^2 attention mask.

    Inference is the single-target special case of the training block;
    the pattern depends only on the kind. Targets attend to all context
    plus themselves and never to each other; context never attends to
    targets.
    """
    if context_len < 0:
        raise ValueError(f"context_len must be >= 0, got {context_len}")
    if n_targets < 1:
        raise ValueError(f"n_targets must be >= 1, got {n_targets}")
    c, n = context_len, n_targets
    total = c + n
    mask = np.zeros((total, total), dtype=bool)
    if scheme.kind is MaskKind.C_PERM_INVARIANT:
        mask[:c, :c] = True
    elif scheme.kind is MaskKind.CAUSAL:
        mask[:c, :c] = np.tril(np.ones((c, c), dtype=bool))
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown mask kind {scheme.kind}")
    mask[c:, :c] = True
    mask[np.arange(c, total), np.arange(c, total)] = True
    return mask
