"""Sequence rewards that are Lipschitz in the Hamming distance.

Every reward is total on partially masked sequences: a mask token counts as
a guaranteed mismatch (target matching) or contributes zero weight (lexicon
scoring), which keeps the Lipschitz constant valid on intermediate states.
"""

from __future__ import annotations

import numpy as np

from .core import Vocab, validate_sequence


def hamming(x: np.ndarray, y: np.ndarray) -> int:
    """Number of positions where the two sequences differ."""
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    return int(np.count_nonzero(x != y))


class Reward:
    """Interface: score(seq) -> float with a known Hamming-Lipschitz constant.

    lipschitz_beta is None when the constant is unknown (e.g. remote scorers),
    which disables gap-bound checks for that reward.
    """

    lipschitz_beta: float | None
    mask_policy: str

    def score(self, seq: np.ndarray) -> float:
        raise NotImplementedError


class TargetMatchReward(Reward):
    """Counts positions agreeing with a fixed mask-free target; beta = 1."""

    mask_policy = "mismatch"

    def __init__(self, target: np.ndarray, vocab: Vocab):
        validate_sequence(target, vocab)
        if np.any(target == vocab.mask_id):
            raise ValueError("target must be mask-free")
        self.target = target.copy()
        self.vocab = vocab
        self.lipschitz_beta = 1.0

    def score(self, seq: np.ndarray) -> float:
        if seq.shape != self.target.shape:
            raise ValueError(f"length mismatch: {seq.shape} vs {self.target.shape}")
        return float(np.count_nonzero(seq == self.target))


class LexiconReward(Reward):
    """Sum of per-token weights; the mask token's weight is forced to zero."""

    mask_policy = "zero-weight"

    def __init__(self, weights: np.ndarray, vocab: Vocab):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (vocab.size,):
            raise ValueError(f"need one weight per vocab id, got shape {weights.shape}")
        if not np.isfinite(weights).all():
            raise ValueError("weights must be finite")
        self.weights = weights.copy()
        self.weights[vocab.mask_id] = 0.0
        self.vocab = vocab
        self.lipschitz_beta = float(self.weights.max() - self.weights.min())

    def score(self, seq: np.ndarray) -> float:
        return float(self.weights[seq].sum())
