"""Model backends: a self-contained synthetic model and optional HF bindings.

Every backend produces constrained prediction matrices: the mask column is
zero, masked rows are renormalized distributions, and rows at observed
positions are one-hot copies.  The synthetic backend needs only numpy and is
the default for tests and offline runs; the HF backend loads a local masked
language model checkpoint when torch and transformers are installed.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np


@dataclass
class ModelBinding:
    """What the server serves: model + scorer selection and limits."""

    model_spec: str = "synthetic:vocab=8,seed=0"
    scorer_spec: str = "lexicon:seed=0"
    device: str = "cpu"
    max_length: int = 1024


def _parse_spec(spec: str) -> tuple[str, dict[str, str]]:
    kind, _, rest = spec.partition(":")
    params: dict[str, str] = {}
    if rest:
        for item in rest.split(","):
            key, _, value = item.partition("=")
            params[key] = value
    return kind, params


def constrain(probs: np.ndarray, seq: np.ndarray, mask_id: int) -> np.ndarray:
    """Zero the mask column, renormalize masked rows, one-hot observed rows."""
    out = np.array(probs, dtype=np.float64, copy=True)
    out[:, mask_id] = 0.0
    sums = out.sum(axis=1)
    flat = sums <= 0.0
    if flat.any():
        out[flat] = 1.0
        out[flat, mask_id] = 0.0
        sums[flat] = out.shape[1] - 1
    out /= sums[:, None]
    observed = np.nonzero(seq != mask_id)[0]
    out[observed] = 0.0
    out[observed, seq[observed]] = 1.0
    return out


class SyntheticMaskedModel:
    """Deterministic stand-in model: rows from hashed softmax logits.

    Row content is a pure function of (seed, position, sequence, time bucket),
    so repeated requests give identical replies.
    """

    TIME_BUCKET = 1e-6

    def __init__(self, vocab_size: int = 8, seed: int = 0):
        if vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
        self.vocab_size = vocab_size
        self.mask_id = vocab_size - 1
        self.seed = int(seed)

    def denoise(self, seq: np.ndarray, t: float) -> np.ndarray:
        L, V = seq.shape[0], self.vocab_size
        bucket = int(round(t / self.TIME_BUCKET))
        logits = np.empty((L, V))
        body = seq.astype("<i8").tobytes()
        for pos in range(L):
            digest = hashlib.sha256(
                struct.pack("<qqq", self.seed, bucket, pos) + body
            ).digest()
            raw = np.frombuffer(digest, dtype=np.uint8).astype(np.float64)
            logits[pos] = np.resize(raw, V) / 32.0
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        return constrain(probs, seq, self.mask_id)


class LexiconScorer:
    """Per-token weight sum with a known Lipschitz constant."""

    def __init__(self, vocab_size: int, seed: int = 0, weights=None):
        if weights is not None:
            self.weights = np.asarray(weights, dtype=np.float64)
        else:
            self.weights = np.random.default_rng(int(seed)).normal(size=vocab_size)
        self.weights[vocab_size - 1] = 0.0  # mask contributes nothing
        self.beta: float | None = float(self.weights.max() - self.weights.min())

    def score(self, seq: np.ndarray) -> float:
        return float(self.weights[seq].sum())


class HfMaskedModel:
    """Local masked-LM checkpoint behind the same interface.

    Token ids are remapped so the mask occupies the last slot, as the wire
    contract requires: wire id V-1 is the tokenizer's mask token and the
    remaining tokenizer ids keep their relative order.  The time argument is
    accepted for wire compatibility; plain masked LMs are conditioned only
    through the masking pattern itself.
    """

    def __init__(self, path: str, device: str = "cpu", max_length: int = 1024):
        try:
            import torch
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as exc:  # pragma: no cover - optional extra
            raise RuntimeError(
                "the hf backend needs the optional [hf] extra (torch + transformers)"
            ) from exc
        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(path)
        self.model = AutoModelForMaskedLM.from_pretrained(path).to(device).eval()
        self.device = device
        self.max_length = max_length
        tok_mask = self.tokenizer.mask_token_id
        if tok_mask is None:
            raise RuntimeError("checkpoint has no mask token")
        self.vocab_size = len(self.tokenizer)
        self.mask_id = self.vocab_size - 1
        # wire -> tokenizer id table: drop the mask from its slot, append last
        order = [i for i in range(self.vocab_size) if i != tok_mask] + [tok_mask]
        self._wire_to_tok = np.asarray(order, dtype=np.int64)
        self._tok_to_wire = np.empty_like(self._wire_to_tok)
        self._tok_to_wire[self._wire_to_tok] = np.arange(self.vocab_size)

    def denoise(self, seq: np.ndarray, t: float) -> np.ndarray:
        torch = self._torch
        tok_ids = self._wire_to_tok[seq]
        with torch.no_grad():
            logits = self.model(
                input_ids=torch.as_tensor(tok_ids[None, :], device=self.device)
            ).logits[0]
            probs = torch.softmax(logits.float(), dim=-1).cpu().numpy()
        return constrain(probs[:, self._wire_to_tok], seq, self.mask_id)


class HfClassifierScorer:
    """Local sequence classifier; class probability as the score.

    No Hamming Lipschitz constant is known for a neural classifier, so beta
    is reported as unknown and bound-based client checks skip this scorer.
    """

    def __init__(self, path: str, wire_to_tok: np.ndarray, device: str = "cpu",
                 positive_class: int = 1):
        try:
            import torch
            from transformers import AutoModelForSequenceClassification
        except ImportError as exc:  # pragma: no cover - optional extra
            raise RuntimeError(
                "the hf scorer needs the optional [hf] extra (torch + transformers)"
            ) from exc
        self._torch = torch
        self.model = AutoModelForSequenceClassification.from_pretrained(path).to(device).eval()
        self.device = device
        self.positive_class = positive_class
        self._wire_to_tok = wire_to_tok
        self.beta: float | None = None

    def score(self, seq: np.ndarray) -> float:
        torch = self._torch
        tok_ids = self._wire_to_tok[seq]
        with torch.no_grad():
            logits = self.model(
                input_ids=torch.as_tensor(tok_ids[None, :], device=self.device)
            ).logits[0]
            probs = torch.softmax(logits.float(), dim=-1)
        return float(probs[self.positive_class])


def build_model(binding: ModelBinding):
    kind, params = _parse_spec(binding.model_spec)
    if kind == "synthetic":
        return SyntheticMaskedModel(
            vocab_size=int(params.get("vocab", 8)), seed=int(params.get("seed", 0))
        )
    if kind == "hf":
        return HfMaskedModel(params.get("path") or binding.model_spec.split(":", 1)[1],
                             device=binding.device, max_length=binding.max_length)
    raise ValueError(f"unknown model spec {binding.model_spec!r}")


def build_scorer(binding: ModelBinding, model):
    kind, params = _parse_spec(binding.scorer_spec)
    if kind == "lexicon":
        return LexiconScorer(model.vocab_size, seed=int(params.get("seed", 0)))
    if kind == "hf":
        wire_to_tok = getattr(model, "_wire_to_tok", np.arange(model.vocab_size))
        return HfClassifierScorer(
            params.get("path") or binding.scorer_spec.split(":", 1)[1],
            wire_to_tok, device=binding.device,
            positive_class=int(params.get("positive", 1)),
        )
    if kind == "none":
        return None
    raise ValueError(f"unknown scorer spec {binding.scorer_spec!r}")
