"""Vocabulary, noise schedules, diffusion kernels, and synthetic denoisers.

Sequences are 1-D int64 numpy arrays of token ids; the last vocabulary id is
the absorbing mask token.  Denoisers map a (sequence, time) pair to an L x V
row-stochastic matrix of per-position token distributions.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

# Synthetic denoisers quantize time at this resolution inside their hash so
# that determinism survives floating-point noise in time arithmetic.
TIME_BUCKET = 1e-6

ROW_SUM_ATOL = 1e-9


@dataclass(frozen=True)
class Vocab:
    """Token alphabet of `size` ids; the last id is the mask token."""

    size: int

    def __post_init__(self) -> None:
        if self.size < 2:
            raise ValueError(f"vocab size must be >= 2, got {self.size}")

    @property
    def mask_id(self) -> int:
        return self.size - 1


def all_mask(length: int, vocab: Vocab) -> np.ndarray:
    if length < 1:
        raise ValueError(f"sequence length must be >= 1, got {length}")
    return np.full(length, vocab.mask_id, dtype=np.int64)


def masked_positions(seq: np.ndarray, vocab: Vocab) -> np.ndarray:
    return np.nonzero(seq == vocab.mask_id)[0]


def masked_count(seq: np.ndarray, vocab: Vocab) -> int:
    return int(np.count_nonzero(seq == vocab.mask_id))


def validate_sequence(seq: np.ndarray, vocab: Vocab) -> None:
    if seq.ndim != 1 or seq.shape[0] < 1:
        raise ValueError("sequence must be a non-empty 1-D array")
    if seq.min() < 0 or seq.max() >= vocab.size:
        raise ValueError(f"token ids must lie in [0, {vocab.size})")


class NoiseSchedule:
    """Monotone decreasing alpha(t) on [0, 1] with an exact inverse."""

    kind: str

    def alpha(self, t: float) -> float:
        raise NotImplementedError

    def alpha_inv(self, a: float) -> float:
        raise NotImplementedError


class LinearSchedule(NoiseSchedule):
    """alpha_t = 1 - t; alpha(0) = 1 and alpha(1) = 0 exactly."""

    kind = "linear"

    def alpha(self, t: float) -> float:
        return 1.0 - t

    def alpha_inv(self, a: float) -> float:
        return 1.0 - a


class GeometricSchedule(NoiseSchedule):
    """Masking probability interpolated geometrically from `floor` up to 1.

    1 - alpha_t = floor ** (1 - t), so alpha(1) = 0 exactly while
    alpha(0) = 1 - floor is slightly below 1.
    """

    kind = "geometric"

    def __init__(self, floor: float = 1e-4):
        if not 0.0 < floor < 1.0:
            raise ValueError(f"floor must be in (0, 1), got {floor}")
        self.floor = floor
        self._log_floor = math.log(floor)

    def alpha(self, t: float) -> float:
        return 1.0 - math.exp((1.0 - t) * self._log_floor)

    def alpha_inv(self, a: float) -> float:
        if a >= 1.0 - self.floor:
            return 0.0  # alpha(0) is the largest attainable value
        return 1.0 - math.log1p(-a) / self._log_floor


def make_schedule(kind: str, **kwargs) -> NoiseSchedule:
    if kind == "linear":
        return LinearSchedule()
    if kind == "geometric":
        return GeometricSchedule(**kwargs)
    raise ValueError(f"unknown schedule kind: {kind!r}")


def gamma(t: float, sched: NoiseSchedule) -> float:
    """Log-survival time gamma(t) = -log(1 - alpha_t); decreasing in t."""
    rem = 1.0 - sched.alpha(t)
    if rem <= 0.0:
        raise ValueError(f"gamma undefined at t={t}: masking probability is {rem}")
    return -math.log(rem)


def gamma_inv(g: float, sched: NoiseSchedule) -> float:
    """Inverse of gamma: the time t with -log(1 - alpha_t) = g >= 0."""
    if g < 0.0:
        raise ValueError(f"gamma values are nonnegative, got {g}")
    return sched.alpha_inv(1.0 - math.exp(-g))


def forward_corrupt(
    x: np.ndarray, t: float, sched: NoiseSchedule, vocab: Vocab, rng: np.random.Generator
) -> np.ndarray:
    """Mask each position of a clean sequence independently with prob 1 - alpha_t."""
    if masked_count(x, vocab):
        raise ValueError("forward corruption expects a mask-free sequence")
    a = min(max(sched.alpha(min(max(t, 0.0), 1.0)), 0.0), 1.0)
    out = x.copy()
    out[rng.random(x.shape[0]) >= a] = vocab.mask_id
    return out


def reverse_posterior_token(
    z_t: int, x: int, alpha_s: float, alpha_t: float, vocab: Vocab
) -> tuple[float, float]:
    """Single-token reverse kernel: (P(stay as z_t), P(reveal x)) for s < t.

    For an unmasked z_t the kernel copies through, i.e. (1, 0).  For a masked
    z_t the stay probability is (1 - alpha_s) / (1 - alpha_t) and the reveal
    probability is (alpha_s - alpha_t) / (1 - alpha_t).
    """
    if alpha_t >= 1.0:
        raise ValueError("reverse posterior undefined at alpha_t >= 1")
    if alpha_s < alpha_t:
        raise ValueError("need alpha_s >= alpha_t (s earlier than t)")
    if z_t != vocab.mask_id:
        return 1.0, 0.0
    rem = 1.0 - alpha_t
    return (1.0 - alpha_s) / rem, (alpha_s - alpha_t) / rem


def enforce_denoiser_constraints(mu: np.ndarray, z: np.ndarray, vocab: Vocab) -> np.ndarray:
    """Zero the mask column, renormalize masked rows, copy through unmasked rows."""
    out = np.array(mu, dtype=np.float64, copy=True)
    mask_id = vocab.mask_id
    is_masked = z == mask_id
    out[:, mask_id] = 0.0
    sums = out.sum(axis=1)
    bad = is_masked & (sums <= 0.0)
    if bad.any():
        raise ValueError(
            f"masked rows {np.nonzero(bad)[0].tolist()} have no support off the mask token"
        )
    out[is_masked] /= sums[is_masked, None]
    unmasked = np.nonzero(~is_masked)[0]
    out[unmasked] = 0.0
    out[unmasked, z[unmasked]] = 1.0
    return out


def check_prob_matrix(mu: np.ndarray, z: np.ndarray, vocab: Vocab, atol: float = ROW_SUM_ATOL) -> None:
    """Assert the constraint invariants on a denoiser output matrix."""
    if mu.shape != (z.shape[0], vocab.size):
        raise AssertionError(f"expected shape {(z.shape[0], vocab.size)}, got {mu.shape}")
    if (mu < 0.0).any():
        raise AssertionError("negative probabilities")
    sums = mu.sum(axis=1)
    if not np.allclose(sums, 1.0, rtol=0.0, atol=atol):
        raise AssertionError(f"row sums off by up to {np.abs(sums - 1.0).max():.3g}")
    is_masked = z == vocab.mask_id
    if mu[is_masked, vocab.mask_id].any():
        raise AssertionError("mask column not zero on masked rows")
    unmasked = np.nonzero(~is_masked)[0]
    if unmasked.size and not (mu[unmasked, z[unmasked]] == 1.0).all():
        raise AssertionError("unmasked rows are not one-hot on the observed token")


@dataclass
class NfeLedger:
    """Counter of denoiser forward evaluations, the unit of compute cost."""

    evals: int = 0

    def tick(self, n: int = 1) -> None:
        self.evals += n


class Denoiser:
    """Pure deterministic map (sequence, time) -> constrained L x V prob matrix."""

    vocab: Vocab

    def eval(self, seq: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError


class CountingDenoiser(Denoiser):
    """Proxy that increments a ledger once per eval call."""

    def __init__(self, inner: Denoiser, ledger: NfeLedger):
        self.inner = inner
        self.vocab = inner.vocab
        self.ledger = ledger

    def eval(self, seq: np.ndarray, t: float) -> np.ndarray:
        self.ledger.tick()
        return self.inner.eval(seq, t)


class ValidatingDenoiser(Denoiser):
    """Proxy that checks the constraint invariants on every output (test use)."""

    def __init__(self, inner: Denoiser):
        self.inner = inner
        self.vocab = inner.vocab

    def eval(self, seq: np.ndarray, t: float) -> np.ndarray:
        mu = self.inner.eval(seq, t)
        check_prob_matrix(mu, seq, self.vocab)
        return mu


class PlantedDenoiser(Denoiser):
    """Denoiser that believes in a fixed target sequence.

    At a masked position the target token gets probability 1 - eps(t) with
    eps(t) = eps0 * t, and the remaining non-mask tokens share eps(t) equally.
    eps0 = 0 gives a time-independent, fully confident denoiser.
    """

    def __init__(self, target: np.ndarray, vocab: Vocab, eps0: float = 0.0):
        validate_sequence(target, vocab)
        if masked_count(target, vocab):
            raise ValueError("planted target must be mask-free")
        if not 0.0 <= eps0 < 1.0:
            raise ValueError(f"eps0 must be in [0, 1), got {eps0}")
        self.target = target.copy()
        self.vocab = vocab
        self.eps0 = eps0
        # Rows do not depend on t when eps0 == 0, so the matrix for the most
        # recent state can be reused verbatim.  The retained reference keeps
        # the identity check sound (the cached array cannot be recycled).
        self._cache_seq: np.ndarray | None = None
        self._cache_key: bytes | None = None
        self._cache_mu: np.ndarray | None = None

    def eval(self, seq: np.ndarray, t: float) -> np.ndarray:
        if seq.shape != self.target.shape:
            raise ValueError("sequence length does not match the planted target")
        if self.eps0 == 0.0:
            if seq is self._cache_seq:
                return self._cache_mu
            key = seq.tobytes()
            if key == self._cache_key:
                self._cache_seq = seq
                return self._cache_mu
        V = self.vocab.size
        mask_id = self.vocab.mask_id
        L = seq.shape[0]
        mu = np.zeros((L, V))
        is_masked = seq == mask_id
        unmasked = np.nonzero(~is_masked)[0]
        mu[unmasked, seq[unmasked]] = 1.0
        masked = np.nonzero(is_masked)[0]
        if masked.size:
            eps = self.eps0 * t
            if V > 2 and eps > 0.0:
                # V - 2 non-target tokens share eps; the target slot is then
                # overwritten, leaving the row summing to exactly 1.
                mu[masked, : V - 1] = eps / (V - 2)
                mu[masked, self.target[masked]] = 1.0 - eps
            else:
                mu[masked, self.target[masked]] = 1.0
        if self.eps0 == 0.0:
            self._cache_seq = seq
            self._cache_key = seq.tobytes()
            self._cache_mu = mu
        return mu


class RandomTableDenoiser(Denoiser):
    """Deterministic pseudo-random denoiser keyed by (seed, state, time bucket).

    Masked rows are Dirichlet(concentration) draws over the non-mask tokens,
    generated from a counter-based stream keyed by a hash of the state, so
    identical inputs give bit-identical outputs.
    """

    def __init__(self, vocab: Vocab, seed: int, concentration: float = 1.0):
        if concentration <= 0.0:
            raise ValueError(f"concentration must be > 0, got {concentration}")
        self.vocab = vocab
        self.seed = int(seed)
        self.concentration = concentration

    def eval(self, seq: np.ndarray, t: float) -> np.ndarray:
        V = self.vocab.size
        mask_id = self.vocab.mask_id
        L = seq.shape[0]
        bucket = int(round(t / TIME_BUCKET))
        digest = hashlib.blake2b(
            struct.pack("<qq", self.seed, bucket) + seq.tobytes(), digest_size=16
        ).digest()
        gen = np.random.Generator(np.random.Philox(key=np.frombuffer(digest, dtype=np.uint64)))
        draws = gen.standard_gamma(self.concentration, size=(L, V - 1))
        mu = np.zeros((L, V))
        is_masked = seq == mask_id
        masked = np.nonzero(is_masked)[0]
        if masked.size:
            rows = draws[masked]
            sums = rows.sum(axis=1)
            flat = sums <= 0.0  # gamma draws can underflow at tiny concentration
            if flat.any():
                rows[flat] = 1.0
                sums[flat] = float(V - 1)
            mu[masked, : V - 1] = rows / sums[:, None]
        unmasked = np.nonzero(~is_masked)[0]
        mu[unmasked, seq[unmasked]] = 1.0
        return mu


def sample_row(row: np.ndarray, rng: np.random.Generator) -> int:
    """Draw a token id from one probability row by inverse CDF."""
    cdf = np.cumsum(row)
    total = cdf[-1]
    idx = int(np.searchsorted(cdf, rng.random() * total, side="right"))
    return min(idx, row.shape[0] - 1)
