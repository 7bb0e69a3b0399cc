"""Baseline generation: naive grid stepping and first-hitting sampling (FHS).

Naive sampling walks a uniform grid in gamma-time and unmasks positions
independently at each step, wasting most evaluations on no-op steps.  FHS
jumps straight to the next unmasking event, spending exactly one denoiser
evaluation per revealed token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CountingDenoiser,
    Denoiser,
    NfeLedger,
    NoiseSchedule,
    Vocab,
    all_mask,
    gamma,
    gamma_inv,
    sample_row,
)


@dataclass
class FirstChangeOutcome:
    """Result of running the naive grid until the first position unmasks."""

    tau_next: float
    committed_index: int
    committed_token: int
    evals: int


def fhs_next_time(tau_n: float, n: int, u: float, sched: NoiseSchedule) -> float:
    """Next unmasking-event time given n masked tokens and a uniform draw.

    Inverse-CDF form alpha_inv(1 - u**(1/n) * (1 - alpha(tau_n))); under the
    linear schedule this reduces to u**(1/n) * tau_n.
    """
    if n < 1:
        raise ValueError(f"need at least one masked token, got n={n}")
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie in (0, 1), got {u}")
    if not 0.0 < tau_n <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau_n}")
    a = sched.alpha(tau_n)
    return sched.alpha_inv(1.0 - u ** (1.0 / n) * (1.0 - a))


def _positive_uniform(rng: np.random.Generator) -> float:
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return u


def naive_parallel_step(
    z: np.ndarray,
    s: float,
    s_next: float,
    den: Denoiser,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """One factorized reverse transition from time s down to s_next.

    Costs one denoiser evaluation.  Each masked position independently
    reveals with probability (alpha_next - alpha_s) / (1 - alpha_s), drawing
    its token from the constrained row of the step-start prediction.  Returns
    the input array object unchanged when nothing reveals.
    """
    if s_next >= s:
        raise ValueError(f"step must move backward in time: s_next={s_next} >= s={s}")
    mu = den.eval(z, s)
    a_s = sched.alpha(s)
    a_next = sched.alpha(s_next)
    rem = 1.0 - a_s
    if rem <= 0.0:
        return z
    p_reveal = (a_next - a_s) / rem
    masked = (z == den.vocab.mask_id).nonzero()[0]
    if masked.size == 0:
        return z
    hits = masked[rng.random(masked.size) < p_reveal]
    if hits.size == 0:
        return z
    out = z.copy()
    for pos in hits:
        out[pos] = sample_row(mu[pos], rng)
    return out


def naive_generate(
    L: int,
    den: Denoiser,
    sched: NoiseSchedule,
    h: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, NfeLedger]:
    """Run the naive sampler on the gamma grid until no masks remain."""
    if h <= 0.0:
        raise ValueError(f"grid step must be positive, got {h}")
    vocab = den.vocab
    ledger = NfeLedger()
    cden = CountingDenoiser(den, ledger)
    z = all_mask(L, vocab)
    t = 1.0
    k = 0
    while np.any(z == vocab.mask_id):
        k += 1
        # gamma(1) = 0, so grid points are exact multiples of h.
        t_next = gamma_inv(k * h, sched)
        z = naive_parallel_step(z, t, t_next, cden, sched, rng)
        t = t_next
    return z, ledger


def fhs_generate(
    L: int,
    den: Denoiser,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> tuple[np.ndarray, NfeLedger]:
    """Generate a full sequence by simulating only the unmasking events.

    One denoiser evaluation per event, so the ledger always reads exactly L.
    The final event's token is drawn from the prediction at tau_0 > 0; time
    zero itself is never evaluated.
    """
    vocab = den.vocab
    ledger = NfeLedger()
    cden = CountingDenoiser(den, ledger)
    z = all_mask(L, vocab)
    tau = 1.0
    for n in range(L, 0, -1):
        u = _positive_uniform(rng)
        tau = fhs_next_time(tau, n, u, sched)
        mu = cden.eval(z, tau)
        masked = np.nonzero(z == vocab.mask_id)[0]
        pos = masked[rng.integers(masked.size)]
        z[pos] = sample_row(mu[pos], rng)
    return z, ledger


def first_change_trial(
    z: np.ndarray,
    tau: float,
    den: Denoiser,
    sched: NoiseSchedule,
    h: float,
    rng: np.random.Generator,
) -> FirstChangeOutcome:
    """Step the naive grid from tau until >= 1 position unmasks.

    If several positions unmask on the same grid step one is chosen uniformly
    as the committed position and the rest are discarded.  The eval count is
    the number of grid steps taken.
    """
    vocab = den.vocab
    if not np.any(z == vocab.mask_id):
        raise ValueError("state has no masked positions")
    if h <= 0.0:
        raise ValueError(f"grid step must be positive, got {h}")
    g0 = gamma(tau, sched)
    s = tau
    evals = 0
    k = 0
    while True:
        k += 1
        s_next = gamma_inv(g0 + k * h, sched)
        z_next = naive_parallel_step(z, s, s_next, den, sched, rng)
        evals += 1
        if z_next is not z:
            changed = np.nonzero(z_next != z)[0]
            pick = changed[rng.integers(changed.size)] if changed.size > 1 else changed[0]
            return FirstChangeOutcome(
                tau_next=s_next,
                committed_index=int(pick),
                committed_token=int(z_next[pick]),
                evals=evals,
            )
        s = s_next
