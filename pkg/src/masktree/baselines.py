"""Comparison methods over the same denoiser/reward interfaces.

best_of_n reranks independent first-hitting runs; fk_steer is an FK-style
sequential Monte Carlo sampler with difference-of-score potentials and
multinomial resampling.  The two alternate pruning scorers (previous-step
and true-posterior) plug into the tree search for ablation runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CountingDenoiser, Denoiser, NfeLedger, NoiseSchedule, all_mask, sample_row
from .rewards import Reward
from .samplers import _positive_uniform, fhs_generate, fhs_next_time
from .search import SearchNode, resubstitute_score


@dataclass
class Particle:
    seq: np.ndarray
    tau: float
    weight: float
    last_score: float


def effective_sample_size(weights: np.ndarray) -> float:
    """1 / sum(w_i^2) for normalized weights; always in [1, len(weights)]."""
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    return 1.0 / float((w**2).sum())


def best_of_n(
    N: int,
    L: int,
    den: Denoiser,
    sched: NoiseSchedule,
    reward: Reward,
    seed: int,
) -> tuple[np.ndarray, float, NfeLedger]:
    """Draw N independent first-hitting samples and keep the best reward."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    streams = np.random.SeedSequence(seed).spawn(N)
    ledger = NfeLedger()
    best_seq: np.ndarray | None = None
    best_score = -np.inf
    for child in streams:
        seq, run_ledger = fhs_generate(L, den, sched, np.random.default_rng(child))
        ledger.tick(run_ledger.evals)
        score = reward.score(seq)
        if score > best_score:
            best_seq = seq
            best_score = score
    return best_seq, float(best_score), ledger


def fk_steer(
    P: int,
    L: int,
    den: Denoiser,
    sched: NoiseSchedule,
    reward: Reward,
    lam: float = 1.0,
    ess_frac: float = 0.5,
    seed: int = 0,
) -> tuple[np.ndarray, float, NfeLedger]:
    """Advance P particles through unmasking events in lockstep.

    After each event a particle's log-weight gains (new - old) resubstitution
    score divided by lam; the population is multinomially resampled whenever
    the effective sample size drops below ess_frac * P.  Returns the final
    particle with the highest exact reward.

    Particle streams are spawned exactly as in best_of_n, so with resampling
    disabled (ess_frac below 1/P) the runs coincide with Best-of-N at P = N.
    """
    if P < 1:
        raise ValueError(f"P must be >= 1, got {P}")
    if lam <= 0.0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if not 0.0 < ess_frac <= 1.0:
        raise ValueError(f"ess_frac must lie in (0, 1], got {ess_frac}")
    vocab = den.vocab
    ledger = NfeLedger()
    cden = CountingDenoiser(den, ledger)
    children = np.random.SeedSequence(seed).spawn(P + 1)
    streams = [np.random.default_rng(c) for c in children[:P]]
    resample_rng = np.random.default_rng(children[P])

    particles = [
        Particle(seq=all_mask(L, vocab), tau=1.0, weight=1.0 / P, last_score=0.0)
        for _ in range(P)
    ]
    log_w = np.zeros(P)

    for n in range(L, 0, -1):
        for i, p in enumerate(particles):
            rng = streams[i]
            u = _positive_uniform(rng)
            p.tau = fhs_next_time(p.tau, n, u, sched)
            mu = cden.eval(p.seq, p.tau)
            masked = np.nonzero(p.seq == vocab.mask_id)[0]
            pos = masked[rng.integers(masked.size)]
            p.seq[pos] = sample_row(mu[pos], rng)
            new_score = resubstitute_score(p.seq, mu, reward, vocab)
            log_w[i] += (new_score - p.last_score) / lam
            p.last_score = new_score
        if not np.isfinite(log_w).all():
            raise RuntimeError(f"non-finite particle log-weights: {log_w.tolist()}")
        shifted = np.exp(log_w - log_w.max())
        weights = shifted / shifted.sum()
        for p, w in zip(particles, weights):
            p.weight = float(w)
        if effective_sample_size(weights) < ess_frac * P:
            picks = resample_rng.choice(P, size=P, p=weights)
            particles = [
                Particle(
                    seq=particles[j].seq.copy(),
                    tau=particles[j].tau,
                    weight=1.0 / P,
                    last_score=particles[j].last_score,
                )
                for j in picks
            ]
            log_w = np.zeros(P)

    best_seq: np.ndarray | None = None
    best_score = -np.inf
    for p in particles:
        score = reward.score(p.seq)
        if score > best_score:
            best_seq = p.seq
            best_score = score
    return best_seq, float(best_score), ledger


def score_previous_step(child: SearchNode, reward: Reward, vocab) -> float:
    """Score a candidate by its parent state's reward (masks included).

    The parent state is the candidate with its committed position re-masked;
    a root-level node scores its own sequence.  Costs no denoiser calls.
    """
    if child.committed_index is None:
        return reward.score(child.seq)
    parent_seq = child.seq.copy()
    parent_seq[child.committed_index] = vocab.mask_id
    return reward.score(parent_seq)


def score_true_posterior(child: SearchNode, den: Denoiser, reward: Reward) -> float:
    """Score a candidate with a fresh evaluation conditioned on the candidate.

    Makes one denoiser call at (child.seq, child.tau) and resubstitutes from
    the child-conditioned matrix, so each scored child costs one extra eval.
    """
    mu = den.eval(child.seq, child.tau)
    return resubstitute_score(child.seq, mu, reward, den.vocab)


def previous_step_scorer(child_seq, mu, tau, parent, den, reward) -> float:
    """Tree-search scorer: reuse the parent state's reward for every child."""
    return reward.score(parent.seq)


def true_posterior_scorer(child_seq, mu, tau, parent, den, reward) -> float:
    """Tree-search scorer: re-evaluate the denoiser at each child (+1 eval)."""
    mu_child = den.eval(child_seq, tau)
    return resubstitute_score(child_seq, mu_child, reward, den.vocab)
