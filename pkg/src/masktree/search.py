"""Reward-guided tree search over unmasking events.

Branching jumps to the next unmasking event (one denoiser call per parent)
and enumerates the top-b tokens at one uniformly chosen masked position;
pruning scores each candidate by deterministic resubstitution (remaining
masks filled with argmax predictions) and keeps the best m nodes under a
run-independent canonical ordering.

All randomness is drawn from per-node streams keyed by (seed, level, state),
so a state that appears in two runs receives identical draws regardless of
which other nodes exist or how expansion is scheduled.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    CountingDenoiser,
    Denoiser,
    NfeLedger,
    NoiseSchedule,
    Vocab,
    all_mask,
)
from .rewards import Reward
from .samplers import fhs_next_time, _positive_uniform


@dataclass
class SearchNode:
    """One node of the search tree; immutable once created.

    parent_mu is the constraint-enforced prediction matrix that produced this
    node, evaluated at this node's commitment time; committed_index is the
    position unmasked by that commitment (None for the root).
    """

    seq: np.ndarray
    tau: float
    score: float
    parent_mu: np.ndarray | None
    committed_index: int | None
    lineage_key: tuple[int, int, int]  # (level = masks remaining, parent rank, branch rank)


class WidthSchedule:
    """Per-level beam width b(n) and tree width m(n), both >= 1."""

    def __init__(
        self,
        beam: int | Callable[[int], int],
        tree: int | Callable[[int], int],
    ):
        self._beam = beam if callable(beam) else (lambda n, v=int(beam): v)
        self._tree = tree if callable(tree) else (lambda n, v=int(tree): v)

    def beam(self, n: int) -> int:
        b = int(self._beam(n))
        if b < 1:
            raise ValueError(f"beam width must be >= 1 at level {n}, got {b}")
        return b

    def tree(self, n: int) -> int:
        m = int(self._tree(n))
        if m < 1:
            raise ValueError(f"tree width must be >= 1 at level {n}, got {m}")
        return m

    @classmethod
    def constant(cls, beam: int, tree: int) -> "WidthSchedule":
        return cls(beam, tree)


class NodeRng:
    """Deterministic per-node random streams keyed by (seed, level, state).

    The key hashes the node's token array and commitment time, so identical
    states in two different runs (or threads) receive identical streams.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def stream(self, level: int, seq: np.ndarray, tau: float) -> np.random.Generator:
        h = hashlib.blake2b(digest_size=16)
        h.update(struct.pack("<qqd", self.seed, level, tau))
        h.update(seq.tobytes())
        key = np.frombuffer(h.digest(), dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def seq_key(seq: np.ndarray) -> bytes:
    """Bytes whose lexicographic order equals the token-wise numeric order."""
    return seq.astype(">u8").tobytes()


def canonical_key(node: SearchNode) -> tuple:
    """Run-independent ordering: score desc, token sequence asc, tau asc."""
    return (-node.score, seq_key(node.seq), node.tau)


def topk_prune(pool: list[SearchNode], m: int) -> list[SearchNode]:
    """Keep the m best nodes of the pool, sorted by the canonical key."""
    if not pool:
        raise ValueError("cannot prune an empty pool")
    if m < 1:
        raise ValueError(f"tree width must be >= 1, got {m}")
    return sorted(pool, key=canonical_key)[:m]


@dataclass
class BranchExpansion:
    """Children proposed from one parent: shared time, shared prediction."""

    groups: list[tuple[int, np.ndarray]]  # (masked position, token ids by rank)
    tau_next: float
    mu: np.ndarray


def _top_tokens(row: np.ndarray, b: int) -> np.ndarray:
    """Top-b positive-probability token ids, ties broken by lower id."""
    order = np.lexsort((np.arange(row.shape[0]), -row))
    positive = int(np.count_nonzero(row > 0.0))
    return order[: min(b, positive)].astype(np.int64)


def _expand(
    node: SearchNode,
    k: int,
    b: int,
    den: Denoiser,
    sched: NoiseSchedule,
    node_rng: NodeRng,
) -> BranchExpansion:
    vocab = den.vocab
    masked = np.nonzero(node.seq == vocab.mask_id)[0]
    n = masked.size
    if n == 0:
        raise ValueError("cannot branch from a fully unmasked node")
    if k < 1 or k > n:
        raise ValueError(f"group count must lie in [1, {n}], got {k}")
    rng = node_rng.stream(n, node.seq, node.tau)
    u = _positive_uniform(rng)
    tau_next = fhs_next_time(node.tau, n, u, sched)
    mu = den.eval(node.seq, tau_next)
    perm = rng.permutation(n)
    groups = [(int(masked[j]), _top_tokens(mu[masked[j]], b)) for j in perm[:k]]
    return BranchExpansion(groups=groups, tau_next=tau_next, mu=mu)


def unmask_branch(
    node: SearchNode,
    b: int,
    den: Denoiser,
    sched: NoiseSchedule,
    node_rng: NodeRng,
) -> tuple[np.ndarray, int, float, np.ndarray]:
    """Branch at the next unmasking event with exactly one denoiser call.

    Draws the event time, evaluates the denoiser there, picks one masked
    position uniformly, and returns (top-b token ids at that position, the
    position, the event time, the prediction matrix).  All children implied
    by the token set share the position and time.
    """
    expansion = _expand(node, 1, b, den, sched, node_rng)
    pos, tokens = expansion.groups[0]
    return tokens, pos, expansion.tau_next, expansion.mu


def group_unmask_branch(
    node: SearchNode,
    k: int,
    b: int,
    den: Denoiser,
    sched: NoiseSchedule,
    node_rng: NodeRng,
) -> BranchExpansion:
    """Branch at k distinct masked positions sharing one call and one time.

    Positions are drawn uniformly without replacement; each contributes its
    top-b tokens, for up to k*b children.  k=1 reproduces unmask_branch
    bit-exactly under the same stream.
    """
    return _expand(node, k, b, den, sched, node_rng)


def resubstitute_score(
    child_seq: np.ndarray, mu: np.ndarray, reward: Reward, vocab: Vocab
) -> float:
    """Score a candidate by filling its remaining masks with argmax tokens.

    Deterministic and free of denoiser calls: the parent's prediction matrix
    (evaluated at the candidate's commitment time) supplies the fill.
    """
    masked = np.nonzero(child_seq == vocab.mask_id)[0]
    if masked.size == 0:
        return reward.score(child_seq)
    filled = child_seq.copy()
    filled[masked] = np.argmax(mu[masked], axis=1)  # ties resolve to lower id
    return reward.score(filled)


# A scorer maps (candidate, parent prediction, commitment time, parent node,
# denoiser, reward) to a pruning score.  The denoiser argument is the run's
# counting proxy, so scorers that evaluate it are charged to the ledger.
Scorer = Callable[[np.ndarray, np.ndarray, float, SearchNode, Denoiser, Reward], float]


def resubstitution_scorer(
    child_seq: np.ndarray,
    mu: np.ndarray,
    tau: float,
    parent: SearchNode,
    den: Denoiser,
    reward: Reward,
) -> float:
    return resubstitute_score(child_seq, mu, reward, den.vocab)


@dataclass
class LevelStats:
    level: int
    pool_max: float
    pool_mean: float


@dataclass
class TreeSearchResult:
    sequence: np.ndarray
    score: float
    ledger: NfeLedger
    trajectory: list[LevelStats]
    retained: list[list[tuple[bytes, float]]] | None = None


def tree_search(
    L: int,
    den: Denoiser,
    sched: NoiseSchedule,
    reward: Reward,
    widths: WidthSchedule,
    seed: int,
    groups: int = 1,
    scorer: Scorer | None = None,
    record_retained: bool = False,
) -> TreeSearchResult:
    """Run the full search from the all-mask root down to complete sequences.

    For n = L..1 every retained node is expanded once (one denoiser call),
    children are scored and the pool pruned to m(n).  Returns the canonical
    argmax of the final set, the eval ledger, and per-level pool statistics.
    """
    if groups < 1:
        raise ValueError(f"groups must be >= 1, got {groups}")
    vocab = den.vocab
    ledger = NfeLedger()
    cden = CountingDenoiser(den, ledger)
    node_rng = NodeRng(seed)
    score_fn = scorer if scorer is not None else resubstitution_scorer

    root = SearchNode(
        seq=all_mask(L, vocab),
        tau=1.0,
        score=float("-inf"),
        parent_mu=None,
        committed_index=None,
        lineage_key=(L, 0, 0),
    )
    retained: list[SearchNode] = [root]
    trajectory: list[LevelStats] = []
    snapshots: list[list[tuple[bytes, float]]] | None = [] if record_retained else None

    for n in range(L, 0, -1):
        b_n = widths.beam(n)
        m_n = widths.tree(n)
        k_n = min(groups, n)
        pool: list[SearchNode] = []
        for parent_rank, parent in enumerate(retained):
            expansion = _expand(parent, k_n, b_n, cden, sched, node_rng)
            branch_rank = 0
            for pos, tokens in expansion.groups:
                for token in tokens:
                    child_seq = parent.seq.copy()
                    child_seq[pos] = token
                    score = score_fn(
                        child_seq, expansion.mu, expansion.tau_next, parent, cden, reward
                    )
                    pool.append(
                        SearchNode(
                            seq=child_seq,
                            tau=expansion.tau_next,
                            score=score,
                            parent_mu=expansion.mu,
                            committed_index=pos,
                            lineage_key=(n - 1, parent_rank, branch_rank),
                        )
                    )
                    branch_rank += 1
        scores = [node.score for node in pool]
        trajectory.append(
            LevelStats(level=n, pool_max=max(scores), pool_mean=sum(scores) / len(scores))
        )
        retained = topk_prune(pool, m_n)
        if snapshots is not None:
            snapshots.append([(seq_key(node.seq), node.tau) for node in retained])

    best = retained[0]  # topk_prune output is canonically sorted
    return TreeSearchResult(
        sequence=best.seq.copy(),
        score=best.score,
        ledger=ledger,
        trajectory=trajectory,
        retained=snapshots,
    )
