"""Branching, resubstitution scoring, pruning, and the full search loop."""

import numpy as np
import pytest

from masktree.core import (
    CountingDenoiser,
    Denoiser,
    LinearSchedule,
    NfeLedger,
    PlantedDenoiser,
    RandomTableDenoiser,
    Vocab,
    all_mask,
)
from masktree.rewards import LexiconReward, TargetMatchReward
from masktree.samplers import fhs_generate
from masktree.search import (
    NodeRng,
    SearchNode,
    WidthSchedule,
    group_unmask_branch,
    resubstitute_score,
    topk_prune,
    tree_search,
    unmask_branch,
)

SCHED = LinearSchedule()


class StubDenoiser(Denoiser):
    """Returns a fixed matrix regardless of state or time."""

    def __init__(self, mu, vocab):
        self.mu = np.asarray(mu, dtype=np.float64)
        self.vocab = vocab

    def eval(self, seq, t):
        return self.mu


def make_node(seq, tau=1.0, score=0.0):
    seq = np.asarray(seq, dtype=np.int64)
    return SearchNode(seq=seq, tau=tau, score=score, parent_mu=None,
                      committed_index=None, lineage_key=(0, 0, 0))


def test_node_rng_is_state_keyed():
    seq = np.array([3, 3, 1], dtype=np.int64)
    a = NodeRng(7).stream(2, seq, 0.5).random(4)
    b = NodeRng(7).stream(2, seq, 0.5).random(4)
    assert np.array_equal(a, b)
    c = NodeRng(7).stream(2, seq, 0.25).random(4)
    d = NodeRng(8).stream(2, seq, 0.5).random(4)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_unmask_branch_planted_single_child():
    v = Vocab(4)
    target = np.array([2, 0, 1], dtype=np.int64)
    den = PlantedDenoiser(target, v, eps0=0.0)
    node = make_node(all_mask(3, v))
    tokens, pos, tau_next, mu = unmask_branch(node, 1, den, SCHED, NodeRng(0))
    assert tokens.shape == (1,)
    assert tokens[0] == target[pos]
    assert 0.0 < tau_next < 1.0


def test_unmask_branch_topk_order_and_cap():
    v = Vocab(4)
    mu = np.array([[0.5, 0.3, 0.2, 0.0], [0.5, 0.3, 0.2, 0.0]])
    den = StubDenoiser(mu, v)
    node = make_node(all_mask(2, v))
    tokens, pos, _, _ = unmask_branch(node, 3, den, SCHED, NodeRng(1))
    assert tokens.tolist() == [0, 1, 2]
    tokens, _, _, _ = unmask_branch(node, 10, den, SCHED, NodeRng(1))
    assert tokens.tolist() == [0, 1, 2]  # capped at positive non-mask tokens


def test_unmask_branch_tie_breaks_to_lower_id():
    v = Vocab(4)
    mu = np.array([[0.4, 0.4, 0.2, 0.0]])
    den = StubDenoiser(mu, v)
    tokens, _, _, _ = unmask_branch(make_node(all_mask(1, v)), 2, den, SCHED, NodeRng(2))
    assert tokens.tolist() == [0, 1]


def test_unmask_branch_time_follows_event_formula():
    # the branch's jump time is exactly the first-hitting draw for its stream
    v = Vocab(5)
    den = RandomTableDenoiser(v, seed=2)
    node = make_node(all_mask(5, v), tau=0.9)
    from masktree.samplers import fhs_next_time

    rng = NodeRng(3).stream(5, node.seq, 0.9)
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    expected = fhs_next_time(0.9, 5, u, SCHED)
    _, _, tau_next, _ = unmask_branch(node, 2, den, SCHED, NodeRng(3))
    assert tau_next == expected


def test_unmask_branch_requires_masks():
    v = Vocab(4)
    den = StubDenoiser(np.eye(4)[:3], v)
    with pytest.raises(ValueError):
        unmask_branch(make_node([0, 1, 2]), 1, den, SCHED, NodeRng(0))


def test_unmask_branch_single_eval():
    v = Vocab(5)
    ledger = NfeLedger()
    den = CountingDenoiser(RandomTableDenoiser(v, seed=4), ledger)
    unmask_branch(make_node(all_mask(6, v)), 3, den, SCHED, NodeRng(3))
    assert ledger.evals == 1


def test_group_unmask_reduces_to_single():
    v = Vocab(5)
    den = RandomTableDenoiser(v, seed=10)
    node = make_node(all_mask(5, v))
    tokens, pos, tau_next, _ = unmask_branch(node, 2, den, SCHED, NodeRng(6))
    expansion = group_unmask_branch(node, 1, 2, den, SCHED, NodeRng(6))
    assert expansion.tau_next == tau_next
    gpos, gtokens = expansion.groups[0]
    assert gpos == pos
    assert np.array_equal(gtokens, tokens)


def test_group_unmask_distinct_pairs_and_bounds():
    v = Vocab(8)
    den = RandomTableDenoiser(v, seed=12)
    node = make_node(all_mask(6, v))
    expansion = group_unmask_branch(node, 2, 5, den, SCHED, NodeRng(7))
    pairs = [(pos, t) for pos, tokens in expansion.groups for t in tokens]
    assert len(pairs) <= 10
    assert len(set(pairs)) == len(pairs)
    positions = [pos for pos, _ in expansion.groups]
    assert len(set(positions)) == 2
    with pytest.raises(ValueError):
        group_unmask_branch(node, 7, 2, den, SCHED, NodeRng(7))


def test_resubstitute_score_cases():
    v = Vocab(4)
    target = np.array([0, 1, 0], dtype=np.int64)
    reward = TargetMatchReward(target, v)
    complete = np.array([0, 1, 1], dtype=np.int64)
    mu = np.zeros((3, 4))
    assert resubstitute_score(complete, mu, reward, v) == 2.0
    child = np.array([0, v.mask_id, v.mask_id], dtype=np.int64)
    mu = np.array([
        [1.0, 0.0, 0.0, 0.0],
        [0.1, 0.8, 0.1, 0.0],
        [0.6, 0.3, 0.1, 0.0],
    ])
    assert resubstitute_score(child, mu, reward, v) == 3.0


def test_resubstitute_argmax_tie_lower_id():
    v = Vocab(3)
    reward = LexiconReward(np.array([0.0, 1.0, 0.0]), v)
    child = np.array([v.mask_id], dtype=np.int64)
    mu = np.array([[0.5, 0.5, 0.0]])
    assert resubstitute_score(child, mu, reward, v) == 0.0  # fills token 0


def test_topk_prune_ordering_and_ties():
    nodes = [make_node([0, 1], score=3.0), make_node([1, 0], score=1.0), make_node([1, 1], score=2.0)]
    kept = topk_prune(nodes, 2)
    assert [n.score for n in kept] == [3.0, 2.0]
    ab = make_node([0, 1], score=1.0)
    ba = make_node([1, 0], score=1.0)
    kept = topk_prune([ba, ab], 1)
    assert kept[0] is ab  # lexicographically smaller sequence wins ties
    full = topk_prune(nodes, 10)
    assert [n.score for n in full] == [3.0, 2.0, 1.0]
    with pytest.raises(ValueError):
        topk_prune([], 1)


def test_tree_search_finds_planted_target():
    v = Vocab(4)
    target = np.random.default_rng(0).integers(0, 3, size=7).astype(np.int64)
    den = PlantedDenoiser(target, v, eps0=0.0)
    reward = TargetMatchReward(target, v)
    res = tree_search(7, den, SCHED, reward, WidthSchedule.constant(2, 2), seed=0)
    assert np.array_equal(res.sequence, target)
    assert res.score == 7.0
    assert res.ledger.evals <= 1 + 2 * 6


def test_tree_search_is_deterministic():
    v = Vocab(6)
    den = RandomTableDenoiser(v, seed=3)
    reward = LexiconReward(np.random.default_rng(1).normal(size=6), v)
    a = tree_search(6, den, SCHED, reward, WidthSchedule.constant(3, 4), seed=5)
    b = tree_search(6, den, SCHED, reward, WidthSchedule.constant(3, 4), seed=5)
    assert np.array_equal(a.sequence, b.sequence)
    assert a.score == b.score
    assert a.ledger.evals == b.ledger.evals


def test_tree_search_degenerate_matches_fhs_on_deterministic_rows():
    v = Vocab(4)
    target = np.random.default_rng(2).integers(0, 3, size=5).astype(np.int64)
    den = PlantedDenoiser(target, v, eps0=0.0)
    reward = TargetMatchReward(target, v)
    res = tree_search(5, den, SCHED, reward, WidthSchedule.constant(1, 1), seed=9)
    fhs_seq, fhs_ledger = fhs_generate(5, den, SCHED, np.random.default_rng(9))
    assert np.array_equal(res.sequence, fhs_seq)
    assert res.ledger.evals == fhs_ledger.evals == 5


def test_tree_search_level_structure():
    v = Vocab(5)
    den = RandomTableDenoiser(v, seed=8)
    reward = LexiconReward(np.random.default_rng(4).normal(size=5), v)
    res = tree_search(6, den, SCHED, reward, WidthSchedule.constant(3, 2), seed=1,
                      record_retained=True)
    assert [s.level for s in res.trajectory] == [6, 5, 4, 3, 2, 1]
    assert all(s.pool_max >= s.pool_mean for s in res.trajectory)
    assert len(res.retained) == 6
    # retained count: min(m, pool); pool at the first level is b = 3 children
    assert len(res.retained[0]) == 2


def test_tree_search_group_k1_bit_identical():
    v = Vocab(4)
    target = np.random.default_rng(3).integers(0, 3, size=9).astype(np.int64)
    den = PlantedDenoiser(target, v, eps0=0.9)
    reward = TargetMatchReward(target, v)
    plain = tree_search(9, den, SCHED, reward, WidthSchedule.constant(4, 2), seed=17)
    grouped = tree_search(9, den, SCHED, reward, WidthSchedule.constant(4, 2), seed=17, groups=1)
    assert np.array_equal(plain.sequence, grouped.sequence)
    assert plain.score == grouped.score
    assert plain.ledger.evals == grouped.ledger.evals


def test_tree_search_groups_expand_children():
    v = Vocab(6)
    den = RandomTableDenoiser(v, seed=21)
    reward = LexiconReward(np.random.default_rng(5).normal(size=6), v)
    res = tree_search(6, den, SCHED, reward, WidthSchedule.constant(2, 3), seed=2, groups=2)
    assert res.ledger.evals == 1 + 3 * 5  # still one eval per parent


def test_branch_children_differ_in_committed_token():
    v = Vocab(6)
    den = RandomTableDenoiser(v, seed=30)
    node = make_node(all_mask(4, v))
    tokens, pos, _, _ = unmask_branch(node, 4, den, SCHED, NodeRng(11))
    assert len(set(tokens.tolist())) == len(tokens)


def test_width_schedule_validation():
    ws = WidthSchedule.constant(2, 3)
    assert ws.beam(1) == 2 and ws.tree(5) == 3
    varying = WidthSchedule(lambda n: n, lambda n: 1 + n % 2)
    assert varying.beam(4) == 4
    with pytest.raises(ValueError):
        WidthSchedule.constant(0, 1).beam(1)
