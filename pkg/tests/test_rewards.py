"""Reward functions: hand values, mask semantics, and the Lipschitz bound."""

import numpy as np
import pytest

from masktree.core import Vocab, all_mask
from masktree.rewards import LexiconReward, TargetMatchReward, hamming


def seqs(*rows):
    return [np.array(r, dtype=np.int64) for r in rows]


def test_hamming_examples():
    x, y, z = seqs([0, 1, 0], [0, 0, 0], [1, 2, 1])
    assert hamming(x, x) == 0
    assert hamming(x, y) == 1
    assert hamming(x, z) == 3
    with pytest.raises(ValueError):
        hamming(x, np.array([0, 1], dtype=np.int64))


def test_hamming_symmetry_and_triangle():
    rng = np.random.default_rng(0)
    for _ in range(500):
        a, b, c = (rng.integers(0, 4, size=6).astype(np.int64) for _ in range(3))
        assert hamming(a, b) == hamming(b, a)
        assert hamming(a, c) <= hamming(a, b) + hamming(b, c)


def test_target_match_values():
    v = Vocab(4)
    target = np.array([0, 1, 2, 0], dtype=np.int64)
    r = TargetMatchReward(target, v)
    assert r.score(target) == 4.0
    assert r.score(all_mask(4, v)) == 0.0  # mask counts as mismatch
    flipped = target.copy()
    flipped[2] = 0
    assert r.score(target) - r.score(flipped) == 1.0  # beta attained
    with pytest.raises(ValueError):
        r.score(np.array([0, 1], dtype=np.int64))
    with pytest.raises(ValueError):
        TargetMatchReward(all_mask(4, v), v)


def test_lexicon_values_and_mask_weight():
    v = Vocab(3)
    r = LexiconReward(np.array([0.0, 1.0, 5.0]), v)  # mask weight forced to 0
    assert r.weights[v.mask_id] == 0.0
    assert r.score(np.array([1, 1], dtype=np.int64)) == 2.0
    assert r.score(all_mask(2, v)) == 0.0
    zero = LexiconReward(np.zeros(3), v)
    assert zero.score(np.array([0, 1, 2], dtype=np.int64)) == 0.0
    assert zero.lipschitz_beta == 0.0


def test_lexicon_rejects_bad_weights():
    v = Vocab(3)
    with pytest.raises(ValueError):
        LexiconReward(np.array([0.0, np.inf, 0.0]), v)
    with pytest.raises(ValueError):
        LexiconReward(np.zeros(2), v)


@pytest.mark.parametrize("kind", ["target_match", "lexicon"])
def test_lipschitz_bound_holds_exactly(kind):
    v = Vocab(5)
    rng = np.random.default_rng(99)
    if kind == "target_match":
        reward = TargetMatchReward(rng.integers(0, 4, size=8).astype(np.int64), v)
    else:
        reward = LexiconReward(rng.normal(size=5), v)
    for _ in range(10_000):
        x = rng.integers(0, 5, size=8).astype(np.int64)
        y = rng.integers(0, 5, size=8).astype(np.int64)
        assert abs(reward.score(x) - reward.score(y)) <= reward.lipschitz_beta * hamming(x, y)


def test_rewards_are_pure():
    v = Vocab(4)
    rng = np.random.default_rng(5)
    reward = LexiconReward(rng.normal(size=4), v)
    x = rng.integers(0, 4, size=6).astype(np.int64)
    assert reward.score(x) == reward.score(x.copy())
