"""Protocol conformance checks runnable against any bridge server.

The same checks gate the in-process loopback server used by the client test
suite and any externally launched server; a server is conformant when every
check passes unchanged.  Checks use only the wire protocol.
"""

from __future__ import annotations

import numpy as np

from .bridge import (
    PROTOCOL_VERSION,
    BridgeConfig,
    BridgeConnection,
    RemoteDenoiser,
    RemoteReward,
)
from .core import Vocab, check_prob_matrix


def check_handshake(cfg: BridgeConfig) -> dict:
    """Version string matches the client constant; vocab fields are sane."""
    with BridgeConnection(cfg) as conn:
        info = conn.handshake()
    assert info.version == PROTOCOL_VERSION
    assert info.vocab_size >= 2
    assert info.mask_id == info.vocab_size - 1, "mask id must be the last vocab id"
    return {"check": "handshake", "vocab_size": info.vocab_size}


def check_denoise_validity(cfg: BridgeConfig, lengths=(1, 4, 9)) -> dict:
    """All-mask inputs return full constraint-satisfying matrices."""
    with BridgeConnection(cfg) as conn:
        info = conn.handshake()
        den = RemoteDenoiser(conn, info)
        vocab = Vocab(info.vocab_size)
        for L in lengths:
            seq = np.full(L, vocab.mask_id, dtype=np.int64)
            for t in (1.0, 0.5, 0.125):
                mu = den.eval(seq, t)
                check_prob_matrix(mu, seq, vocab)
    return {"check": "denoise-validity", "lengths": list(lengths)}


def check_carry_over(cfg: BridgeConfig, trials: int = 25, seed: int = 5) -> dict:
    """Rows at unmasked positions come back one-hot on the observed token."""
    rng = np.random.default_rng(seed)
    with BridgeConnection(cfg) as conn:
        info = conn.handshake()
        den = RemoteDenoiser(conn, info)
        vocab = Vocab(info.vocab_size)
        for _ in range(trials):
            L = int(rng.integers(2, 12))
            seq = rng.integers(0, vocab.size - 1, size=L).astype(np.int64)
            seq[rng.random(L) < 0.5] = vocab.mask_id
            mu = den.eval(seq, float(rng.uniform(0.05, 1.0)))
            check_prob_matrix(mu, seq, vocab)
            unmasked = np.nonzero(seq != vocab.mask_id)[0]
            assert (np.argmax(mu[unmasked], axis=1) == seq[unmasked]).all()
    return {"check": "carry-over", "trials": trials}


def check_roundtrip(cfg: BridgeConfig, count: int = 10_000, seed: int = 17) -> dict:
    """Mask-free sequences survive the wire loss-free.

    The carry-over constraint makes the reply rows one-hot on the observed
    tokens, so argmax of each reply row must reproduce the request exactly.
    """
    rng = np.random.default_rng(seed)
    with BridgeConnection(cfg) as conn:
        info = conn.handshake()
        den = RemoteDenoiser(conn, info)
        vocab = Vocab(info.vocab_size)
        for _ in range(count):
            L = int(rng.integers(1, 9))
            seq = rng.integers(0, vocab.size - 1, size=L).astype(np.int64)
            mu = den.eval(seq, float(rng.uniform(0.05, 1.0)))
            recovered = np.argmax(mu, axis=1)
            assert np.array_equal(recovered, seq), f"{seq.tolist()} != {recovered.tolist()}"
    return {"check": "roundtrip", "count": count}


def check_reward_scoring(cfg: BridgeConfig, trials: int = 20, seed: int = 23) -> dict:
    """Reward requests return finite floats; repeated calls agree."""
    rng = np.random.default_rng(seed)
    with BridgeConnection(cfg) as conn:
        info = conn.handshake()
        rew = RemoteReward(conn, info)
        vocab = Vocab(info.vocab_size)
        for _ in range(trials):
            L = int(rng.integers(1, 12))
            seq = rng.integers(0, vocab.size, size=L).astype(np.int64)
            first = rew.score(seq)
            assert np.isfinite(first)
            assert rew.score(seq) == first
    return {"check": "reward-scoring", "trials": trials}


def run_conformance(cfg: BridgeConfig, roundtrip_count: int = 10_000) -> list[dict]:
    """Run the full conformance suite; raises AssertionError on any failure."""
    return [
        check_handshake(cfg),
        check_denoise_validity(cfg),
        check_carry_over(cfg),
        check_roundtrip(cfg, count=roundtrip_count),
        check_reward_scoring(cfg),
    ]
