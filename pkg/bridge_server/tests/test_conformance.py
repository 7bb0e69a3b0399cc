"""The live server must pass the client package's protocol suite unchanged."""

import re
import subprocess
import sys
import time

import numpy as np
import pytest

from bridge_server.models import ModelBinding
from bridge_server.server import BridgeServer

masktree_bridge = pytest.importorskip("masktree.bridge")
masktree_conformance = pytest.importorskip("masktree.conformance")


def client_config(port):
    return masktree_bridge.BridgeConfig(host="127.0.0.1", port=port, timeout_ms=10_000)


def test_client_conformance_suite_passes_unchanged():
    binding = ModelBinding(model_spec="synthetic:vocab=7,seed=5", scorer_spec="lexicon:seed=2")
    with BridgeServer(binding) as server:
        results = masktree_conformance.run_conformance(
            client_config(server.port), roundtrip_count=10_000
        )
    assert [r["check"] for r in results] == [
        "handshake",
        "denoise-validity",
        "carry-over",
        "roundtrip",
        "reward-scoring",
    ]


def test_client_can_drive_generation_through_live_server():
    binding = ModelBinding(model_spec="synthetic:vocab=6,seed=8", scorer_spec="lexicon:seed=3")
    with BridgeServer(binding) as server:
        cfg = client_config(server.port)
        conn, info = masktree_bridge.connect(cfg)
        den = masktree_bridge.RemoteDenoiser(conn, info)
        rew = masktree_bridge.RemoteReward(conn, info)
        from masktree.core import CountingDenoiser, LinearSchedule, NfeLedger
        from masktree.samplers import fhs_generate

        ledger = NfeLedger()
        seq, run_ledger = fhs_generate(
            8, CountingDenoiser(den, ledger), LinearSchedule(), np.random.default_rng(0)
        )
        assert ledger.evals == 8
        assert seq.shape == (8,)
        assert (seq != info.mask_id).all()
        assert np.isfinite(rew.score(seq))
        conn.close()


def test_spawned_process_serves_the_protocol():
    proc = subprocess.Popen(
        [sys.executable, "-m", "bridge_server",
         "--port", "0", "--model", "synthetic:vocab=5,seed=1"],
        stdout=subprocess.PIPE, text=True,
    )
    try:
        line = proc.stdout.readline()
        port = int(re.search(r":(\d+)\s*$", line).group(1))
        deadline = time.time() + 5
        info = None
        while time.time() < deadline:
            try:
                conn, info = masktree_bridge.connect(client_config(port))
                break
            except OSError:
                time.sleep(0.05)
        assert info is not None and info.vocab_size == 5
        conn.close()
    finally:
        proc.terminate()
        proc.wait(timeout=5)
