"""Newline-delimited JSON protocol for remote denoisers and rewards.

One JSON object per line over a TCP stream; one request in flight per
connection; request ids strictly increase.  Requests:

    {"type": "hello",   "id": k}
    {"type": "denoise", "id": k, "seq": [...], "t": 0.25}
    {"type": "reward",  "id": k, "seq": [...]}

Replies carry the matching id plus, respectively, the handshake fields
(version, vocab_size, mask_id, optional reward_beta), a flat row-major
L*V "probs" array, or a "score" float.  Error replies carry "error".
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from dataclasses import dataclass

import numpy as np

from .core import Denoiser, Vocab, enforce_denoiser_constraints
from .rewards import Reward

PROTOCOL_VERSION = "mdlm-bridge/1"
WIRE_ROW_SUM_ATOL = 1e-6


class BridgeError(RuntimeError):
    """Base class for bridge failures."""


class BridgeTimeout(BridgeError):
    pass


class BridgeVersionMismatch(BridgeError):
    pass


class BridgeProtocolError(BridgeError):
    """Malformed reply, id mismatch, or server-side error reply."""


class BridgeValidationError(BridgeError):
    """Reply failed client-side validation (e.g. row sums off)."""


@dataclass
class BridgeConfig:
    host: str = "127.0.0.1"
    port: int = 9630
    timeout_ms: int = 10_000
    version: str = PROTOCOL_VERSION

    @classmethod
    def from_endpoint(cls, endpoint: str, timeout_ms: int = 10_000) -> "BridgeConfig":
        host, _, port = endpoint.rpartition(":")
        return cls(host=host or "127.0.0.1", port=int(port), timeout_ms=timeout_ms)


@dataclass
class ServerInfo:
    version: str
    vocab_size: int
    mask_id: int
    reward_beta: float | None


class BridgeConnection:
    """One socket with strictly increasing request ids and blocking replies."""

    def __init__(self, cfg: BridgeConfig):
        self.cfg = cfg
        self._lock = threading.Lock()
        self._next_id = 0
        self._sock = socket.create_connection(
            (cfg.host, cfg.port), timeout=cfg.timeout_ms / 1000.0
        )
        self._reader = self._sock.makefile("rb")

    def close(self) -> None:
        try:
            self._reader.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "BridgeConnection":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def request(self, message: dict) -> dict:
        with self._lock:
            req_id = self._next_id
            self._next_id += 1
            payload = dict(message, id=req_id)
            try:
                self._sock.sendall(json.dumps(payload).encode() + b"\n")
                line = self._reader.readline()
            except socket.timeout as exc:
                raise BridgeTimeout(f"no reply within {self.cfg.timeout_ms} ms") from exc
        if not line:
            raise BridgeProtocolError("connection closed by server")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeProtocolError(f"malformed reply: {line[:200]!r}") from exc
        if "error" in reply and reply.get("id") in (req_id, None):
            raise BridgeProtocolError(f"server error: {reply['error']!r}")
        if reply.get("id") != req_id:
            raise BridgeProtocolError(
                f"reply id {reply.get('id')!r} does not match request id {req_id}: {reply!r}"
            )
        return reply

    def handshake(self) -> ServerInfo:
        reply = self.request({"type": "hello"})
        version = reply.get("version")
        if version != self.cfg.version:
            raise BridgeVersionMismatch(
                f"server speaks {version!r}, client expects {self.cfg.version!r}"
            )
        return ServerInfo(
            version=version,
            vocab_size=int(reply["vocab_size"]),
            mask_id=int(reply["mask_id"]),
            reward_beta=reply.get("reward_beta"),
        )


class RemoteDenoiser(Denoiser):
    """Denoiser facade over one bridge connection.

    Replies are validated (shape, row sums within 1e-6) and then constraint-
    enforced locally before use.
    """

    def __init__(self, conn: BridgeConnection, info: ServerInfo):
        self.conn = conn
        self.vocab = Vocab(info.vocab_size)
        if info.mask_id != self.vocab.mask_id:
            raise BridgeValidationError(
                f"server mask id {info.mask_id} is not the last vocab id {self.vocab.mask_id}"
            )

    def eval(self, seq: np.ndarray, t: float) -> np.ndarray:
        reply = self.conn.request({"type": "denoise", "seq": seq.tolist(), "t": float(t)})
        probs = reply.get("probs")
        L, V = seq.shape[0], self.vocab.size
        if not isinstance(probs, list) or len(probs) != L * V:
            raise BridgeProtocolError(
                f"expected {L * V} probabilities, got {type(probs).__name__} "
                f"of length {len(probs) if isinstance(probs, list) else 'n/a'}"
            )
        mu = np.asarray(probs, dtype=np.float64).reshape(L, V)
        if (mu < 0.0).any():
            bad = int(np.argmin(mu) // V)
            raise BridgeValidationError(
                f"row {bad} has a negative probability (payload row: {mu[bad].tolist()})"
            )
        sums = mu.sum(axis=1)
        if not np.allclose(sums, 1.0, rtol=0.0, atol=WIRE_ROW_SUM_ATOL):
            bad = int(np.abs(sums - 1.0).argmax())
            raise BridgeValidationError(
                f"row {bad} sums to {sums[bad]!r} (payload row: {mu[bad].tolist()})"
            )
        return enforce_denoiser_constraints(mu, seq, self.vocab)


class RemoteReward(Reward):
    """Reward facade; beta comes from the handshake (None when unknown)."""

    mask_policy = "remote"

    def __init__(self, conn: BridgeConnection, info: ServerInfo):
        self.conn = conn
        self.lipschitz_beta = info.reward_beta

    def score(self, seq: np.ndarray) -> float:
        reply = self.conn.request({"type": "reward", "seq": seq.tolist()})
        score = reply.get("score")
        if not isinstance(score, (int, float)):
            raise BridgeProtocolError(f"expected a numeric score, got {reply!r}")
        return float(score)


def connect(cfg: BridgeConfig) -> tuple[BridgeConnection, ServerInfo]:
    conn = BridgeConnection(cfg)
    return conn, conn.handshake()


def remote_denoiser(cfg: BridgeConfig) -> RemoteDenoiser:
    conn, info = connect(cfg)
    return RemoteDenoiser(conn, info)


def remote_reward(cfg: BridgeConfig) -> RemoteReward:
    conn, info = connect(cfg)
    return RemoteReward(conn, info)


class LocalBridgeServer:
    """In-process loopback server wrapping any Denoiser and Reward.

    Intended for tests and offline runs: serves the wire protocol on an
    ephemeral localhost port from a daemon thread.  reply_filter, when
    given, may mutate each reply dict before it is written (fault injection).
    """

    def __init__(
        self,
        den: Denoiser,
        reward: Reward | None = None,
        reply_filter=None,
        version: str = PROTOCOL_VERSION,
    ):
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                while True:
                    line = self.rfile.readline()
                    if not line:
                        return
                    req_id = None
                    try:
                        msg = json.loads(line)
                        req_id = msg.get("id")
                        reply = outer._respond(msg)
                    except Exception as exc:  # malformed request: reply, keep serving
                        reply = {"id": req_id, "error": str(exc)}
                    if outer.reply_filter is not None:
                        reply = outer.reply_filter(reply)
                    self.wfile.write(json.dumps(reply).encode() + b"\n")

        self.den = den
        self.reward = reward
        self.reply_filter = reply_filter
        self.version = version
        self._server = socketserver.ThreadingTCPServer(("127.0.0.1", 0), Handler)
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def _respond(self, msg: dict) -> dict:
        kind = msg.get("type")
        req_id = msg.get("id")
        if kind == "hello":
            beta = self.reward.lipschitz_beta if self.reward is not None else None
            return {
                "id": req_id,
                "version": self.version,
                "vocab_size": self.den.vocab.size,
                "mask_id": self.den.vocab.mask_id,
                "reward_beta": beta,
            }
        if kind == "denoise":
            seq = np.asarray(msg["seq"], dtype=np.int64)
            mu = self.den.eval(seq, float(msg["t"]))
            return {"id": req_id, "probs": mu.reshape(-1).tolist()}
        if kind == "reward":
            if self.reward is None:
                return {"id": req_id, "error": "no reward bound"}
            seq = np.asarray(msg["seq"], dtype=np.int64)
            return {"id": req_id, "score": float(self.reward.score(seq))}
        return {"id": req_id, "error": f"unknown request type {kind!r}"}

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def config(self, timeout_ms: int = 10_000) -> BridgeConfig:
        return BridgeConfig(host="127.0.0.1", port=self.port, timeout_ms=timeout_ms)

    def __enter__(self) -> "LocalBridgeServer":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()
