"""TCP server: one JSON object per line, one reply per request.

Multiple connections are multiplexed onto a single model through a lock, so
inference is serialized while socket handling stays concurrent.  Malformed
requests produce an error reply and leave the connection open.
"""

from __future__ import annotations

import json
import socketserver
import threading

import numpy as np

from .models import ModelBinding, build_model, build_scorer
from .protocol import PROTOCOL_VERSION


class BridgeServer:
    def __init__(self, binding: ModelBinding, host: str = "127.0.0.1", port: int = 0):
        self.binding = binding
        self.model = build_model(binding)
        self.scorer = build_scorer(binding, self.model)
        self._infer_lock = threading.Lock()
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self) -> None:
                while True:
                    line = self.rfile.readline()
                    if not line:
                        return
                    reply = outer.respond_line(line)
                    self.wfile.write(json.dumps(reply).encode() + b"\n")

        self._server = socketserver.ThreadingTCPServer((host, port), Handler)
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def respond_line(self, line: bytes) -> dict:
        req_id = None
        try:
            msg = json.loads(line)
            req_id = msg.get("id")
            return self.respond(msg)
        except Exception as exc:
            return {"id": req_id, "error": str(exc)}

    def _sequence(self, msg: dict) -> np.ndarray:
        seq = np.asarray(msg["seq"], dtype=np.int64)
        if seq.ndim != 1 or seq.size == 0:
            raise ValueError("seq must be a non-empty flat array of token ids")
        if seq.size > self.binding.max_length:
            raise ValueError(
                f"sequence length {seq.size} exceeds max length {self.binding.max_length}"
            )
        if seq.min() < 0 or seq.max() >= self.model.vocab_size:
            raise ValueError(f"token ids must lie in [0, {self.model.vocab_size})")
        return seq

    def respond(self, msg: dict) -> dict:
        kind = msg.get("type")
        req_id = msg.get("id")
        if kind == "hello":
            beta = self.scorer.beta if self.scorer is not None else None
            return {
                "id": req_id,
                "version": PROTOCOL_VERSION,
                "vocab_size": self.model.vocab_size,
                "mask_id": self.model.mask_id,
                "reward_beta": beta,
            }
        if kind == "denoise":
            seq = self._sequence(msg)
            t = float(msg["t"])
            with self._infer_lock:
                probs = self.model.denoise(seq, t)
            return {"id": req_id, "probs": probs.reshape(-1).tolist()}
        if kind == "reward":
            if self.scorer is None:
                return {"id": req_id, "error": "no scorer bound"}
            seq = self._sequence(msg)
            with self._infer_lock:
                score = self.scorer.score(seq)
            return {"id": req_id, "score": float(score)}
        return {"id": req_id, "error": f"unknown request type {kind!r}"}

    def start(self) -> "BridgeServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def serve_forever(self) -> None:
        self._thread.start()
        self._thread.join()

    def __enter__(self) -> "BridgeServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
