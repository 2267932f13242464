"""The bridge server: protocol.md over TCP, one model forward per request.

Framing and message schemas follow the engine repo's protocol.md
(4-byte big-endian length + UTF-8 JSON, protocol version 1). Model
forwards are serialized behind a lock, so concurrent connections queue;
request-id matching keeps that transparent to clients. The extra
`health` message reports the checkpoint id, load status, and the
cumulative forward count.
"""

from __future__ import annotations

import json
import logging
import socketserver
import struct
import threading

import numpy as np

from .config import BridgeConfig
from .model import load_model

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
HEADER_SIZE = 4
MAX_MESSAGE_SIZE = 64 * 1024 * 1024


def send_message(sock, obj: dict) -> None:
    payload = json.dumps(obj).encode("utf-8")
    sock.sendall(struct.pack(">I", len(payload)) + payload)


def _recv_exactly(sock, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        part = sock.recv(n - got)
        if not part:
            raise EOFError("connection closed while reading")
        chunks.append(part)
        got += len(part)
    return b"".join(chunks)


def recv_message(sock) -> dict:
    (length,) = struct.unpack(">I", _recv_exactly(sock, HEADER_SIZE))
    if length > MAX_MESSAGE_SIZE:
        raise ValueError(f"declared size {length} exceeds limit")
    obj = json.loads(_recv_exactly(sock, length).decode("utf-8"))
    if not isinstance(obj, dict):
        raise ValueError("message must be a JSON object")
    return obj


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        bridge = self.server.bridge  # type: ignore[attr-defined]
        try:
            hello = recv_message(self.request)
        except (EOFError, ValueError, OSError):
            return
        if hello.get("type") != "hello" or hello.get("protocol_version") != PROTOCOL_VERSION:
            send_message(
                self.request,
                {
                    "type": "error",
                    "kind": "version_mismatch",
                    "message": f"server speaks protocol version {PROTOCOL_VERSION}",
                },
            )
            return
        meta = bridge.vocab_meta
        send_message(
            self.request,
            {
                "type": "handshake",
                "protocol_version": PROTOCOL_VERSION,
                "vocab_size": meta.vocab_size,
                "mask_id": meta.mask_id,
                "eot_id": meta.eot_id,
                "pad_id": meta.pad_id,
            },
        )
        while True:
            try:
                msg = recv_message(self.request)
            except (EOFError, OSError):
                return
            except ValueError as e:
                try:
                    send_message(self.request, {"type": "error", "kind": "malformed", "message": str(e)})
                except OSError:
                    pass
                return
            reply = bridge.handle_message(msg)
            try:
                send_message(self.request, reply)
            except OSError:
                return


class BridgeServer:
    """Serve one loaded checkpoint until shut down."""

    def __init__(self, cfg: BridgeConfig):
        self.cfg = cfg
        self.model, self.vocab_meta = load_model(cfg)
        self._forward_lock = threading.Lock()

        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = _Server((cfg.host, cfg.port), _Handler)
        self._server.bridge = self  # type: ignore[attr-defined]
        self._thread = None

    @property
    def port(self) -> int:
        return int(self._server.server_address[1])

    def handle_message(self, msg: dict) -> dict:
        kind = msg.get("type")
        rid = msg.get("id")
        if kind == "health":
            return {
                "type": "health",
                "checkpoint": self.cfg.checkpoint,
                "status": "ready",
                "forwards": getattr(self.model, "forwards", None),
            }
        if kind != "logits_request":
            return {"type": "error", "id": rid, "kind": "malformed", "message": "expected logits_request"}
        try:
            tokens = [int(t) for t in msg["tokens"]]
            query = [int(p) for p in msg["query_positions"]]
        except (KeyError, TypeError, ValueError) as e:
            return {"type": "error", "id": rid, "kind": "malformed", "message": f"bad request: {e}"}
        err = self._validate(tokens, query)
        if err:
            return {"type": "error", "id": rid, "kind": "bad_request", "message": err}
        try:
            with self._forward_lock:  # one device, serialized forwards
                rows = self.model.forward(tokens, query)
        except MemoryError as e:
            return {"type": "error", "id": rid, "kind": "oom", "message": str(e)}
        except RuntimeError as e:
            if "out of memory" in str(e).lower():
                return {"type": "error", "id": rid, "kind": "oom", "message": str(e)}
            raise
        rows = np.asarray(rows, dtype=np.float64)
        if not np.all(np.isfinite(rows)):
            rows = np.nan_to_num(rows, nan=0.0, posinf=1e30, neginf=-1e30)
        return {"type": "logits_response", "id": rid, "logits": rows.tolist()}

    def _validate(self, tokens, query) -> str | None:
        meta = self.vocab_meta
        if not tokens:
            return "tokens must be non-empty"
        if len(tokens) > self.cfg.max_len:
            return f"sequence length {len(tokens)} exceeds max_len {self.cfg.max_len}"
        for t in tokens:
            if not 0 <= t < meta.vocab_size:
                return f"token id {t} out of range for vocab_size {meta.vocab_size}"
        prev = -1
        for p in query:
            if not 0 <= p < len(tokens):
                return f"query position {p} out of range"
            if p <= prev:
                return "query_positions must be sorted and strictly increasing"
            if tokens[p] != meta.mask_id:
                return f"query position {p} is not masked"
            prev = p
        return None

    def start(self) -> "BridgeServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        log.info("bridge serving %s on port %d", self.cfg.checkpoint, self.port)
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def shutdown(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.shutdown()
