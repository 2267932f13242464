"""Wire protocol for serving logits over a TCP byte stream.

Framing: every message is a 4-byte big-endian unsigned length followed by
that many bytes of UTF-8 JSON. A session is one hello/handshake exchange
followed by any number of request/response pairs; see protocol.md for the
byte-level schema. Positions are 0-based and logits travel as JSON
numbers, which round-trip float64 exactly, so a remote decode is
bit-identical to an in-process one.

The server is backend-agnostic: anything exposing `vocab` and
`logits(request)` can be served, which is how both the chain oracle and
the real-model bridge sit behind the same client.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import struct
import threading
import time

import numpy as np

from .backends import LogitsRequest, LogitsResponse, check_response_shape, validate_request
from .core import Vocabulary

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
HEADER_SIZE = 4
MAX_MESSAGE_SIZE = 64 * 1024 * 1024


class ProtocolError(Exception):
    """Base class for wire-protocol failures."""


class VersionMismatchError(ProtocolError):
    pass


class ShapeMismatchError(ProtocolError):
    pass


class ProtocolTimeoutError(ProtocolError):
    pass


class MalformedMessageError(ProtocolError):
    pass


class RemoteError(ProtocolError):
    """Error reported by the server (kind carried verbatim)."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


def send_message(sock: socket.socket, obj: dict) -> None:
    payload = json.dumps(obj).encode("utf-8")
    if len(payload) > MAX_MESSAGE_SIZE:
        raise MalformedMessageError(f"message of {len(payload)} bytes exceeds limit")
    sock.sendall(struct.pack(">I", len(payload)) + payload)


def _recv_exactly(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        part = sock.recv(n - got)
        if not part:
            raise EOFError("connection closed while reading")
        chunks.append(part)
        got += len(part)
    return b"".join(chunks)


def recv_message(sock: socket.socket) -> dict:
    try:
        header = _recv_exactly(sock, HEADER_SIZE)
    except socket.timeout as e:
        raise ProtocolTimeoutError("timed out waiting for a message") from e
    (length,) = struct.unpack(">I", header)
    if length > MAX_MESSAGE_SIZE:
        raise MalformedMessageError(f"declared size {length} exceeds limit")
    try:
        payload = _recv_exactly(sock, length)
    except socket.timeout as e:
        raise ProtocolTimeoutError("timed out mid-message") from e
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedMessageError(f"payload is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise MalformedMessageError("message must be a JSON object")
    return obj


class RemoteBackend:
    """Client side: a logits backend living behind a TCP endpoint.

    Connects and handshakes eagerly; vocabulary metadata comes from the
    server. Failures surface as distinct exception kinds (timeout, version
    mismatch, shape mismatch, server-reported errors) and nothing is
    retried silently. Round-trip latencies are collected for throughput
    accounting.
    """

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._next_id = 0
        self.latencies_ms: list[float] = []
        try:
            send_message(self._sock, {"type": "hello", "protocol_version": PROTOCOL_VERSION})
            reply = recv_message(self._sock)
        except ProtocolError:
            self._sock.close()
            raise
        except (EOFError, OSError) as e:
            self._sock.close()
            raise ProtocolError(f"handshake failed: {e}") from e
        if reply.get("type") == "error":
            kind = reply.get("kind", "error")
            self._sock.close()
            if kind == "version_mismatch":
                raise VersionMismatchError(reply.get("message", "protocol version mismatch"))
            raise RemoteError(kind, reply.get("message", ""))
        if reply.get("type") != "handshake":
            self._sock.close()
            raise MalformedMessageError(f"expected handshake, got {reply.get('type')!r}")
        if reply.get("protocol_version") != PROTOCOL_VERSION:
            self._sock.close()
            raise VersionMismatchError(
                f"server speaks version {reply.get('protocol_version')}, client {PROTOCOL_VERSION}"
            )
        self.vocab = Vocabulary(
            size=int(reply["vocab_size"]),
            mask_id=int(reply["mask_id"]),
            eot_id=int(reply["eot_id"]),
            pad_id=None if reply.get("pad_id") is None else int(reply["pad_id"]),
        )

    def logits(self, req: LogitsRequest) -> LogitsResponse:
        rid = self._next_id
        self._next_id += 1
        msg = {
            "type": "logits_request",
            "id": rid,
            "tokens": list(req.tokens),
            "query_positions": list(req.query_positions),
            "step_hint": req.step_hint,
        }
        start = time.perf_counter()
        send_message(self._sock, msg)
        reply = recv_message(self._sock)
        elapsed_ms = (time.perf_counter() - start) * 1e3
        self.latencies_ms.append(elapsed_ms)
        log.debug("remote logits id=%d rows=%d %.3fms", rid, len(req.query_positions), elapsed_ms)
        if reply.get("type") == "error":
            raise RemoteError(reply.get("kind", "error"), reply.get("message", ""))
        if reply.get("type") != "logits_response":
            raise MalformedMessageError(f"expected logits_response, got {reply.get('type')!r}")
        if reply.get("id") != rid:
            raise MalformedMessageError(f"response id {reply.get('id')} does not match request {rid}")
        rows = np.asarray(reply["logits"], dtype=np.float64)
        if rows.size == 0:
            rows = rows.reshape(0, self.vocab.size)
        resp = LogitsResponse(logits=rows)
        try:
            check_response_shape(resp, req, self.vocab)
        except ValueError as e:
            raise ShapeMismatchError(str(e)) from e
        return resp

    def close(self) -> None:
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        backend = self.server.backend  # type: ignore[attr-defined]
        try:
            hello = recv_message(self.request)
        except (EOFError, MalformedMessageError, OSError):
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
        vocab = backend.vocab
        send_message(
            self.request,
            {
                "type": "handshake",
                "protocol_version": PROTOCOL_VERSION,
                "vocab_size": vocab.size,
                "mask_id": vocab.mask_id,
                "eot_id": vocab.eot_id,
                "pad_id": vocab.pad_id,
            },
        )
        while True:
            try:
                msg = recv_message(self.request)
            except (EOFError, OSError):
                return
            except MalformedMessageError as e:
                try:
                    send_message(self.request, {"type": "error", "kind": "malformed", "message": str(e)})
                except OSError:
                    pass
                return
            rid = msg.get("id")
            if msg.get("type") != "logits_request":
                send_message(
                    self.request,
                    {"type": "error", "id": rid, "kind": "malformed", "message": "expected logits_request"},
                )
                continue
            try:
                req = LogitsRequest(
                    tokens=msg["tokens"],
                    query_positions=msg["query_positions"],
                    step_hint=msg.get("step_hint", 0),
                )
                validate_request(req, vocab)
                resp = backend.logits(req)
            except (KeyError, TypeError) as e:
                send_message(
                    self.request,
                    {"type": "error", "id": rid, "kind": "malformed", "message": f"bad request: {e}"},
                )
                continue
            except ValueError as e:
                send_message(
                    self.request,
                    {"type": "error", "id": rid, "kind": "bad_request", "message": str(e)},
                )
                continue
            send_message(
                self.request,
                {"type": "logits_response", "id": rid, "logits": resp.logits.tolist()},
            )


class LogitsServer:
    """Threaded TCP server exposing a backend over the wire protocol."""

    def __init__(self, backend, host: str = "127.0.0.1", port: int = 0):
        self.backend = backend

        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = _Server((host, port), _Handler)
        self._server.backend = backend  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def address(self):
        return self._server.server_address

    @property
    def port(self) -> int:
        return int(self._server.server_address[1])

    def start(self) -> "LogitsServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
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
