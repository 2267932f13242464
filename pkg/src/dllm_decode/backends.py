"""Backend abstraction every decoder consumes.

A backend exposes `vocab` plus `logits(request) -> LogitsResponse` and is
called exactly once per decoder step; wrapping one in CountingBackend is
how the harness enforces forward-step budgets. Requests carry the full
token buffer with mask ids at masked positions and the sorted list of
positions whose logits are wanted. An empty query list is legal and acts
as a budget-parity no-op (a decoder step with nothing left to decode).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Vocabulary
from .oracle import MarkovOracleSpec, oracle_logits


@dataclass(frozen=True)
class LogitsRequest:
    """Conditioning input for one forward call.

    tokens: full sequence with mask_id at masked positions.
    query_positions: sorted, strictly increasing, all masked in tokens.
    step_hint: advisory step index; real model servers may map it to a
    diffusion timestep, the oracle ignores it.
    """

    tokens: tuple
    query_positions: tuple
    step_hint: int = 0

    def __init__(self, tokens, query_positions, step_hint: int = 0):
        object.__setattr__(self, "tokens", tuple(int(t) for t in tokens))
        object.__setattr__(self, "query_positions", tuple(int(p) for p in query_positions))
        object.__setattr__(self, "step_hint", int(step_hint))


@dataclass(frozen=True)
class LogitsResponse:
    """One row of unnormalized log-scores per queried position, all finite."""

    logits: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.logits, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError(f"logits must be a matrix, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("logits must be finite")
        rows.setflags(write=False)
        object.__setattr__(self, "logits", rows)


def validate_request(req: LogitsRequest, vocab: Vocabulary) -> None:
    tokens = np.asarray(req.tokens, dtype=np.int64)
    if tokens.size == 0:
        raise ValueError("request tokens must be non-empty")
    if np.any((tokens < 0) | (tokens >= vocab.size)):
        raise ValueError("request token id out of vocabulary range")
    prev = -1
    for pos in req.query_positions:
        if not 0 <= pos < tokens.size:
            raise ValueError(f"query position {pos} out of range")
        if pos <= prev:
            raise ValueError("query_positions must be sorted and strictly increasing")
        if tokens[pos] != vocab.mask_id:
            raise ValueError(f"query position {pos} is not masked")
        prev = pos


def check_response_shape(resp: LogitsResponse, req: LogitsRequest, vocab: Vocabulary) -> None:
    n, width = resp.logits.shape
    if n != len(req.query_positions):
        raise ValueError(f"response has {n} rows for {len(req.query_positions)} query positions")
    if width != vocab.size:
        raise ValueError(f"response row width {width} != vocab size {vocab.size}")


class MarkovOracleBackend:
    """In-process exact-posterior backend over a Markov chain."""

    def __init__(self, spec: MarkovOracleSpec, vocab: Vocabulary):
        if spec.vocab_size > vocab.size:
            raise ValueError("chain vocab_size exceeds the vocabulary size")
        self.spec = spec
        self.vocab = vocab

    def logits(self, req: LogitsRequest) -> LogitsResponse:
        validate_request(req, self.vocab)
        rows = oracle_logits(self.spec, req.tokens, req.query_positions, self.vocab)
        return LogitsResponse(logits=rows)


class CountingBackend:
    """Passthrough wrapper that counts forward calls (the budget unit)."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    @property
    def vocab(self) -> Vocabulary:
        return self.inner.vocab

    def logits(self, req: LogitsRequest) -> LogitsResponse:
        self.calls += 1
        return self.inner.logits(req)

    def reset(self) -> None:
        self.calls = 0
