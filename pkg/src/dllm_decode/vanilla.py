"""Baseline progressive-unmasking decoder.

Each step decodes every masked position, keeps a per-step quota of the
most confident predictions, and remasks the rest. Accepted tokens are
frozen: once a position enters the accepted set it never changes again.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backends import LogitsRequest
from .core import SequenceState, apply_update
from .sampling import EotPenalty, SamplerConfig, apply_eot_penalty, row_confidences, sample_tokens


@dataclass(frozen=True)
class AcceptanceSchedule:
    """Per-step acceptance quotas summing to the generation length.

    quota[t] = ceil(remaining / steps_left), which front-loads the
    remainder and completes in exactly total_steps; every entry is either
    floor(gen_len/T) or that plus one. When total_steps exceeds gen_len
    the surplus steps carry quota 0.
    """

    total_steps: int
    gen_len: int
    quota: tuple

    @classmethod
    def build(cls, gen_len: int, total_steps: int) -> "AcceptanceSchedule":
        if total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {total_steps}")
        if gen_len < 1:
            raise ValueError(f"gen_len must be >= 1, got {gen_len}")
        quota = []
        remaining = gen_len
        for t in range(total_steps):
            q = math.ceil(remaining / (total_steps - t))
            quota.append(q)
            remaining -= q
        assert remaining == 0
        return cls(total_steps=total_steps, gen_len=gen_len, quota=tuple(quota))


def select_top_positions(positions: np.ndarray, scores: np.ndarray, count: int) -> np.ndarray:
    """Indices (into positions) of the `count` highest scores; ties favor lower position."""
    order = np.argsort(-scores, kind="stable")  # stable keeps ascending-position order on ties
    return order[:count]


def progressive_unmask(
    state: SequenceState,
    backend,
    sched: AcceptanceSchedule,
    sampler: SamplerConfig,
    metric: str = "maxprob",
    *,
    eot_penalty: EotPenalty | None = None,
    kind: str = "vanilla",
    stage: str | None = None,
    rng: np.random.Generator | None = None,
    step_hint_base: int = 0,
):
    """Shared engine behind vanilla decoding and the fill-up stage.

    Runs exactly sched.total_steps backend calls. Steps with no masked
    positions left (possible when total_steps > gen_len) still issue an
    empty-query call so budget accounting stays uniform.
    """
    if sched.gen_len != state.gen_len:
        raise ValueError(f"schedule gen_len {sched.gen_len} != state gen_len {state.gen_len}")
    if not state.is_masked.any():
        raise ValueError("state has no masked positions")
    if rng is None:
        rng = sampler.make_rng()
    vocab = state.vocab
    traces = []
    for t in range(sched.total_steps):
        masked = state.masked_positions()
        req = LogitsRequest(state.tokens, masked, step_hint=step_hint_base + t)
        resp = backend.logits(req)
        if masked.size == 0:
            state, trace = apply_update(state, {}, (), kind=kind, stage=stage)
            traces.append(trace)
            continue
        rows = resp.logits
        if eot_penalty is not None:
            rows = apply_eot_penalty(rows, vocab, eot_penalty)
        tokens, _ = sample_tokens(rows, sampler, vocab, rng)
        scores = row_confidences(rows, sampler, vocab, metric)
        take = select_top_positions(masked, scores, sched.quota[t])
        accept = {int(masked[i]): int(tokens[i]) for i in take}
        rejected = set(int(p) for p in masked) - set(accept)
        state, trace = apply_update(state, accept, rejected, kind=kind, stage=stage)
        traces.append(trace)
    return state, traces


def vanilla_decode(state, backend, sched: AcceptanceSchedule, sampler: SamplerConfig, metric: str = "maxprob"):
    """Decode with frozen-token semantics; returns (final state, trace list).

    After sched.total_steps backend calls no masked positions remain and
    every position decoded at step t stayed at its step-t value.
    """
    return progressive_unmask(state, backend, sched, sampler, metric, kind="vanilla")
