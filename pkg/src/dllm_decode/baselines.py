"""Training-free remasking baselines: running-max-confidence (RCR) and
stochastic windowed remasking (ReMDM).

Both follow the progressive-unmasking loop but may pull previously
revealed tokens back to mask, so the accepted set is allowed to shrink.
Acceptance counts are recomputed per step as ceil(masked / steps_left),
which absorbs whatever remasking added back and guarantees a fully
unmasked output after exactly T backend calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backends import LogitsRequest
from .core import SequenceState, apply_update
from .sampling import SamplerConfig, row_confidences, sample_tokens
from .vanilla import select_top_positions


@dataclass
class RcrState:
    """Per-position running max of decode-time confidence, plus the remask plan."""

    running_max_conf: np.ndarray
    schedule: str
    remask_quota: tuple

    @classmethod
    def build(cls, gen_len: int, total_steps: int, max_remask: int | None = None) -> "RcrState":
        if total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {total_steps}")
        if max_remask is None:
            max_remask = math.ceil(math.ceil(gen_len / total_steps) / 2)
        if total_steps == 1:
            quota = (0,)
        else:
            quota = tuple(
                round(max_remask * (total_steps - 1 - t) / (total_steps - 1))
                for t in range(total_steps)
            )
        return cls(
            running_max_conf=np.full(gen_len, -np.inf),
            schedule="linear",
            remask_quota=quota,
        )


def rcr_decode(
    state: SequenceState,
    backend,
    total_steps: int,
    sampler: SamplerConfig,
    metric: str = "maxprob",
    *,
    max_remask: int | None = None,
    snapshots: list | None = None,
):
    """Decode while remasking persistently low-confidence revealed tokens.

    Every accepted token records the confidence it was decoded with; a
    position's stat only ever increases (max over its decode history). Each
    step remasks up to remask_quota[t] of the lowest-running-max revealed
    positions, selected before this step's acceptances so one record never
    both decodes and remasks a position. Pass a list as `snapshots` to
    collect a per-step copy of the running-max array.
    """
    rcr = RcrState.build(state.gen_len, total_steps, max_remask)
    rng = sampler.make_rng()
    vocab = state.vocab
    m = state.prompt_len
    traces = []
    for t in range(total_steps):
        masked = state.masked_positions()
        revealed_before = state.revealed_generation_positions()
        req = LogitsRequest(state.tokens, masked, step_hint=t)
        resp = backend.logits(req)

        accept = {}
        if masked.size:
            tokens, _ = sample_tokens(resp.logits, sampler, vocab, rng)
            scores = row_confidences(resp.logits, sampler, vocab, metric)
            take_n = math.ceil(masked.size / (total_steps - t))
            take = select_top_positions(masked, scores, take_n)
            accept = {int(masked[i]): int(tokens[i]) for i in take}
            for i in take:
                pos = int(masked[i])
                rcr.running_max_conf[pos - m] = max(rcr.running_max_conf[pos - m], scores[i])

        pulled_back = ()
        want = min(rcr.remask_quota[t], revealed_before.size)
        if want > 0:
            stats = rcr.running_max_conf[revealed_before - m]
            order = np.argsort(stats, kind="stable")  # lowest confidence first, position tie-break
            pulled_back = tuple(int(revealed_before[i]) for i in order[:want])

        # decoded-but-rejected positions are remasked, as in vanilla decoding
        rejected = set(int(p) for p in masked) - set(accept)
        state, trace = apply_update(
            state, accept, rejected | set(pulled_back), kind="baseline", sub_kind="rcr"
        )
        traces.append(trace)
        if snapshots is not None:
            snapshots.append(rcr.running_max_conf.copy())
    return state, traces


@dataclass(frozen=True)
class RemdmConfig:
    """Stochastic backward-remasking gate.

    Inside the open window t_off < step/T < t_on each revealed generation
    position is independently pulled back to mask with probability
    1 - alpha_on; outside the window (and always at the final step, so the
    run completes) the gate is off. alpha_on = 1 disables remasking
    entirely, reducing the sampler to vanilla decoding.
    """

    t_on: float = 0.55
    t_off: float = 0.05
    alpha_on: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.t_off < self.t_on <= 1.0:
            raise ValueError(f"need 0 <= t_off < t_on <= 1, got ({self.t_on}, {self.t_off})")
        if not 0.0 < self.alpha_on <= 1.0:
            raise ValueError(f"alpha_on must be in (0,1], got {self.alpha_on}")


def remdm_remask_probability(step: int, total_steps: int, cfg: RemdmConfig) -> float:
    """Per-position remask probability at a given step; 0 outside the window."""
    if step >= total_steps - 1:
        return 0.0
    tau = step / total_steps
    if cfg.t_off < tau < cfg.t_on:
        return 1.0 - cfg.alpha_on
    return 0.0


def remdm_gate(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    """Independent per-position remask draws for one step."""
    return rng.random(n) < p


def remdm_decode(
    state: SequenceState,
    backend,
    total_steps: int,
    cfg: RemdmConfig,
    sampler: SamplerConfig,
    metric: str = "maxprob",
):
    """Vanilla-style unmasking with the stochastic remasking gate applied
    to positions revealed before each step. Gate draws come from cfg.seed,
    token draws from the sampler seed, so disabling the gate reproduces
    vanilla decoding draw-for-draw."""
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    rng_tokens = sampler.make_rng()
    rng_gate = np.random.default_rng(cfg.seed)
    vocab = state.vocab
    traces = []
    for t in range(total_steps):
        masked = state.masked_positions()
        revealed_before = state.revealed_generation_positions()
        req = LogitsRequest(state.tokens, masked, step_hint=t)
        resp = backend.logits(req)

        accept = {}
        if masked.size:
            tokens, _ = sample_tokens(resp.logits, sampler, vocab, rng_tokens)
            scores = row_confidences(resp.logits, sampler, vocab, metric)
            take_n = math.ceil(masked.size / (total_steps - t))
            take = select_top_positions(masked, scores, take_n)
            accept = {int(masked[i]): int(tokens[i]) for i in take}

        pulled_back = ()
        p = remdm_remask_probability(t, total_steps, cfg)
        if p > 0.0 and revealed_before.size:
            hit = remdm_gate(rng_gate, revealed_before.size, p)
            pulled_back = tuple(int(pos) for pos in revealed_before[hit])

        rejected = set(int(p) for p in masked) - set(accept)
        state, trace = apply_update(
            state, accept, rejected | set(pulled_back), kind="baseline", sub_kind="remdm"
        )
        traces.append(trace)
    return state, traces
