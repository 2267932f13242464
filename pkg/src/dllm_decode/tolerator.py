"""Two-stage decoding: sequence fill-up, then cross-validation refinement.

Stage I produces a complete draft with the progressive-unmasking engine,
down-weighting the end-of-text token so drafts stay long enough to be
worth refining. Stage II repeatedly remasks a random subset of generated
positions and re-decodes it conditioned on the rest, with the subset
fraction cosine-annealed from gamma_max down to gamma_min. Unlike the
frozen-token baseline, any generated token can be revised until the
budget runs out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backends import LogitsRequest
from .core import SequenceState, apply_update
from .sampling import EotPenalty, SamplerConfig, apply_eot_penalty, sample_tokens
from .vanilla import AcceptanceSchedule, progressive_unmask


def anneal_gamma(k: int, total: int, gamma_max: float, gamma_min: float) -> float:
    """Cosine-annealed remask rate: gamma_max at k=0 down to gamma_min at k=total."""
    if total < 1:
        raise ValueError(f"total refinement steps must be >= 1, got {total}")
    if not 0 <= k <= total:
        raise ValueError(f"k={k} outside [0, {total}]")
    return gamma_min + 0.5 * (gamma_max - gamma_min) * (1.0 + math.cos(math.pi * k / total))


@dataclass(frozen=True)
class RefineSchedule:
    """The per-iteration remask rates gamma[0..K-1]; non-increasing by construction."""

    gamma: tuple

    @classmethod
    def build(cls, steps: int, gamma_max: float, gamma_min: float) -> "RefineSchedule":
        return cls(gamma=tuple(anneal_gamma(k, steps, gamma_max, gamma_min) for k in range(steps)))


@dataclass(frozen=True)
class ToleratorConfig:
    """Budget split and refinement hyperparameters for the two-stage decoder.

    rho controls the fill-up/refinement split: fill-up gets
    round(rho * total_steps) forward calls (half-up, at least 1) and
    refinement the rest. fillup_steps_override pins the split explicitly,
    which is how the refinement-steps ablation holds stage I fixed.
    """

    total_steps: int
    rho: float = 0.5
    gamma_max: float = 0.8
    gamma_min: float = 0.4
    lambda_eot: float = 1.0
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    metric: str = "maxprob"
    eot_penalty_in_refine: bool = False
    fillup_steps_override: int | None = None

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.fillup_steps_override is None and not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (0,1), got {self.rho}")
        if not 0.0 < self.gamma_min <= self.gamma_max <= 1.0:
            raise ValueError(f"need 0 < gamma_min <= gamma_max <= 1, got ({self.gamma_max}, {self.gamma_min})")
        if self.lambda_eot < 1.0:
            raise ValueError(f"lambda_eot must be >= 1.0, got {self.lambda_eot}")
        if self.fillup_steps < 1:
            raise ValueError("fill-up needs at least one step")
        if self.refine_steps < 0:
            raise ValueError(f"fill-up steps {self.fillup_steps} exceed total budget {self.total_steps}")

    @property
    def fillup_steps(self) -> int:
        if self.fillup_steps_override is not None:
            return self.fillup_steps_override
        return max(1, math.floor(self.rho * self.total_steps + 0.5))

    @property
    def refine_steps(self) -> int:
        return self.total_steps - self.fillup_steps

    def refine_schedule(self) -> RefineSchedule:
        if self.refine_steps == 0:
            return RefineSchedule(gamma=())
        return RefineSchedule.build(self.refine_steps, self.gamma_max, self.gamma_min)


def fillup(state: SequenceState, backend, cfg: ToleratorConfig, *, rng: np.random.Generator | None = None):
    """Stage I: produce a complete draft under the EoT penalty.

    Identical to vanilla decoding with total_steps = cfg.fillup_steps,
    except every logits row passes through the EoT penalty before sampling
    and confidence scoring. Returns (fully unmasked state, trace list).
    """
    gen = state.generation_positions()
    if not np.all(state.is_masked[gen]):
        raise ValueError("fill-up expects all generation positions masked")
    sched = AcceptanceSchedule.build(state.gen_len, cfg.fillup_steps)
    return progressive_unmask(
        state,
        backend,
        sched,
        cfg.sampler,
        cfg.metric,
        eot_penalty=EotPenalty(cfg.lambda_eot),
        kind="fillup",
        stage="fillup",
        rng=rng,
    )


def refine_step(
    state: SequenceState,
    backend,
    gamma_k: float,
    cfg: ToleratorConfig,
    rng_subset: np.random.Generator,
    rng_tokens: np.random.Generator | None = None,
    *,
    step_hint: int = 0,
):
    """One cross-validation iteration: remask a random subset, re-decode it.

    Samples S uniformly without replacement from the generation positions
    with |S| = max(1, floor(gamma_k * gen_len)), remasks it, issues one
    backend call over S, and refills S from the sampled predictions. Emits
    two trace records (the remask, then the decode), both tagged with
    gamma_k. Positions outside S are untouched.
    """
    if not 0.0 < gamma_k <= 1.0:
        raise ValueError(f"gamma_k must be in (0,1], got {gamma_k}")
    if state.is_masked.any():
        raise ValueError("refinement expects a fully unmasked draft")
    if rng_tokens is None:
        rng_tokens = cfg.sampler.make_rng()
    vocab = state.vocab
    gen = state.generation_positions()
    size = max(1, math.floor(gamma_k * state.gen_len))
    subset = np.sort(rng_subset.choice(gen, size=size, replace=False))

    state, trace_mask = apply_update(
        state, {}, subset, kind="refine", stage="refine", gamma=gamma_k
    )
    req = LogitsRequest(state.tokens, subset, step_hint=step_hint)
    resp = backend.logits(req)
    rows = resp.logits
    if cfg.eot_penalty_in_refine:
        rows = apply_eot_penalty(rows, vocab, EotPenalty(cfg.lambda_eot))
    tokens, _ = sample_tokens(rows, cfg.sampler, vocab, rng_tokens)
    accept = {int(p): int(t) for p, t in zip(subset, tokens)}
    state, trace_fill = apply_update(
        state, accept, (), kind="refine", stage="refine", gamma=gamma_k
    )
    return state, [trace_mask, trace_fill]


def tolerator_decode(state: SequenceState, backend, cfg: ToleratorConfig):
    """Run fill-up then annealed refinement; exactly cfg.total_steps backend calls.

    Returns (final state, trace list). Fill-up contributes one record per
    step, each refinement iteration two (remask + decode).
    """
    rng_tokens = cfg.sampler.make_rng()
    rng_subset = np.random.default_rng(cfg.seed)
    state, traces = fillup(state, backend, cfg, rng=rng_tokens)
    schedule = cfg.refine_schedule()
    for k, gamma_k in enumerate(schedule.gamma):
        state, recs = refine_step(
            state,
            backend,
            gamma_k,
            cfg,
            rng_subset,
            rng_tokens,
            step_hint=cfg.fillup_steps + k,
        )
        traces.extend(recs)
    return state, traces
