"""Token-sequence state machine shared by every decoder.

A decoding run owns one SequenceState: a fixed-length token buffer with
per-position mask flags, an immutable prompt prefix, and the set of
positions whose tokens currently count as accepted context. Every state
transition goes through :func:`apply_update`, which emits a StepTrace
record so a full run can be replayed, diffed, or rendered afterwards.

All positions are 0-based, in memory and in every serialized format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

import numpy as np

TRACE_KINDS = ("fillup", "refine", "vanilla", "baseline")


@dataclass(frozen=True)
class Vocabulary:
    """Token id space, including the special mask and end-of-text slots."""

    size: int
    mask_id: int
    eot_id: int
    pad_id: int | None = None

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError(f"vocabulary size must be positive, got {self.size}")
        for name in ("mask_id", "eot_id"):
            tid = getattr(self, name)
            if not 0 <= tid < self.size:
                raise ValueError(f"{name}={tid} out of range for size {self.size}")
        if self.mask_id == self.eot_id:
            raise ValueError("mask_id and eot_id must differ")
        if self.pad_id is not None and not 0 <= self.pad_id < self.size:
            raise ValueError(f"pad_id={self.pad_id} out of range for size {self.size}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SequenceState:
    """Immutable snapshot of a partially decoded sequence.

    tokens[i] == vocab.mask_id exactly where is_masked[i] is True. The
    first prompt_len positions are the prompt and never change. accepted
    is the index set of positions currently treated as fixed context; it
    can diverge from the unmasked set only through remasking baselines,
    which drop positions from it again.
    """

    tokens: np.ndarray
    is_masked: np.ndarray
    prompt_len: int
    accepted: frozenset
    step: int
    vocab: Vocabulary

    @property
    def length(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def gen_len(self) -> int:
        return self.length - self.prompt_len

    def masked_positions(self) -> np.ndarray:
        return np.flatnonzero(self.is_masked)

    def generation_positions(self) -> np.ndarray:
        return np.arange(self.prompt_len, self.length)

    def revealed_generation_positions(self) -> np.ndarray:
        """Generation positions currently holding a non-mask token."""
        gen = self.generation_positions()
        return gen[~self.is_masked[gen]]

    @property
    def is_complete(self) -> bool:
        return not bool(self.is_masked.any())

    def __eq__(self, other) -> bool:
        if not isinstance(other, SequenceState):
            return NotImplemented
        return (
            self.prompt_len == other.prompt_len
            and self.step == other.step
            and self.vocab == other.vocab
            and self.accepted == other.accepted
            and np.array_equal(self.tokens, other.tokens)
            and np.array_equal(self.is_masked, other.is_masked)
        )


@dataclass(frozen=True)
class StepTrace:
    """One state transition: which positions were decoded, remasked, accepted.

    decoded holds (position, token) pairs actually written into the buffer;
    remasked positions were reset to the mask token; accepted_now positions
    entered the accepted set during this transition. Within one record the
    decoded and remasked position lists are disjoint. Optional tags carry
    the producing decoder's context (stage/gamma for refinement, sub_kind
    for baselines).
    """

    step_index: int
    kind: str
    decoded: tuple
    remasked: tuple
    accepted_now: tuple
    stage: str | None = None
    gamma: float | None = None
    sub_kind: str | None = None

    def to_obj(self) -> dict:
        obj = {
            "step_index": self.step_index,
            "kind": self.kind,
            "decoded": [[int(p), int(t)] for p, t in self.decoded],
            "remasked": [int(p) for p in self.remasked],
            "accepted_now": [int(p) for p in self.accepted_now],
        }
        if self.stage is not None:
            obj["stage"] = self.stage
        if self.gamma is not None:
            obj["gamma"] = self.gamma
        if self.sub_kind is not None:
            obj["sub_kind"] = self.sub_kind
        return obj

    @classmethod
    def from_obj(cls, obj: Mapping) -> "StepTrace":
        return cls(
            step_index=int(obj["step_index"]),
            kind=str(obj["kind"]),
            decoded=tuple((int(p), int(t)) for p, t in obj["decoded"]),
            remasked=tuple(int(p) for p in obj["remasked"]),
            accepted_now=tuple(int(p) for p in obj["accepted_now"]),
            stage=obj.get("stage"),
            gamma=obj.get("gamma"),
            sub_kind=obj.get("sub_kind"),
        )


def init_state(prompt, gen_len: int, vocab: Vocabulary) -> SequenceState:
    """Build the initial state: prompt followed by gen_len mask tokens.

    The prompt must be non-empty, contain no mask tokens, and use ids
    inside the vocabulary; gen_len must be at least 1.
    """
    prompt = np.asarray(list(prompt), dtype=np.int64)
    if prompt.size == 0:
        raise ValueError("prompt must be non-empty")
    if gen_len < 1:
        raise ValueError(f"gen_len must be >= 1, got {gen_len}")
    if np.any(prompt == vocab.mask_id):
        raise ValueError("prompt must not contain the mask token")
    if np.any((prompt < 0) | (prompt >= vocab.size)):
        raise ValueError("prompt token id out of vocabulary range")
    m = int(prompt.size)
    length = m + int(gen_len)
    tokens = np.full(length, vocab.mask_id, dtype=np.int64)
    tokens[:m] = prompt
    is_masked = np.zeros(length, dtype=bool)
    is_masked[m:] = True
    return SequenceState(
        tokens=_frozen(tokens),
        is_masked=_frozen(is_masked),
        prompt_len=m,
        accepted=frozenset(range(m)),
        step=0,
        vocab=vocab,
    )


def apply_update(
    state: SequenceState,
    accept: Mapping[int, int],
    remask: Iterable[int],
    *,
    kind: str = "vanilla",
    stage: str | None = None,
    gamma: float | None = None,
    sub_kind: str | None = None,
):
    """Apply one accept/remask transition and emit its trace record.

    accept maps currently-masked positions to the tokens written there
    (added to the accepted set); remask positions are reset to the mask
    token and dropped from the accepted set. The two must be disjoint and
    neither may touch the prompt. Returns (new_state, StepTrace).
    """
    if kind not in TRACE_KINDS:
        raise ValueError(f"unknown trace kind {kind!r}")
    accept = {int(p): int(t) for p, t in accept.items()}
    remask = {int(p) for p in remask}
    overlap = set(accept) & remask
    if overlap:
        raise ValueError(f"positions in both accept and remask: {sorted(overlap)}")
    touched = set(accept) | remask
    for pos in touched:
        if not state.prompt_len <= pos < state.length:
            if 0 <= pos < state.prompt_len:
                raise ValueError(f"position {pos} is inside the prompt")
            raise ValueError(f"position {pos} out of range")
    for pos, tok in accept.items():
        if tok == state.vocab.mask_id:
            raise ValueError(f"cannot accept the mask token at position {pos}")
        if not 0 <= tok < state.vocab.size:
            raise ValueError(f"token {tok} out of vocabulary range")
        if not state.is_masked[pos]:
            raise ValueError(f"position {pos} is not masked; cannot accept into it")

    tokens = state.tokens.copy()
    is_masked = state.is_masked.copy()
    accepted = set(state.accepted)
    for pos, tok in accept.items():
        tokens[pos] = tok
        is_masked[pos] = False
        accepted.add(pos)
    for pos in remask:
        tokens[pos] = state.vocab.mask_id
        is_masked[pos] = True
        accepted.discard(pos)

    trace = StepTrace(
        step_index=state.step,
        kind=kind,
        decoded=tuple(sorted(accept.items())),
        remasked=tuple(sorted(remask)),
        accepted_now=tuple(sorted(accept)),
        stage=stage,
        gamma=gamma,
        sub_kind=sub_kind,
    )
    new_state = SequenceState(
        tokens=_frozen(tokens),
        is_masked=_frozen(is_masked),
        prompt_len=state.prompt_len,
        accepted=frozenset(accepted),
        step=state.step + 1,
        vocab=state.vocab,
    )
    return new_state, trace


def replay_trace(prompt, gen_len: int, vocab: Vocabulary, traces) -> SequenceState:
    """Rebuild the final state by replaying trace records from init_state.

    Records are applied in order: remasked positions are reset first, then
    decoded tokens are written, then accepted_now positions join the
    accepted set. The result is bit-exact against the producing run.
    """
    state = init_state(prompt, gen_len, vocab)
    tokens = state.tokens.copy()
    is_masked = state.is_masked.copy()
    accepted = set(state.accepted)
    steps = state.step
    for rec in traces:
        for pos in rec.remasked:
            tokens[pos] = vocab.mask_id
            is_masked[pos] = True
            accepted.discard(pos)
        for pos, tok in rec.decoded:
            tokens[pos] = tok
            is_masked[pos] = False
        accepted.update(rec.accepted_now)
        steps += 1
    return SequenceState(
        tokens=_frozen(tokens),
        is_masked=_frozen(is_masked),
        prompt_len=state.prompt_len,
        accepted=frozenset(accepted),
        step=steps,
        vocab=vocab,
    )


def trace_header(prompt, gen_len: int, vocab: Vocabulary) -> dict:
    return {
        "type": "header",
        "prompt": [int(t) for t in prompt],
        "gen_len": int(gen_len),
        "vocab": {
            "size": vocab.size,
            "mask_id": vocab.mask_id,
            "eot_id": vocab.eot_id,
            "pad_id": vocab.pad_id,
        },
    }


def write_trace(fp: IO[str] | str, traces, header: dict | None = None) -> None:
    """Write a trace log: optional header line, then one JSON record per step."""

    def _write(f):
        if header is not None:
            f.write(json.dumps(header) + "\n")
        for rec in traces:
            f.write(json.dumps(rec.to_obj()) + "\n")

    if isinstance(fp, str):
        with open(fp, "w", encoding="utf-8") as f:
            _write(f)
    else:
        _write(fp)


def read_trace(fp: IO[str] | str):
    """Read a trace log; returns (header or None, list of StepTrace)."""

    def _read(f):
        header = None
        traces = []
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("type") == "header":
                header = obj
            else:
                traces.append(StepTrace.from_obj(obj))
        return header, traces

    if isinstance(fp, str):
        with open(fp, "r", encoding="utf-8") as f:
            return _read(f)
    return _read(fp)


def vocab_from_header(header: Mapping) -> Vocabulary:
    v = header["vocab"]
    return Vocabulary(
        size=int(v["size"]),
        mask_id=int(v["mask_id"]),
        eot_id=int(v["eot_id"]),
        pad_id=None if v.get("pad_id") is None else int(v["pad_id"]),
    )
