"""Logit-space transforms, token sampling, and per-position confidence.

Everything here is a pure function of its inputs plus an explicitly
passed random generator, so decoders stay reproducible under a seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CONFIDENCE_KINDS = ("maxprob", "neg_entropy", "margin")

# Smallest probability we take a log of; keeps oracle log-scores finite.
PROB_FLOOR = float(np.finfo(np.float64).tiny)
LOG_PROB_FLOOR = float(np.log(PROB_FLOOR))


@dataclass(frozen=True)
class SamplerConfig:
    """How decoded tokens are drawn from a logits row.

    greedy takes the per-row argmax (ties broken by lowest token index);
    categorical samples from softmax(logits / temperature) using the
    seeded generator. Confidence is measured on the distribution actually
    sampled from (after temperature); set confidence_pre_temperature to
    score on the unscaled distribution instead.
    """

    temperature: float = 1.0
    mode: str = "greedy"
    seed: int = 0
    confidence_pre_temperature: bool = False

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.mode not in ("greedy", "categorical"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class EotPenalty:
    """Multiplicative down-weighting of the end-of-text token.

    The factor divides exp(z_eot) before normalization; values below 1
    (which would promote early termination) are rejected.
    """

    lambda_eot: float = 1.0

    def __post_init__(self):
        if not self.lambda_eot >= 1.0:
            raise ValueError(f"lambda_eot must be >= 1.0, got {self.lambda_eot}")


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def apply_eot_penalty(logits: np.ndarray, vocab, pen: EotPenalty) -> np.ndarray:
    """Shift the EoT logit down by ln(lambda_eot); all other entries unchanged.

    Identical to dividing exp(z_eot) by lambda_eot, without the overflow
    risk. Accepts a single row or a matrix of rows; the trailing axis must
    span the vocabulary.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] != vocab.size:
        raise ValueError(f"logits last axis {z.shape[-1]} != vocab size {vocab.size}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    out = z.copy()
    out[..., vocab.eot_id] -= math.log(pen.lambda_eot)
    return out


def _sampling_probs(rows: np.ndarray, cfg: SamplerConfig, vocab, *, scaled: bool = True) -> np.ndarray:
    """Probabilities the sampler actually draws from: mask excluded, optional temperature."""
    work = rows / cfg.temperature if scaled else rows.copy()
    work[:, vocab.mask_id] = -np.inf
    if np.any(np.all(np.isneginf(work), axis=1)):
        raise ValueError("row has no selectable token (all -inf after mask exclusion)")
    # Stable softmax with -inf entries mapping to exactly 0.
    work = work - np.max(work, axis=1, keepdims=True)
    probs = np.exp(work)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs


def sample_tokens(logits_rows: np.ndarray, cfg: SamplerConfig, vocab, rng: np.random.Generator | None = None):
    """Draw one token per row; returns (tokens, chosen-token probabilities).

    The mask token is never selectable: its logit is forced to -inf before
    normalization. Greedy mode is deterministic; categorical mode consumes
    one uniform draw per row from rng (created from cfg.seed when omitted).
    """
    rows = np.asarray(logits_rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"expected a matrix of logits rows, got shape {rows.shape}")
    if rows.shape[1] != vocab.size:
        raise ValueError(f"logits row width {rows.shape[1]} != vocab size {vocab.size}")
    if not np.all(np.isfinite(rows)):
        raise ValueError("logits must be finite")
    probs = _sampling_probs(rows, cfg, vocab)
    if cfg.mode == "greedy":
        tokens = np.argmax(probs, axis=1)
    else:
        if rng is None:
            rng = cfg.make_rng()
        u = rng.random(rows.shape[0])
        cdf = np.cumsum(probs, axis=1)
        tokens = np.empty(rows.shape[0], dtype=np.int64)
        for i in range(rows.shape[0]):
            j = int(np.searchsorted(cdf[i], u[i], side="right"))
            j = min(j, vocab.size - 1)
            while probs[i, j] == 0.0:  # float tail guard; never picks a zero-mass token
                j -= 1
            tokens[i] = j
    if cfg.confidence_pre_temperature:
        conf_probs = _sampling_probs(rows, cfg, vocab, scaled=False)
    else:
        conf_probs = probs
    confidences = conf_probs[np.arange(rows.shape[0]), tokens]
    return tokens.astype(np.int64), confidences


def _metric_from_probs(probs: np.ndarray, kind: str) -> np.ndarray:
    """Confidence per row of a probability matrix; higher is more confident."""
    if kind == "maxprob":
        return probs.max(axis=1)
    if kind == "neg_entropy":
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(probs > 0, probs * np.log(probs), 0.0)
        return terms.sum(axis=1)
    if kind == "margin":
        part = np.sort(probs, axis=1)
        return part[:, -1] - part[:, -2]
    raise ValueError(f"unknown confidence kind {kind!r}")


def confidence_metric(logits_row: np.ndarray, kind: str) -> float:
    """Score one raw logits row: maxprob, neg_entropy (= -H), or margin."""
    row = np.asarray(logits_row, dtype=np.float64)
    if row.ndim != 1:
        raise ValueError("confidence_metric expects a single row")
    if not np.all(np.isfinite(row)):
        raise ValueError("logits must be finite")
    probs = softmax(row)[None, :]
    return float(_metric_from_probs(probs, kind)[0])


def row_confidences(logits_rows: np.ndarray, cfg: SamplerConfig, vocab, kind: str) -> np.ndarray:
    """Acceptance scores for decoders, measured on the sampled-from distribution."""
    rows = np.asarray(logits_rows, dtype=np.float64)
    probs = _sampling_probs(rows, cfg, vocab, scaled=not cfg.confidence_pre_temperature)
    return _metric_from_probs(probs, kind)
