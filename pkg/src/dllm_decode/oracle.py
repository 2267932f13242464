"""Exact-inference Markov-chain model used as a desk-scale logits backend.

A first-order chain over token ids stands in for a trained mask
predictor: the marginal posterior of every masked position given all
unmasked tokens is computable in closed form by a forward-backward sweep,
so decoder behavior can be verified against brute-force enumeration.

The chain lives on the full vocabulary grid. Helper constructors give the
mask token zero incoming probability so it never appears in a posterior;
the end-of-text token is an ordinary chain symbol, which lets EoT-penalty
experiments run against this backend.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import Vocabulary
from .sampling import LOG_PROB_FLOOR, PROB_FLOOR

_ATOL = 1e-12


@dataclass(frozen=True)
class MarkovOracleSpec:
    """First-order chain: initial distribution plus row-stochastic transitions."""

    vocab_size: int
    transition: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=np.float64)
        p = np.asarray(self.initial, dtype=np.float64)
        if t.shape != (self.vocab_size, self.vocab_size):
            raise ValueError(f"transition must be {self.vocab_size}x{self.vocab_size}, got {t.shape}")
        if p.shape != (self.vocab_size,):
            raise ValueError(f"initial must have length {self.vocab_size}, got {p.shape}")
        if np.any(t < 0) or np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        if np.any(np.abs(t.sum(axis=1) - 1.0) > _ATOL):
            raise ValueError("transition rows must sum to 1")
        if abs(p.sum() - 1.0) > _ATOL:
            raise ValueError("initial distribution must sum to 1")
        t.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "initial", p)

    def to_obj(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "transition": self.transition.tolist(),
            "initial": self.initial.tolist(),
        }

    @classmethod
    def from_obj(cls, obj) -> "MarkovOracleSpec":
        return cls(
            vocab_size=int(obj["vocab_size"]),
            transition=np.asarray(obj["transition"], dtype=np.float64),
            initial=np.asarray(obj["initial"], dtype=np.float64),
        )


def posterior_marginals(spec: MarkovOracleSpec, tokens, observed, query_positions) -> np.ndarray:
    """Exact P(x_i = v | all observed tokens) for each queried position.

    tokens: length-L id array; observed: boolean array marking conditioned
    positions (unobserved entries of tokens are ignored). Returns a
    (len(query_positions), vocab_size) matrix of probabilities.

    Scaled forward-backward over the chain: forward messages fold in each
    observation as a delta clamp, backward messages carry future evidence;
    per-position normalization keeps everything in float64 range.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    observed = np.asarray(observed, dtype=bool)
    length = tokens.shape[0]
    if observed.shape[0] != length:
        raise ValueError("tokens and observed must have equal length")
    A = spec.transition
    V = spec.vocab_size

    def clamp(msg, i):
        if observed[i]:
            out = np.zeros(V)
            out[tokens[i]] = msg[tokens[i]]
            return out
        return msg

    alpha = np.empty((length, V))
    msg = clamp(spec.initial.copy(), 0)
    total = msg.sum()
    if total <= 0.0:
        raise ValueError("observed sequence has probability zero under the chain")
    alpha[0] = msg / total
    for i in range(1, length):
        msg = clamp(alpha[i - 1] @ A, i)
        total = msg.sum()
        if total <= 0.0:
            raise ValueError("observed sequence has probability zero under the chain")
        alpha[i] = msg / total

    beta = np.empty((length, V))
    beta[length - 1] = 1.0
    for i in range(length - 2, -1, -1):
        msg = A @ clamp(beta[i + 1], i + 1)
        total = msg.sum()
        if total <= 0.0:
            raise ValueError("observed sequence has probability zero under the chain")
        beta[i] = msg / total

    out = np.empty((len(query_positions), V))
    for r, pos in enumerate(query_positions):
        w = alpha[pos] * beta[pos]
        total = w.sum()
        if total <= 0.0:
            raise ValueError("observed sequence has probability zero under the chain")
        out[r] = w / total
    return out


def oracle_logits(spec: MarkovOracleSpec, tokens, query_positions, vocab: Vocabulary) -> np.ndarray:
    """Log posterior rows for the queried (masked) positions.

    Rows span the full vocab.size grid; ids outside the chain's support
    (including the mask slot when the chain excludes it) get the log floor,
    so softmax of a row reproduces the exact posterior.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if spec.vocab_size > vocab.size:
        raise ValueError("chain vocab_size exceeds the vocabulary size")
    masked = tokens == vocab.mask_id
    chain_ok = (tokens >= 0) & (tokens < spec.vocab_size)
    if not np.all(masked | chain_ok):
        raise ValueError("tokens must be chain symbols or the mask token")
    query_positions = [int(p) for p in query_positions]
    if len(query_positions) == 0:
        return np.zeros((0, vocab.size))
    marg = posterior_marginals(spec, tokens, observed=~masked, query_positions=query_positions)
    rows = np.full((len(query_positions), vocab.size), LOG_PROB_FLOOR)
    rows[:, : spec.vocab_size] = np.log(np.maximum(marg, PROB_FLOOR))
    return rows


def chain_loglik(spec: MarkovOracleSpec, tokens) -> float:
    """Joint log-likelihood of a full sequence under the chain (may be -inf)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    with np.errstate(divide="ignore"):
        total = float(np.log(spec.initial[tokens[0]]))
        total += float(np.sum(np.log(spec.transition[tokens[:-1], tokens[1:]])))
    return total


def sample_chain(spec: MarkovOracleSpec, length: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one length-L sequence from the chain."""
    out = np.empty(length, dtype=np.int64)
    out[0] = rng.choice(spec.vocab_size, p=spec.initial)
    for i in range(1, length):
        out[i] = rng.choice(spec.vocab_size, p=spec.transition[out[i - 1]])
    return out


def _chain_symbols(vocab: Vocabulary) -> np.ndarray:
    """All token ids the chain may emit: everything except the mask slot."""
    return np.array([v for v in range(vocab.size) if v != vocab.mask_id])


def _embed(vocab: Vocabulary, sub_transition: np.ndarray, sub_initial: np.ndarray) -> MarkovOracleSpec:
    """Lift a chain over the non-mask symbols onto the full vocab grid.

    The mask column stays zero (mask is never emitted); the mask row is
    filled uniformly over chain symbols purely to keep it row-stochastic.
    """
    syms = _chain_symbols(vocab)
    V = vocab.size
    transition = np.zeros((V, V))
    transition[np.ix_(syms, syms)] = sub_transition
    transition[vocab.mask_id, syms] = 1.0 / len(syms)
    initial = np.zeros(V)
    initial[syms] = sub_initial
    return MarkovOracleSpec(vocab_size=V, transition=transition, initial=initial)


def uniform_chain(vocab: Vocabulary) -> MarkovOracleSpec:
    k = vocab.size - 1
    sub = np.full((k, k), 1.0 / k)
    return _embed(vocab, sub, np.full(k, 1.0 / k))


def sticky_chain(vocab: Vocabulary, stay: float = 0.85) -> MarkovOracleSpec:
    """Diagonal-heavy chain: strong neighbor correlation, every transition positive."""
    if not 0.0 < stay < 1.0:
        raise ValueError(f"stay must be in (0,1), got {stay}")
    k = vocab.size - 1
    if k < 2:
        raise ValueError("need at least two chain symbols")
    sub = np.full((k, k), (1.0 - stay) / (k - 1))
    np.fill_diagonal(sub, stay)
    return _embed(vocab, sub, np.full(k, 1.0 / k))


def random_chain(vocab: Vocabulary, rng: np.random.Generator, concentration: float = 1.0) -> MarkovOracleSpec:
    """Dirichlet-sampled transitions and initial over the non-mask symbols."""
    k = vocab.size - 1
    sub = rng.dirichlet(np.full(k, concentration), size=k)
    init = rng.dirichlet(np.full(k, concentration))
    return _embed(vocab, sub, init)


def two_symbol_chain(vocab: Vocabulary, transition_2x2, initial_2=(0.5, 0.5)) -> MarkovOracleSpec:
    """Chain concentrated on token ids 0 and 1; every other id has zero mass.

    Useful for hand-checkable cases; the remaining non-mask rows are padded
    uniformly so the matrix stays row-stochastic.
    """
    syms = _chain_symbols(vocab)
    k = len(syms)
    sub = np.zeros((k, k))
    pos = {int(s): i for i, s in enumerate(syms)}
    if 0 not in pos or 1 not in pos:
        raise ValueError("vocabulary must keep ids 0 and 1 as chain symbols")
    t = np.asarray(transition_2x2, dtype=np.float64)
    for a in (0, 1):
        for b in (0, 1):
            sub[pos[a], pos[b]] = t[a, b]
    for s, i in pos.items():
        if s not in (0, 1):
            sub[i, :] = 0.0
            sub[i, pos[0]] = 0.5
            sub[i, pos[1]] = 0.5
    init = np.zeros(k)
    init[pos[0]], init[pos[1]] = initial_2
    return _embed(vocab, sub, init)


def load_oracle_file(path: str):
    """Load a chain + vocabulary bundle from JSON.

    Schema: {"vocab_size", "mask_id", "eot_id", "pad_id"?, "transition",
    "initial", "symbols"?}. symbols, when present, maps token ids to
    display strings for detokenized output.
    """
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    vocab = Vocabulary(
        size=int(obj["vocab_size"]),
        mask_id=int(obj["mask_id"]),
        eot_id=int(obj["eot_id"]),
        pad_id=None if obj.get("pad_id") is None else int(obj["pad_id"]),
    )
    spec = MarkovOracleSpec.from_obj(obj)
    symbols = obj.get("symbols")
    return spec, vocab, symbols


def save_oracle_file(path: str, spec: MarkovOracleSpec, vocab: Vocabulary, symbols=None) -> None:
    obj = spec.to_obj()
    obj.update(
        {
            "mask_id": vocab.mask_id,
            "eot_id": vocab.eot_id,
            "pad_id": vocab.pad_id,
        }
    )
    if symbols is not None:
        obj["symbols"] = list(symbols)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")
