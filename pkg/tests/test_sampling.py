import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dllm_decode as dd

VOCAB4 = dd.Vocabulary(size=4, mask_id=3, eot_id=2)
from dllm_decode.sampling import row_confidences

finite_rows = st.lists(
    st.floats(-30, 30, allow_nan=False, allow_infinity=False), min_size=4, max_size=4
)


def test_eot_penalty_identity(vocab4):
    logits = np.array([0.3, -1.2, 2.0, 0.0])
    out = dd.apply_eot_penalty(logits, vocab4, dd.EotPenalty(1.0))
    assert np.array_equal(out, logits)


def test_eot_penalty_closed_form(vocab4):
    # two live tokens with equal logits, lambda = e: p(EoT) = 1/(1+e)
    logits = np.array([1.7, -50.0, 1.7, -50.0])
    out = dd.apply_eot_penalty(logits, vocab4, dd.EotPenalty(math.e))
    probs = dd.softmax(out)
    assert probs[vocab4.eot_id] == pytest.approx(1.0 / (1.0 + math.e), abs=1e-9)


def test_eot_penalty_rejects_lambda_below_one():
    with pytest.raises(ValueError):
        dd.EotPenalty(0.9)


@settings(max_examples=200, deadline=None)
@given(row=finite_rows, lam=st.sampled_from([1.0, 1.1, 1.2, 1.3]))
def test_eot_penalty_laws(row, lam):
    """Normalization, non-increase of p(EoT), and rank preservation off EoT."""
    vocab4 = VOCAB4
    row = np.asarray(row)
    out = dd.apply_eot_penalty(row, vocab4, dd.EotPenalty(lam))
    p_before, p_after = dd.softmax(row), dd.softmax(out)
    assert abs(p_after.sum() - 1.0) < 1e-12
    assert p_after[vocab4.eot_id] <= p_before[vocab4.eot_id] + 1e-15
    others = [i for i in range(4) if i != vocab4.eot_id]
    # non-EoT logits are copied bit-for-bit
    assert np.array_equal(row[others], out[others])
    gaps = np.abs(np.subtract.outer(row[others], row[others]))
    if gaps[np.triu_indices(3, 1)].min() > 1e-9:  # ranks well-defined up to rounding
        assert np.array_equal(np.argsort(p_before[others]), np.argsort(p_after[others]))


def test_greedy_peak_confidence(vocab4):
    rows = np.array([[0.0, 10.0, 0.0, 0.0]])
    toks, conf = dd.sample_tokens(rows, dd.SamplerConfig(mode="greedy"), vocab4)
    assert toks[0] == 1
    assert conf[0] == pytest.approx(math.exp(10) / (math.exp(10) + 2.0), abs=1e-9)


def test_greedy_tie_breaks_to_lowest_index(vocab4):
    rows = np.array([[1.0, 1.0, 1.0, 1.0]])
    toks, _ = dd.sample_tokens(rows, dd.SamplerConfig(mode="greedy"), vocab4)
    assert toks[0] == 0


def test_greedy_shift_invariance(vocab4):
    rows = np.array([[0.3, 2.0, -1.0, 0.0], [5.0, 4.0, 4.5, 1.0]])
    t1, _ = dd.sample_tokens(rows, dd.SamplerConfig(mode="greedy"), vocab4)
    t2, _ = dd.sample_tokens(rows + 123.0, dd.SamplerConfig(mode="greedy"), vocab4)
    assert np.array_equal(t1, t2)


def test_mask_is_never_sampled(vocab4):
    rows = np.array([[0.0, 0.0, 0.0, 100.0]])  # mask has the largest logit
    toks, _ = dd.sample_tokens(rows, dd.SamplerConfig(mode="greedy"), vocab4)
    assert toks[0] != vocab4.mask_id
    cfg = dd.SamplerConfig(mode="categorical", seed=0)
    draws = [
        int(dd.sample_tokens(rows, cfg, vocab4, np.random.default_rng(s))[0][0]) for s in range(200)
    ]
    assert vocab4.mask_id not in draws


def test_categorical_deterministic_under_seed(vocab4):
    rows = np.tile(np.array([[0.5, 0.1, -0.4, 0.0]]), (32, 1))
    cfg = dd.SamplerConfig(mode="categorical", seed=42)
    t1, c1 = dd.sample_tokens(rows, cfg, vocab4)
    t2, c2 = dd.sample_tokens(rows, cfg, vocab4)
    assert np.array_equal(t1, t2)
    assert np.array_equal(c1, c2)


def test_categorical_matches_distribution(vocab4):
    rows = np.array([[math.log(0.6), math.log(0.3), math.log(0.1), -40.0]])
    cfg = dd.SamplerConfig(mode="categorical", seed=0)
    rng = np.random.default_rng(7)
    draws = np.array([dd.sample_tokens(rows, cfg, vocab4, rng)[0][0] for _ in range(6000)])
    freq = np.bincount(draws, minlength=4) / draws.size
    assert freq[0] == pytest.approx(0.6, abs=0.03)
    assert freq[1] == pytest.approx(0.3, abs=0.03)


def test_all_neg_inf_row_rejected(vocab4):
    rows = np.full((1, 4), -np.inf)
    with pytest.raises(ValueError):
        dd.sample_tokens(rows, dd.SamplerConfig(), vocab4)


def test_confidence_metric_closed_forms():
    row = np.array([2.0, 1.0, 0.0])
    e2, e1, e0 = math.exp(2), math.e, 1.0
    total = e2 + e1 + e0
    assert dd.confidence_metric(row, "maxprob") == pytest.approx(e2 / total, abs=1e-9)
    probs = np.array([e2, e1, e0]) / total
    assert dd.confidence_metric(row, "neg_entropy") == pytest.approx(
        float(np.sum(probs * np.log(probs))), abs=1e-12
    )
    assert dd.confidence_metric(row, "margin") == pytest.approx((e2 - e1) / total, abs=1e-9)


def test_confidence_metric_uniform_row():
    V = 5
    row = np.zeros(V)
    assert dd.confidence_metric(row, "maxprob") == pytest.approx(1.0 / V, abs=1e-12)
    assert dd.confidence_metric(row, "neg_entropy") == pytest.approx(-math.log(V), abs=1e-12)
    assert dd.confidence_metric(row, "margin") == pytest.approx(0.0, abs=1e-12)


def test_confidence_metric_one_hot_limit():
    row = np.array([60.0, 0.0, 0.0])
    assert dd.confidence_metric(row, "maxprob") == pytest.approx(1.0, abs=1e-12)
    assert dd.confidence_metric(row, "margin") == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(row=finite_rows)
def test_confident_rows_outrank_uniform(row):
    """All three metrics put a peaked row above a uniform one."""
    row = np.asarray(row)
    probs = dd.softmax(row)
    uniform = np.zeros_like(row)
    if probs.max() > 0.9:
        for kind in ("maxprob", "neg_entropy", "margin"):
            assert dd.confidence_metric(row, kind) > dd.confidence_metric(uniform, kind)


def test_row_confidences_respect_temperature(vocab4):
    rows = np.array([[2.0, 0.0, -1.0, 0.0]])
    hot = row_confidences(rows, dd.SamplerConfig(temperature=4.0), vocab4, "maxprob")
    cold = row_confidences(rows, dd.SamplerConfig(temperature=0.25), vocab4, "maxprob")
    assert cold[0] > hot[0]
    pre = row_confidences(
        rows, dd.SamplerConfig(temperature=4.0, confidence_pre_temperature=True), vocab4, "maxprob"
    )
    base = row_confidences(rows, dd.SamplerConfig(temperature=1.0), vocab4, "maxprob")
    assert pre[0] == pytest.approx(base[0], abs=1e-12)
