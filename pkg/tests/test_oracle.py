import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dllm_decode as dd
from enumeration import brute_posterior, joint_prob


def test_uniform_chain_uniform_posterior(vocab4):
    spec = dd.uniform_chain(vocab4)
    backend = dd.MarkovOracleBackend(spec, vocab4)
    resp = backend.logits(dd.LogitsRequest([0, vocab4.mask_id, 1], [1]))
    probs = dd.softmax(resp.logits[0])
    live = [i for i in range(vocab4.size) if i != vocab4.mask_id]
    assert probs[live] == pytest.approx(np.full(len(live), 1.0 / len(live)), abs=1e-12)
    assert probs[vocab4.mask_id] < 1e-12


def test_two_symbol_middle_posterior():
    # A, MASK, A with stay = 0.9: p(A) = 0.81 / (0.81 + 0.01)
    vocab = dd.Vocabulary(size=3, mask_id=2, eot_id=1)
    spec = dd.two_symbol_chain(vocab, [[0.9, 0.1], [0.1, 0.9]])
    backend = dd.MarkovOracleBackend(spec, vocab)
    resp = backend.logits(dd.LogitsRequest([0, 2, 0], [1]))
    probs = dd.softmax(resp.logits[0])
    expected = brute_posterior(spec, [0, 0, 0], [False, True, False], 1)
    assert probs[0] == pytest.approx(0.81 / 0.82, abs=1e-12)
    assert probs[: spec.vocab_size] == pytest.approx(expected, abs=1e-12)


def test_all_masked_first_position_is_initial_marginal(vocab4):
    spec = dd.random_chain(vocab4, np.random.default_rng(3))
    backend = dd.MarkovOracleBackend(spec, vocab4)
    L = 3
    tokens = [vocab4.mask_id] * L
    resp = backend.logits(dd.LogitsRequest(tokens, [0]))
    probs = dd.softmax(resp.logits[0])
    expected = brute_posterior(spec, [0] * L, [True] * L, 0)
    assert probs[: spec.vocab_size] == pytest.approx(expected, abs=1e-9)
    # with no observations, the marginal at position 0 is the initial distribution
    assert probs[: spec.vocab_size] == pytest.approx(spec.initial, abs=1e-9)


@settings(max_examples=120, deadline=None)
@given(data=st.data())
def test_oracle_matches_enumeration(data):
    """Randomized chains, lengths <= 6, vocab <= 4: exact to 1e-9."""
    size = data.draw(st.integers(3, 4), label="vocab_size")
    vocab = dd.Vocabulary(size=size, mask_id=size - 1, eot_id=size - 2)
    seed = data.draw(st.integers(0, 2**31), label="seed")
    spec = dd.random_chain(vocab, np.random.default_rng(seed))
    L = data.draw(st.integers(2, 6), label="length")
    masked = data.draw(
        st.lists(st.booleans(), min_size=L, max_size=L).filter(lambda m: any(m)), label="masked"
    )
    rng = np.random.default_rng(seed + 1)
    full = dd.sample_chain(spec, L, rng)
    tokens = [int(t) if not m else vocab.mask_id for t, m in zip(full, masked)]
    queries = [i for i, m in enumerate(masked) if m]
    backend = dd.MarkovOracleBackend(spec, vocab)
    resp = backend.logits(dd.LogitsRequest(tokens, queries))
    for row, pos in zip(resp.logits, queries):
        expected = brute_posterior(spec, [int(t) for t in full], masked, pos)
        assert dd.softmax(row)[: spec.vocab_size] == pytest.approx(expected, abs=1e-9)


def test_oracle_rejects_non_stochastic_rows():
    with pytest.raises(ValueError):
        dd.MarkovOracleSpec(
            vocab_size=2, transition=np.array([[0.7, 0.7], [0.5, 0.5]]), initial=np.array([0.5, 0.5])
        )
    with pytest.raises(ValueError):
        dd.MarkovOracleSpec(
            vocab_size=2, transition=np.array([[1.2, -0.2], [0.5, 0.5]]), initial=np.array([0.5, 0.5])
        )


def test_oracle_rejects_zero_probability_evidence(vocab4):
    spec = dd.two_symbol_chain(vocab4, [[0.9, 0.1], [0.1, 0.9]])
    backend = dd.MarkovOracleBackend(spec, vocab4)
    with pytest.raises(ValueError):
        # id 2 (eot) has zero mass everywhere in this chain: impossible evidence
        backend.logits(dd.LogitsRequest([2, vocab4.mask_id, 0], [1]))


def test_chain_loglik_matches_enumeration(vocab6):
    spec = dd.sticky_chain(vocab6, 0.85)
    rng = np.random.default_rng(0)
    for _ in range(20):
        seq = dd.sample_chain(spec, 8, rng)
        assert dd.chain_loglik(spec, seq) == pytest.approx(
            np.log(joint_prob(spec, [int(t) for t in seq])), abs=1e-9
        )


def test_sample_chain_respects_support(vocab6):
    spec = dd.sticky_chain(vocab6, 0.85)
    seq = dd.sample_chain(spec, 500, np.random.default_rng(1))
    assert vocab6.mask_id not in seq
    freq = np.bincount(seq, minlength=vocab6.size) / seq.size
    assert freq[: vocab6.size - 1].min() > 0.05  # every chain symbol shows up


def test_oracle_file_roundtrip(tmp_path, vocab6):
    spec = dd.sticky_chain(vocab6, 0.7)
    path = str(tmp_path / "chain.json")
    from dllm_decode.oracle import load_oracle_file, save_oracle_file

    save_oracle_file(path, spec, vocab6, symbols=list("abcd") + ["<eot>", "_"])
    spec2, vocab2, symbols = load_oracle_file(path)
    assert vocab2 == vocab6
    assert symbols[0] == "a"
    assert np.allclose(spec2.transition, spec.transition, atol=0)
    assert np.allclose(spec2.initial, spec.initial, atol=0)
