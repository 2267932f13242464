import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dllm_decode as dd
from conftest import trace_content
from enumeration import brute_map_completion


def test_anneal_gamma_endpoints():
    assert dd.anneal_gamma(0, 16, 0.8, 0.4) == pytest.approx(0.8, abs=1e-12)
    assert dd.anneal_gamma(16, 16, 0.8, 0.4) == pytest.approx(0.4, abs=1e-12)
    assert dd.anneal_gamma(8, 16, 0.8, 0.4) == pytest.approx(0.6, abs=1e-12)


def test_anneal_gamma_domain():
    with pytest.raises(ValueError):
        dd.anneal_gamma(1, 0, 0.8, 0.4)
    with pytest.raises(ValueError):
        dd.anneal_gamma(5, 4, 0.8, 0.4)


@settings(max_examples=120, deadline=None)
@given(K=st.integers(1, 256))
def test_refine_schedule_non_increasing(K):
    sched = dd.RefineSchedule.build(K, 0.8, 0.4)
    gamma = np.array(sched.gamma)
    assert len(gamma) == K
    assert gamma[0] == pytest.approx(0.8, abs=1e-12)
    assert np.all(np.diff(gamma) <= 1e-15)
    assert gamma.min() >= 0.4 - 1e-12


def test_stage_split_examples():
    cfg = dd.ToleratorConfig(total_steps=32, rho=0.5)
    assert (cfg.fillup_steps, cfg.refine_steps) == (16, 16)
    cfg = dd.ToleratorConfig(total_steps=4, rho=0.5)
    assert (cfg.fillup_steps, cfg.refine_steps) == (2, 2)
    # half-up rounding, minimum one fill-up step
    cfg = dd.ToleratorConfig(total_steps=5, rho=0.5)
    assert cfg.fillup_steps == 3
    cfg = dd.ToleratorConfig(total_steps=4, rho=0.05)
    assert cfg.fillup_steps == 1


def test_config_validation():
    with pytest.raises(ValueError):
        dd.ToleratorConfig(total_steps=8, gamma_max=0.4, gamma_min=0.8)
    with pytest.raises(ValueError):
        dd.ToleratorConfig(total_steps=8, lambda_eot=0.5)
    with pytest.raises(ValueError):
        dd.ToleratorConfig(total_steps=8, rho=1.5)
    with pytest.raises(ValueError):
        dd.ToleratorConfig(total_steps=8, fillup_steps_override=9)


def test_fillup_with_unit_penalty_matches_vanilla(vocab6, sticky_backend):
    sampler = dd.SamplerConfig(mode="categorical", seed=23)
    state = dd.init_state([0, 1], 18, vocab6)
    cfg = dd.ToleratorConfig(total_steps=6, fillup_steps_override=6, lambda_eot=1.0, sampler=sampler)
    f1, t1 = dd.fillup(state, sticky_backend, cfg)
    state = dd.init_state([0, 1], 18, vocab6)
    sched = dd.AcceptanceSchedule.build(18, 6)
    f2, t2 = dd.vanilla_decode(state, sticky_backend, sched, sampler)
    assert list(f1.tokens) == list(f2.tokens)
    assert trace_content(t1) == trace_content(t2)
    assert all(t.kind == "fillup" and t.stage == "fillup" for t in t1)


def test_fillup_penalty_suppresses_eot(vocab6, sticky_backend):
    """Cranking lambda_eot forces EoT out of the draft entirely."""
    sampler = dd.SamplerConfig(mode="categorical", seed=3)
    base = dd.init_state([0], 40, vocab6)
    cfg = dd.ToleratorConfig(
        total_steps=4, fillup_steps_override=4, lambda_eot=1e6, sampler=sampler
    )
    draft, _ = dd.fillup(base, sticky_backend, cfg)
    assert vocab6.eot_id not in draft.tokens[1:]


def reference_penalized_greedy_fill(spec, vocab, prompt, gen_len, lam):
    """Independent sequential fill: enumeration posteriors, EoT mass divided
    by lam, easiest-first position order, argmax token, lowest-index ties."""
    from enumeration import brute_posterior

    tokens = list(prompt) + [0] * gen_len
    masked = [False] * len(prompt) + [True] * gen_len
    for _ in range(gen_len):
        best = None
        for pos in range(len(tokens)):
            if not masked[pos]:
                continue
            post = brute_posterior(spec, tokens, masked, pos).copy()
            post[vocab.eot_id] /= lam
            post[vocab.mask_id] = 0.0
            post /= post.sum()
            conf = post.max()
            if best is None or conf > best[0]:
                best = (conf, pos, int(np.argmax(post)))
        _, pos, tok = best
        tokens[pos] = tok
        masked[pos] = False
    return tokens


def test_fillup_sequential_greedy_matches_enumeration_reference():
    """Forward-backward fill-up against a from-scratch enumeration loop."""
    vocab = dd.Vocabulary(size=4, mask_id=3, eot_id=2)
    spec = dd.sticky_chain(vocab, stay=0.8)
    backend = dd.MarkovOracleBackend(spec, vocab)
    lam = 2.0
    for prompt in ((0,), (1,), (2,), (0, 2)):
        gen_len = 5
        state = dd.init_state(list(prompt), gen_len, vocab)
        cfg = dd.ToleratorConfig(
            total_steps=gen_len,
            fillup_steps_override=gen_len,
            lambda_eot=lam,
            sampler=dd.SamplerConfig(mode="greedy"),
        )
        final, _ = dd.fillup(state, backend, cfg)
        expected = reference_penalized_greedy_fill(spec, vocab, prompt, gen_len, lam)
        assert [int(t) for t in final.tokens] == expected


def test_refine_step_subset_law(vocab6, sticky_backend):
    state = dd.init_state([0, 1], 100, vocab6)
    cfg = dd.ToleratorConfig(total_steps=2, sampler=dd.SamplerConfig(seed=0))
    draft, _ = dd.fillup(state, sticky_backend, cfg)
    rng = np.random.default_rng(0)
    out, (mask_rec, fill_rec) = dd.refine_step(draft, sticky_backend, 0.6, cfg, rng)
    assert len(mask_rec.remasked) == 60
    assert out.is_complete
    assert set(fill_rec.accepted_now) == set(mask_rec.remasked)
    assert min(mask_rec.remasked) >= 2  # never the prompt


def test_refine_step_gamma_one_redraws_everything(vocab6, sticky_backend):
    state = dd.init_state([0, 1], 10, vocab6)
    cfg = dd.ToleratorConfig(total_steps=2, sampler=dd.SamplerConfig(seed=1))
    draft, _ = dd.fillup(state, sticky_backend, cfg)
    out, (mask_rec, _) = dd.refine_step(draft, sticky_backend, 1.0, cfg, np.random.default_rng(1))
    assert len(mask_rec.remasked) == 10
    assert out.is_complete


def test_refine_step_clamps_to_one(vocab6, sticky_backend):
    state = dd.init_state([0, 1], 10, vocab6)
    cfg = dd.ToleratorConfig(total_steps=2, sampler=dd.SamplerConfig(seed=2))
    draft, _ = dd.fillup(state, sticky_backend, cfg)
    out, (mask_rec, _) = dd.refine_step(draft, sticky_backend, 0.05, cfg, np.random.default_rng(2))
    assert len(mask_rec.remasked) == 1  # floor(0.5) clamped up


def test_refine_fixed_point_at_map():
    """A MAP draft is invariant under greedy refinement for any subset."""
    vocab = dd.Vocabulary(size=3, mask_id=2, eot_id=1)
    spec = dd.two_symbol_chain(vocab, [[0.9, 0.1], [0.1, 0.9]])
    backend = dd.MarkovOracleBackend(spec, vocab)
    L, m = 6, 2
    for prompt in itertools.product((0, 1), repeat=m):
        masked = [False] * m + [True] * (L - m)
        map_seq, _ = brute_map_completion(spec, list(prompt) + [0] * (L - m), masked)
        gen = range(m, L)
        for r in range(1, L - m + 1):
            for subset in itertools.combinations(gen, r):
                tokens = list(map_seq)
                for p in subset:
                    tokens[p] = vocab.mask_id
                rows = backend.logits(dd.LogitsRequest(tokens, sorted(subset))).logits
                toks, _ = dd.sample_tokens(rows, dd.SamplerConfig(mode="greedy"), vocab)
                assert [int(t) for t in toks] == [map_seq[p] for p in sorted(subset)]


def test_tolerator_budget_and_trace_shape(vocab6, sticky_backend):
    counting = dd.CountingBackend(sticky_backend)
    state = dd.init_state([0, 1], 32, vocab6)
    cfg = dd.ToleratorConfig(total_steps=16, rho=0.5, sampler=dd.SamplerConfig(mode="categorical", seed=4))
    final, traces = dd.tolerator_decode(state, counting, cfg)
    assert counting.calls == 16
    assert final.is_complete
    fill = [t for t in traces if t.stage == "fillup"]
    refine = [t for t in traces if t.stage == "refine"]
    assert len(fill) == 8
    assert len(refine) == 16  # two records per refinement step
    gammas = [refine[i].gamma for i in range(0, len(refine), 2)]
    expected = [dd.anneal_gamma(k, 8, 0.8, 0.4) for k in range(8)]
    assert gammas == pytest.approx(expected, abs=1e-12)
    assert all(np.diff(gammas) <= 1e-15)


def test_tolerator_pure_fillup_when_refine_zero(vocab6, sticky_backend):
    state = dd.init_state([0, 1], 12, vocab6)
    sampler = dd.SamplerConfig(mode="categorical", seed=8)
    cfg = dd.ToleratorConfig(total_steps=16, fillup_steps_override=16, sampler=sampler)
    f1, t1 = dd.tolerator_decode(state, sticky_backend, cfg)
    state = dd.init_state([0, 1], 12, vocab6)
    f2, t2 = dd.fillup(state, sticky_backend, cfg)
    assert f1 == f2
    assert trace_content(t1) == trace_content(t2)


def test_tolerator_deterministic(vocab6, sticky_backend):
    outs = []
    for _ in range(2):
        state = dd.init_state([2], 20, vocab6)
        cfg = dd.ToleratorConfig(
            total_steps=10, seed=11, sampler=dd.SamplerConfig(mode="categorical", seed=11)
        )
        final, traces = dd.tolerator_decode(state, sticky_backend, cfg)
        outs.append((list(final.tokens), trace_content(traces)))
    assert outs[0] == outs[1]


def test_tolerator_revises_post_fillup_tokens(vocab6, sticky_backend):
    """The mechanism vanilla cannot exhibit: some run changes a token after fill-up."""
    changed = False
    for seed in range(30):
        state = dd.init_state([0, 1], 24, vocab6)
        cfg = dd.ToleratorConfig(
            total_steps=12, seed=seed, sampler=dd.SamplerConfig(mode="categorical", seed=seed)
        )
        final, traces = dd.tolerator_decode(state, sticky_backend, cfg)
        n_fill = cfg.fillup_steps
        draft = dd.replay_trace([0, 1], 24, vocab6, [t for t in traces if t.stage == "fillup"])
        if not np.array_equal(draft.tokens, final.tokens):
            changed = True
            break
    assert changed
