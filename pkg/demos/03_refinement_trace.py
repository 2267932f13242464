#!/usr/bin/env python3
"""Watch cross-validation refinement edit a draft, token by token.

Runs the two-stage decoder with a trace, then renders the decode order
of the fill-up draft (cold colors = early steps) and the per-iteration
edits (red = deleted value, green = its replacement). The remask rate
anneals from 0.8 down to 0.4, so early iterations churn broadly and late
ones settle.
"""

import dllm_decode as dd
from dllm_decode.core import trace_header
from dllm_decode.render import render_text

vocab = dd.Vocabulary(size=6, mask_id=5, eot_id=4)
spec = dd.sticky_chain(vocab, stay=0.85)
backend = dd.MarkovOracleBackend(spec, vocab)

prompt, gen_len = [0, 0, 1], 29
cfg = dd.ToleratorConfig(
    total_steps=16,
    rho=0.5,
    lambda_eot=1.2,
    seed=3,
    sampler=dd.SamplerConfig(mode="categorical", seed=3),
)
state = dd.init_state(prompt, gen_len, vocab)
final, traces = dd.tolerator_decode(state, backend, cfg)

header = trace_header(prompt, gen_len, vocab)
print(render_text(header, traces, symbols=["a", "b", "c", "d", "<eot>", "_"]))

fill = [t for t in traces if t.stage == "fillup"]
refine = [t for t in traces if t.stage == "refine"]
print(f"fill-up records: {len(fill)}, refinement records: {len(refine)} "
      f"({len(refine) // 2} iterations, two records each)")
print(f"final chain log-likelihood: {dd.chain_loglik(spec, final.tokens):.2f}")
