#!/usr/bin/env python3
"""All four strategies on one cloze task, at the same forward-step budget.

The task: a sticky chain generated a 48-token sequence; we see the first
12 tokens and must fill in the remaining 36 with T=8 forward calls. The
scores are the true chain's joint log-likelihood of each output: higher
means the decode is more coherent under the data distribution.
"""

import numpy as np

import dllm_decode as dd
from dllm_decode.harness import run_decode

vocab = dd.Vocabulary(size=6, mask_id=5, eot_id=4)
spec = dd.sticky_chain(vocab, stay=0.85)
backend = dd.MarkovOracleBackend(spec, vocab)

rng = np.random.default_rng(4)
truth = dd.sample_chain(spec, 48, rng)
prompt = [int(t) for t in truth[:12]]
gen_len = 36
T = 8

print(f"prompt: {prompt}")
print(f"budget: T={T} forward calls for {gen_len} tokens "
      f"({gen_len / T:g} tokens per call)\n")

for strategy in ("vanilla", "tolerator", "rcr", "remdm"):
    counting = dd.CountingBackend(backend)
    state = dd.init_state(prompt, gen_len, vocab)
    final, _ = run_decode(strategy, state, counting, T, seed=11)
    score = dd.chain_loglik(spec, final.tokens)
    out = " ".join(str(int(t)) for t in final.tokens[12:])
    print(f"{strategy:10s} calls={counting.calls}  loglik={score:8.2f}  {out}")

print(f"\n{'truth':10s} {'':18s}loglik={dd.chain_loglik(spec, truth):8.2f}  "
      + " ".join(str(int(t)) for t in truth[12:]))
print("\nVanilla freezes every accepted token, so incoherent same-step")
print("neighbors persist; the two-stage strategy redraws subsets against")
print("full context and usually lands noticeably closer to the chain.")
