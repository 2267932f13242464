#!/usr/bin/env python3
"""The performance-efficiency trade-off on the synthetic suite.

Sweeps all four strategies over forward-step budgets on sticky-chain
cloze tasks and prints the strategy x budget table (mean chain
log-likelihood, higher is better). Two things to look for: every cell
consumed exactly T backend calls, and the two-stage strategy's edge is
largest at small T (many tokens per call) and fades as decoding becomes
sequential.
"""

import dllm_decode as dd

vocab = dd.Vocabulary(size=6, mask_id=5, eot_id=4)
spec = dd.sticky_chain(vocab, stay=0.85)
backend = dd.MarkovOracleBackend(spec, vocab)

suite = dd.gen_cloze_suite(spec, n=24, length=48, prompt_len=12, seed=1)
T_values = (4, 8, 16, 36)
sweep = dd.SweepSpec(
    strategies=("vanilla", "tolerator", "rcr", "remdm"),
    T_values=T_values,
    seeds=(0, 1, 2),
)
table = dd.run_sweep(sweep, suite, backend, spec)

rows = {}
for agg in table.aggregates():
    rows.setdefault(agg.strategy, {})[agg.T] = agg

print(f"{len(table.records)} decodes, every cell budget-exact\n")
print(f"{'strategy':12s}" + "".join(f"  T={T:<11d}" for T in T_values))
for strategy in sweep.strategies:
    cells = rows[strategy]
    line = f"{strategy:12s}"
    for T in T_values:
        a = cells[T]
        line += f"  {a.mean:7.2f}±{a.stdev:4.1f}"
    print(line)
print(f"\ntokens per forward call at each T: "
      + ", ".join(f"T={T}: {36 / T:.1f}" for T in T_values))
