#!/usr/bin/env python3
"""Write a demo chain-oracle file for the CLI examples.

Usage: python3 demos/make_chain.py [out.json]
"""

import sys

import dllm_decode as dd
from dllm_decode.oracle import save_oracle_file

out = sys.argv[1] if len(sys.argv) > 1 else "chain.json"

# four content symbols + an ordinary end-of-text symbol + the mask slot
vocab = dd.Vocabulary(size=6, mask_id=5, eot_id=4)
spec = dd.sticky_chain(vocab, stay=0.85)
save_oracle_file(out, spec, vocab, symbols=["a", "b", "c", "d", "<eot>", "_"])
print(f"wrote {out}: {spec.vocab_size}-symbol sticky chain (stay=0.85)")
