"""Checkpoint loading and the one-request-one-forward contract.

Two model kinds:

* "stub:<vocab_size>" - a deterministic synthetic logit source (a hash of
  the token buffer seeds a generator, so identical requests get identical
  rows). No heavy dependencies; this is what the conformance suite runs
  against.
* anything else - treated as a huggingface checkpoint id or local path of
  a masked-diffusion language model; loaded lazily through transformers +
  torch so the stub path works without them installed. One LogitsRequest
  maps to exactly one model forward over the full token buffer; rows are
  gathered at the query positions. The bridge keeps no state between
  requests (no KV caching), trading speed for parity with the engine's
  budget accounting.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .config import BridgeConfig


@dataclass(frozen=True)
class VocabMeta:
    vocab_size: int
    mask_id: int
    eot_id: int
    pad_id: int | None = None


class StubModel:
    """Deterministic synthetic logits; counts forwards for budget checks."""

    def __init__(self, vocab_size: int):
        if vocab_size < 3:
            raise ValueError("stub vocab needs at least 3 ids (content + eot + mask)")
        self.vocab_size = vocab_size
        self.forwards = 0

    def forward(self, tokens, query_positions) -> np.ndarray:
        self.forwards += 1
        buf = np.asarray(tokens, dtype=np.int64).tobytes()
        seed = zlib.crc32(buf)
        rng = np.random.default_rng(seed)
        rows_all = rng.normal(0.0, 2.0, size=(len(tokens), self.vocab_size))
        return rows_all[np.asarray(query_positions, dtype=np.int64)].reshape(
            len(query_positions), self.vocab_size
        )


class HfMaskedDiffusionModel:
    """A real checkpoint behind the same forward(tokens, query_positions) surface."""

    def __init__(self, cfg: BridgeConfig):
        import torch  # heavy imports stay out of the stub path
        from transformers import AutoModel, AutoTokenizer

        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(cfg.checkpoint, trust_remote_code=True)
        self.model = (
            AutoModel.from_pretrained(cfg.checkpoint, trust_remote_code=True)
            .to(cfg.device)
            .eval()
        )
        self.device = cfg.device
        self.forwards = 0
        self.vocab_size = len(self.tokenizer)

        mask_id = self.tokenizer.mask_token_id
        eot_id = self.tokenizer.eos_token_id
        if cfg.mask_id is not None and mask_id is not None and cfg.mask_id != mask_id:
            raise ValueError(
                f"configured mask_id {cfg.mask_id} != tokenizer mask token {mask_id}"
            )
        if cfg.eot_id is not None and eot_id is not None and cfg.eot_id != eot_id:
            raise ValueError(f"configured eot_id {cfg.eot_id} != tokenizer eos token {eot_id}")
        self.mask_id = cfg.mask_id if mask_id is None else mask_id
        self.eot_id = cfg.eot_id if eot_id is None else eot_id
        if self.mask_id is None or self.eot_id is None:
            raise ValueError("checkpoint tokenizer does not define mask/eos ids; set them in config")

    def forward(self, tokens, query_positions) -> np.ndarray:
        torch = self._torch
        self.forwards += 1
        ids = torch.tensor([list(tokens)], dtype=torch.long, device=self.device)
        with torch.no_grad():
            out = self.model(ids)
        logits = out.logits if hasattr(out, "logits") else out[0]
        rows = logits[0, list(query_positions), :].float().cpu().numpy()
        return np.asarray(rows, dtype=np.float64)


def load_model(cfg: BridgeConfig):
    """Returns (model, VocabMeta). Stub checkpoints look like "stub:32"."""
    if cfg.checkpoint.startswith("stub:"):
        vocab_size = int(cfg.checkpoint.split(":", 1)[1])
        model = StubModel(vocab_size)
        mask_id = cfg.mask_id if cfg.mask_id is not None else vocab_size - 1
        eot_id = cfg.eot_id if cfg.eot_id is not None else vocab_size - 2
        if not 0 <= mask_id < vocab_size or not 0 <= eot_id < vocab_size or mask_id == eot_id:
            raise ValueError("stub mask/eot ids out of range")
        return model, VocabMeta(vocab_size, mask_id, eot_id, cfg.pad_id)
    model = HfMaskedDiffusionModel(cfg)
    return model, VocabMeta(model.vocab_size, model.mask_id, model.eot_id, cfg.pad_id)
