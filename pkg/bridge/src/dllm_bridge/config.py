"""Bridge configuration."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BridgeConfig:
    """What to serve and where.

    checkpoint: either "stub:<vocab_size>" (deterministic synthetic logits,
    used by the conformance tests and for protocol debugging) or a
    huggingface checkpoint id / local path of a masked-diffusion model.
    mask_id / eot_id override the checkpoint's special-token ids; for real
    checkpoints they must agree with the tokenizer, which is validated at
    load time.
    """

    checkpoint: str
    device: str = "cpu"
    max_len: int = 4096
    mask_id: int | None = None
    eot_id: int | None = None
    pad_id: int | None = None
    host: str = "127.0.0.1"
    port: int = 0

    def __post_init__(self):
        if not self.checkpoint:
            raise ValueError("checkpoint must be set")
        if self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")
