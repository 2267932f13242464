"""Logits server bridging real masked-diffusion checkpoints to the
dllm-decode wire protocol (see the engine repo's protocol.md)."""

from .config import BridgeConfig
from .model import StubModel, VocabMeta, load_model
from .server import BridgeServer

__version__ = "0.1.0"
