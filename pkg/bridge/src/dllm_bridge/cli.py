"""dllm-bridge: serve a masked-diffusion checkpoint over the wire protocol."""

from __future__ import annotations

import argparse
import sys

from .config import BridgeConfig
from .server import BridgeServer


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dllm-bridge",
        description="Expose a masked-diffusion checkpoint as a logits server (protocol.md).",
    )
    parser.add_argument("--checkpoint", required=True, help='checkpoint id/path, or "stub:<vocab_size>"')
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-len", type=int, default=4096)
    parser.add_argument("--mask-id", type=int, default=None)
    parser.add_argument("--eot-id", type=int, default=None)
    parser.add_argument("--endpoint", default="127.0.0.1:0", help="host:port to bind")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    host, _, port = args.endpoint.rpartition(":")
    if not host or not port.isdigit():
        print(f"error: endpoint must be host:port, got {args.endpoint!r}", file=sys.stderr)
        return 2
    try:
        cfg = BridgeConfig(
            checkpoint=args.checkpoint,
            device=args.device,
            max_len=args.max_len,
            mask_id=args.mask_id,
            eot_id=args.eot_id,
            host=host,
            port=int(port),
        )
        server = BridgeServer(cfg)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"serving {args.checkpoint} on {host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
