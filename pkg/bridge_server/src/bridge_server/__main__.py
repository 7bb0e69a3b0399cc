"""Command-line entry point: bind an address and serve a model."""

from __future__ import annotations

import argparse
import sys

from .models import ModelBinding
from .server import BridgeServer


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mdlm-bridge-server")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=9630)
    parser.add_argument(
        "--model", default="synthetic:vocab=8,seed=0",
        help="synthetic:vocab=V,seed=S or hf:<checkpoint path>",
    )
    parser.add_argument(
        "--reward", default="lexicon:seed=0",
        help="lexicon:seed=S, hf:<checkpoint path>, or none",
    )
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-length", type=int, default=1024)
    args = parser.parse_args(argv)

    binding = ModelBinding(
        model_spec=args.model, scorer_spec=args.reward,
        device=args.device, max_length=args.max_length,
    )
    server = BridgeServer(binding, host=args.host, port=args.port)
    print(f"serving {args.model} on {args.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
