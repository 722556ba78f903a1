"""Command-line launcher: wcgen-service --port 8000 --stub"""

from __future__ import annotations

import argparse
import sys

import uvicorn

from .app import create_app
from .config import ServiceConfig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wcgen-service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8800)
    parser.add_argument("--stub", action="store_true", help="serve the deterministic stub algorithms")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-jobs", type=int, default=2)
    parser.add_argument("--generator", default="stub")
    parser.add_argument("--depth-model", default="stub")
    parser.add_argument("--caption-model", default="stub")
    args = parser.parse_args(argv)

    try:
        config = ServiceConfig(
            generator_model=args.generator,
            depth_model=args.depth_model,
            caption_model=args.caption_model,
            device=args.device,
            max_jobs=args.max_jobs,
        )
        if args.stub:
            config = config.stubbed()
        app = create_app(config)
    except (ValueError, RuntimeError) as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
