"""Adapter entry point. Flags mirror the primary `serve` command; a JSON
config file supplies defaults that flags override."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .server import AdapterConfig, serve_inference

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cookar-adapter",
        description="sidecar segmentation server speaking the affordance wire protocol",
    )
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--host", help="bind address (default: 127.0.0.1)")
    parser.add_argument("--port", type=int, help="bind port, 0 for ephemeral (default: 7466)")
    parser.add_argument("--threshold", type=float, help="confidence threshold (default: 0.4)")
    parser.add_argument("--plugin", choices=["null", "echo-fixture"],
                        help="model plug-in (default: null)")
    parser.add_argument("--fixture", help="fixture JSON for the echo-fixture plug-in")
    return parser


def main(argv=None) -> int:
    level = _LOG_LEVELS.get(os.environ.get("COOKAR_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr)
    args = build_parser().parse_args(argv)
    config = AdapterConfig.from_file(args.config) if args.config else AdapterConfig()
    if args.host is not None:
        config.host = args.host
    if args.port is not None:
        config.port = args.port
    if args.threshold is not None:
        config.confidence_threshold = args.threshold
    if args.plugin is not None:
        config.plugin = args.plugin
    if args.fixture is not None:
        config.fixture_path = args.fixture
    try:
        serve_inference(config)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
