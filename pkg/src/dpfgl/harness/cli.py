"""Command-line entry point: ``python -m dpfgl <verb> [options]``.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .commands import COMMANDS
from .config import ConfigError, load_config

# verb-specific flags that map onto config keys
_EXTRA = {
    "spectrum": [("corpus", str)],
    "train": [("corpus", str), ("epochs", int)],
    "meta-train": [("corpus", str), ("model", str), ("meta_episodes", int)],
    "adapt": [("corpus", str), ("model", str), ("generator", str), ("technique", str), ("shots", int)],
    "eval": [("corpus", str), ("model", str), ("technique", str)],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpfgl", description="Synthetic forgery-detection experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb in COMMANDS:
        p = sub.add_parser(verb)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory")
        for key, typ in _EXTRA.get(verb, []):
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ)
        if verb == "adapt":
            p.add_argument("--null-generator", dest="null_generator", action="store_const", const=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"seed": args.seed}
    for key, _ in _EXTRA.get(args.verb, []):
        overrides[key] = getattr(args, key)
    if args.verb == "adapt":
        overrides["null_generator"] = args.null_generator
    if args.verb == "gen-data" and args.out is not None:
        overrides["corpus"] = args.out
    try:
        cfg = load_config(args.config, **overrides)
        return COMMANDS[args.verb](cfg, args.out)
    except ConfigError as e:
        print(f"dpfgl {args.verb}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
