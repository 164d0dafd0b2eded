"""Command line: wealthgame {run,sweep,evolve,backtest} --config FILE [key=value ...]."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, resolve
from .scenarios import COMMANDS, apply_paper_scale, write_meta


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wealthgame", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key = value file")
        p.add_argument("--seed", type=int, help="master seed (overrides the file)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--paper-scale", action="store_true",
                       help="N=1000, 1e6 steps, 100 samples (slow)")
        p.add_argument("-v", "--verbose", action="store_true")
        p.add_argument("overrides", nargs="*", metavar="key=value")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.paper_scale:
        overrides.append("paper_scale=true")
    try:
        cfg = apply_paper_scale(resolve(args.config, overrides))
        args.out.mkdir(parents=True, exist_ok=True)
        if args.command != "sweep":  # sweep checks the old meta before rewriting it
            write_meta(args.out, args.command, cfg)
        COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
