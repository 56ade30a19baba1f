"""Command line: ``latentreuse run --config <path> [--out <dir>] [--preset <name>] [--seed-override <u64>]``."""

from __future__ import annotations

import argparse
import sys

from .config import PRESETS, load_config, resolve
from .errors import ConfigInvalid, LatentReuseError
from .presets import run as run_preset
from .report import write_report


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="latentreuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute a preset and write report.json, tables/*.csv, manifest.json")
    r.add_argument("--config", required=True, help="JSON experiment config")
    r.add_argument("--out", help="output directory (overrides config 'out')")
    r.add_argument("--preset", choices=PRESETS, help="preset name (overrides config 'preset')")
    r.add_argument("--seed-override", type=_u64, help="root seed (overrides config 'seed')")
    return parser


def run(config: dict, out=None, preset=None, seed=None):
    """Resolve, execute and write one experiment; returns ``(report, paths)``."""
    cfg = resolve(config, preset=preset, seed=seed, out=out)
    report, extra = run_preset(cfg)
    paths = write_report(report, cfg["out"], extra)
    return report, paths


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config)
        if not isinstance(raw, dict):
            raise ConfigInvalid("config must be a JSON object", "type")
        _, paths = run(raw, out=args.out, preset=args.preset, seed=args.seed_override)
    except ConfigInvalid as exc:
        print(f"config invalid: {exc}", file=sys.stderr)
        print(f"schema path: {exc.path}", file=sys.stderr)
        return 2
    except LatentReuseError as exc:
        print(f"run failed ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
