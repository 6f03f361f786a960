"""Command-line entry point.

Usage: consistency-lab <experiment> --config <file> [--seed N] [--out DIR]

The experiment subcommand selects the driver; flags override keys from
the config file.  Exit codes: 0 on success, 2 for configuration errors,
3 when a verification threshold fails, 1 for unexpected errors.
"""

from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, load_config
from .errors import ConfigError
from .experiments import EXIT_CONFIG, EXIT_ERROR, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="consistency-lab",
        description="Numerical checks for diffusion-model consistency properties "
                    "on tractable Gaussian mixtures.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", default=None, help="TOML run-config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--checkpoint", default=None,
                       help="checkpoint path for sample/eval experiments")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg.experiment = args.experiment
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output_dir = args.out
        if args.checkpoint is not None:
            cfg.checkpoint_path = args.checkpoint
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
