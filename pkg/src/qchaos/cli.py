"""Command-line entry point.

    qchaos <experiment> --config FILE [--out DIR] [--seed N] [--workers N]
                        [--dump-noise]

Exit codes: 0 success, 2 invariant violation during the run, 3 config error.
"""

from __future__ import annotations

import argparse
import sys

from ._version import __version__
from .config import EXPERIMENT_NAMES, load_config
from .errors import ConfigError, SimulationError
from .experiments import RUNNERS


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qchaos",
        description="Measured quantum and classical nonlinear oscillators: "
                    "transition criteria, Lyapunov exponents, phase-space maps.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True,
                                metavar="|".join(EXPERIMENT_NAMES))
    for name in EXPERIMENT_NAMES:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="INI experiment configuration")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override [numerics] base_seed")
        p.add_argument("--workers", type=int, default=None,
                       help="override [numerics] workers")
        p.add_argument("--dump-noise", action="store_true",
                       help="also write consumed noise increments as NDJSON")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.experiment, out_dir=args.out,
                             base_seed=args.seed, workers=args.workers)
        summary = RUNNERS[args.experiment](config,
                                           dump_noise=args.dump_noise)
    except ConfigError as exc:
        print(f"qchaos: config error: {exc}", file=sys.stderr)
        return 3
    except SimulationError as exc:
        print(f"qchaos: invariant violation: {exc}", file=sys.stderr)
        return 2
    out = config.out_dir or f"{config.experiment}-out"
    for key in ("qct_all_satisfied", "l1_slice", "verdicts", "curve",
                "slope", "rms_radius"):
        if key in summary:
            print(f"{key}: {summary[key]}")
    print(f"artifacts written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
