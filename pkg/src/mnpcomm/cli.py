"""Command-line runner: ``mnpcomm {magnetization,impulse,ser,validate}``.

Exit codes: 0 success, 1 configuration error, 2 failed invariant.
Log verbosity comes from ``MNPCOMM_LOG_LEVEL`` (default WARNING).
"""

import argparse
import logging
import os
import sys

from mnpcomm.config import ConfigError, ExperimentConfig
from mnpcomm.experiments import EXPERIMENTS

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVARIANT = 2

LOG_ENV = "MNPCOMM_LOG_LEVEL"


def _seed(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mnpcomm", description="Magnetic-nanoparticle channel experiments (CSV output)."
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    helps = {
        "magnetization": "magnetization curves M(B) per core radius",
        "impulse": "impulse response per field gradient, analytic and simulated",
        "ser": "symbol error rate versus particles per pulse",
        "validate": "run the invariant suite; exit 2 if any check fails",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="flat key: value YAML file")
        p.add_argument("--out", help="output CSV path (default: stdout)")
        p.add_argument("--seed", type=_seed, help="overrides the seed from config and --set")
        p.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE",
                       help="override one parameter; repeatable")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")

    try:
        config = ExperimentConfig.load(args.config, args.assignments, args.seed)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    table = EXPERIMENTS[args.experiment](config)
    if args.out:
        table.write(args.out)
    else:
        sys.stdout.write(table.to_csv())

    if args.experiment == "validate" and not table.metadata["all_passed"]:
        for row in table.rows:
            if not row[3]:
                print(f"FAILED {row[0]}: measured {row[1]:.3g}, tolerance {row[2]:.3g} {row[4]}",
                      file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
