"""Command-line entry point: ``grda-lab {lr-run,pca-run,rda-bias,band} --config FILE``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .errors import ConfigError, GrdaError, NumericError
from .experiments import (ExperimentConfig, emit_report, run_band_only, run_lr_experiment,
                          run_pca_experiment, run_rda_bias_check)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("grda_lab")

COMMANDS = {
    "lr-run": ("sparse linear regression ensemble with bands and metrics", run_lr_experiment),
    "pca-run": ("online sparse PCA ensemble with bands and metrics", run_pca_experiment),
    "rda-bias": ("long-run RDA bias on active coordinates", run_rda_bias_check),
    "band": ("mean path and confidence band only", run_band_only),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grda-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (help_text, _) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON file with experiment settings")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--reps", type=int, help="override the number of repetitions")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--workers", type=int, help="number of worker processes")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, which matches the config-error code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.from_json(args.config)
        overrides = {k: getattr(args, k) for k in ("seed", "reps", "out", "workers") if getattr(args, k) is not None}
        cfg = dataclasses.replace(cfg, **overrides).validate()
        _, runner = COMMANDS[args.command]
        log.info("running %s with seed %d", args.command, cfg.seed)
        report = runner(cfg)
        paths = emit_report(report, cfg.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GrdaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for name in sorted(paths):
        print(paths[name])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
