"""
Command-line entry point.

Usage:
    dpbn train --config configs/unit_dpbn_1layer.yaml [--seed N] [--out DIR]
    dpbn eval --model runs/x/model.dpbn --config configs/unit_dpbn_1layer.yaml
        [--decoder aec] [--no-header]
    dpbn imgrecon --image face.pgm --keep 48 --range unit --out recon.pgm
    dpbn selftest [--out DIR]

Progress goes to standard error; eval and selftest tables go to standard output.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from experiments.config import load_config
from experiments.imgrecon import kind_from_name, run_imgrecon
from experiments.run import evaluate_model, run_experiment
from maxent.activations import DataRange
from maxent.errors import ConfigError, DpbnError, NumericalError
from maxent.selftest import run_selftest, write_tables
from models.gradients import Decoder
from report.metrics import eval_csv

logger = logging.getLogger("dpbn")

EXIT_OK = 0
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors become ConfigError (exit 1)."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpbn", description="MaxEnt PBN autoencoder experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train a network from a YAML or INI config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", default=None, help="overrides output.dir")

    p = sub.add_parser("eval", help="evaluate a saved model on the configured data")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--decoder", choices=[d.value for d in Decoder], default=None)
    p.add_argument("--no-header", action="store_true", help="print only the data row")

    p = sub.add_parser("imgrecon", help="linear vs MaxEnt reconstruction from DCT coefficients")
    p.add_argument("--image", required=True)
    p.add_argument("--keep", type=int, required=True)
    p.add_argument("--range", dest="data_range", choices=["unit", "positives"], default="unit")
    p.add_argument("--kind", choices=["ted", "exponential", "truncgauss"], default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("selftest", help="activation oracles and saddle round trips")
    p.add_argument("--out", default=None, help="directory for activation_<variant>.csv")
    return parser


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    artifacts = run_experiment(cfg, out_dir=args.out)
    last = artifacts.report.last("test")
    logger.info(
        "done: test mse %.6g, sampling efficiency %.3f; model %s",
        last["mse"],
        last["sampling_efficiency"],
        artifacts.model_path,
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    decoder = Decoder(args.decoder) if args.decoder else None
    values = evaluate_model(args.model, cfg, decoder)
    sys.stdout.write(eval_csv(values, header=not args.no_header))
    return EXIT_OK


def cmd_imgrecon(args) -> int:
    data_range = DataRange(args.data_range)
    kind = kind_from_name(args.kind, data_range)
    result = run_imgrecon(args.image, args.keep, data_range, args.out, kind)
    logger.info(
        "wrote %s (%d iterations, constraint error %.3g)",
        args.out,
        result.solve.iterations,
        result.constraint_error,
    )
    return EXIT_OK


def cmd_selftest(args) -> int:
    report = run_selftest()
    write_tables(report, out_dir=args.out, stream=sys.stdout)
    if not report.passed:
        for check in report.failures:
            sys.stderr.write(f"FAILED: {check.name} (worst {check.worst:.3g}; {check.detail})\n")
        return NumericalError.exit_code
    logger.info("selftest: %d checks passed in %.1fs", len(report.checks), report.seconds)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "imgrecon": cmd_imgrecon,
    "selftest": cmd_selftest,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run a subcommand and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except DpbnError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
