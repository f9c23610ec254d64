from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .cli import cmd_compare, cmd_deconv, cmd_simulate
from .config import ALGORITHMS, DICTIONARY_KINDS, PHANTOM_KINDS, RunConfig, apply_overrides, load_config
from .logging_utils import configure_logging, get_logger
from .preflight import run_preflight_checks

EXIT_OK = 0
EXIT_RUNTIME_ERROR = 1
EXIT_CONFIG_ERROR = 2

_CONFIG_ERRORS = (ValueError, TypeError, FileNotFoundError, PermissionError, yaml.YAMLError)


def _run_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=Path, help="YAML configuration file")
    parent.add_argument("--out", type=Path, help="Output directory")
    parent.add_argument("--seed", type=int, help="Seed for the phantom and the Poisson draws")
    parent.add_argument("--phantom", choices=PHANTOM_KINDS, help="Ground-truth phantom kind")
    parent.add_argument(
        "--psf",
        help="PSF spec (gaussian:sigma=S,size=K | box:size=K | delta) or a PSF matrix file",
    )
    parent.add_argument("--dictionary", choices=DICTIONARY_KINDS, help="Sparsifying dictionary")
    parent.add_argument("--levels", type=int, help="Haar decomposition depth")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Sparse Poisson image deconvolution")
    commands = parser.add_subparsers(dest="command", required=True)
    run_options = _run_options()

    commands.add_parser(
        "simulate", parents=[run_options], help="Write a phantom, its PSF and Poisson counts"
    )

    deconv = commands.add_parser("deconv", parents=[run_options], help="Reconstruct an image from counts")
    deconv.add_argument("--gamma", type=float, help="Regularisation weight (default 1%% of the peak count)")
    deconv.add_argument("--alg", choices=ALGORITHMS, help="Solver to run")
    deconv.add_argument("--iters", type=int, help="Number of iterations")
    deconv.add_argument("--mu", type=float, help="Proximal scale of the primal scheme")
    deconv.add_argument("--sigma", type=float, help="Dual step of the primal-dual scheme")
    deconv.add_argument("--tau", type=float, help="Primal step of the primal-dual scheme")
    deconv.add_argument("--counts", type=Path, help="Counts file (default <out>/counts.txt)")
    deconv.add_argument("--truth", type=Path, help="Ground-truth file for the MAE")
    deconv.add_argument(
        "--parallel",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Run both solvers concurrently",
    )
    deconv.add_argument(
        "--early-stop",
        dest="early_stop",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Stop once the objective stalls",
    )

    compare = commands.add_parser("compare", help="Merge two solver traces")
    compare.add_argument("trace_a", type=Path)
    compare.add_argument("trace_b", type=Path)
    compare.add_argument("--config", type=Path, help="YAML configuration file")
    compare.add_argument("--out", type=Path, help="Output directory")
    return parser


def _load(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    merged = apply_overrides(config, args)
    if not args.config:
        merged.output.directory = str(Path(merged.output.directory).expanduser().resolve())
    return merged


def run(args: argparse.Namespace) -> None:
    config = _load(args)
    configure_logging(config.logging)
    logger = get_logger(__name__)
    traces = (args.trace_a, args.trace_b) if args.command == "compare" else ()
    run_preflight_checks(config, args.command, traces)

    if args.command == "simulate":
        output = cmd_simulate(config)
        print(
            f"counts: total {output.stats['total']}, max {output.stats['max']}, "
            f"mean {output.stats['mean']:.4f}, zeros {output.stats['zeros']}"
        )
    elif args.command == "deconv":
        report = cmd_deconv(config)
        for name, result in report.results.items():
            print(f"{name}: objective {result.solution.final_objective!r} after {result.solution.iterations} iterations")
        if report.discrepancy is not None:
            print(f"relative discrepancy: {report.discrepancy:.3e}")
    else:
        report = cmd_compare(args.trace_a, args.trace_b, config.output_dir)
        print("\n".join(report.lines()))
    logger.debug("%s finished", args.command)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG_ERROR

    logger = get_logger(__name__)
    try:
        run(args)
    except _CONFIG_ERRORS as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except KeyboardInterrupt:
        logger.info("Received keyboard interrupt. Shutting down cleanly.")
        return EXIT_RUNTIME_ERROR
    except Exception:
        logger.exception("%s failed unexpectedly.", args.command)
        return EXIT_RUNTIME_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
