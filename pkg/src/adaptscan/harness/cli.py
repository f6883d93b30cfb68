"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

from adaptscan.conformal import CalibratorTable
from adaptscan.harness import experiments
from adaptscan.harness.config import ConfigError, ExperimentConfig, load

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {text}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"--jobs must be >= 1, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptscan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "calibrate": "fit per-R conformal scales on the calibration cohort",
        "run-adaptive": "run calibrated and uncalibrated adaptive scans on the test cohort",
        "sweep-quality": "image and segmentation quality per acceleration factor",
        "coverage-sim": "Monte-Carlo check of conformal coverage on a synthetic population",
        "make-cohort": "write calibration/test phantoms and schedule masks to disk",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="JSON config file (defaults when omitted)")
        p.add_argument("--seed", type=_u64, help="master seed, overrides the config")
        p.add_argument("--out", type=Path, help="output directory, overrides the config")
        p.add_argument("--jobs", type=_positive, default=1, help="worker processes (default 1)")
        if name == "run-adaptive":
            p.add_argument("--table", type=Path, help="calibrator.json from a previous calibrate run")
        if name == "sweep-quality":
            p.add_argument("--save-recons", action="store_true", help="persist reconstructions")
    return parser


def _run(args, cfg: ExperimentConfig, out: Path) -> None:
    if args.command == "calibrate":
        table = experiments.cmd_calibrate(cfg, out, args.jobs)
        for R, q in table.entries.items():
            print(f"R={R:g}\tq_hat={q}")
    elif args.command == "run-adaptive":
        table = None
        if args.table is not None:
            table = CalibratorTable.from_json(args.table.read_text())
        experiments.cmd_run_adaptive(cfg, out, table, args.jobs)
        print((out / "aggregate.csv").read_text(), end="")
    elif args.command == "sweep-quality":
        experiments.cmd_sweep_quality(cfg, out, args.jobs, args.save_recons)
        print((out / "sweep_quality.csv").read_text(), end="")
        print((out / "sweep_trend.csv").read_text(), end="")
    elif args.command == "coverage-sim":
        experiments.cmd_coverage_sim(cfg, out)
        print((out / "coverage_sim.csv").read_text(), end="")
    elif args.command == "make-cohort":
        experiments.cmd_make_cohort(cfg, out)
        print(f"cohort written to {out}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args.config) if args.config is not None else ExperimentConfig()
        cfg = cfg.with_seed(args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else Path(cfg.output_dir)
    try:
        _run(args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure maps to the runtime exit code
        traceback.print_exc(file=sys.stderr)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
