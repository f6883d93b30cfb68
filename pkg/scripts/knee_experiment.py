"""Knee-analogue study: calibrate, adaptive runs in both arms, quality sweep.

    python scripts/knee_experiment.py --out out/knee --jobs 2
"""

import argparse
import sys
from pathlib import Path

from adaptscan.harness import experiments
from adaptscan.harness.config import load

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, default=ROOT / "configs" / "knee.json")
    p.add_argument("--out", type=Path, default=Path("out/knee"))
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--skip-sweep", action="store_true")
    args = p.parse_args(argv)

    cfg = load(args.config).with_seed(args.seed)
    table = experiments.cmd_calibrate(cfg, args.out, args.jobs)
    print("q_hat per R:", {R: round(q, 3) for R, q in table.entries.items()})
    experiments.cmd_run_adaptive(cfg, args.out, table, args.jobs)
    print((args.out / "aggregate.csv").read_text())
    if not args.skip_sweep:
        experiments.cmd_sweep_quality(cfg, args.out / "sweep", args.jobs)
        print((args.out / "sweep" / "sweep_quality.csv").read_text())
        print((args.out / "sweep" / "sweep_trend.csv").read_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
