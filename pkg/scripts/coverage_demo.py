"""Split-conformal coverage over a grid of calibration sizes and error rates.

    python scripts/coverage_demo.py --trials 2000
"""

import argparse
import sys
from pathlib import Path

from adaptscan.harness import experiments
from adaptscan.harness.config import CoverageSection, ExperimentConfig


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("out/coverage"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--n-calib", type=int, nargs="+", default=[3, 5, 9, 10, 20, 50, 100])
    p.add_argument("--alpha", type=float, nargs="+", default=[0.1, 0.2, 0.5])
    args = p.parse_args(argv)

    cfg = ExperimentConfig(
        seed=args.seed,
        coverage=CoverageSection(n_calib_values=args.n_calib, alphas=args.alpha, trials=args.trials),
    )
    experiments.cmd_coverage_sim(cfg, args.out)
    print((args.out / "coverage_sim.csv").read_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
