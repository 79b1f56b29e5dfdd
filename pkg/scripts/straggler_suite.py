"""Run all four methods on the default straggler scenario and print a comparison table.

    python scripts/straggler_suite.py --seeds 0 1 2 --time-budget 1200 --out results/suite
"""

import argparse
from pathlib import Path

from fedat.cli import compare_rows, execute
from fedat.config import ExperimentConfig

METHODS = ("fedat", "fedavg", "tifl", "fedasync")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--time-budget", type=float, default=1200.0)
    ap.add_argument("--out", default="results/suite")
    args = ap.parse_args()
    out = Path(args.out)
    for seed in args.seeds:
        base = ExperimentConfig(time_budget=args.time_budget, seed=seed)
        fedat, _ = execute(base, out, f"fedat_s{seed}")
        target = round(0.9 * fedat["final_smoothed_accuracy"], 4)
        base = base.replace(targets=(target,))
        summaries = [execute(base.replace(method=m), out, f"{m}_s{seed}")[0] for m in METHODS]
        print(f"seed {seed}, target {target:g}")
        for row in compare_rows(summaries, f"{target:g}"):
            print("  " + "  ".join(f"{k}={v}" for k, v in row.items()))


if __name__ == "__main__":
    main()
