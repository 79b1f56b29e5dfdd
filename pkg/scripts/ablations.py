"""Weighted vs uniform cross-tier aggregation, and the participation and precision sweeps.

    python scripts/ablations.py --seeds 0 1 2 3 4 --time-budget 600
"""

import argparse

from fedat.config import ExperimentConfig
from fedat.metrics import summarize
from fedat.sim import run


def final(cfg):
    return summarize(run(cfg))["final_smoothed_accuracy"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--time-budget", type=float, default=600.0)
    args = ap.parse_args()
    for seed in args.seeds:
        base = ExperimentConfig(time_budget=args.time_budget, seed=seed)
        print(f"seed {seed}")
        print(f"  aggregation  weighted={final(base):.4f} "
              f"uniform={final(base.replace(aggregation='uniform')):.4f}")
        precs = {p: final(base.replace(precision=p)) for p in (3, 4, 6, None)}
        print("  precision    " + " ".join(f"{p or 'lossless'}={a:.4f}" for p, a in precs.items()))
        for m in ("fedat", "fedavg"):
            full, few = (final(base.replace(method=m, sample_size=s)) for s in (10, 2))
            print(f"  {m:<11}  |S|=10 {full:.4f}  |S|=2 {few:.4f}  drop {full - few:+.4f}")


if __name__ == "__main__":
    main()
