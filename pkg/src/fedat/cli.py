"""Command-line entry point: ``fedat run | compare | sweep | encode-bench``.

Exit status is 0 on success, 1 for configuration errors and 2 for failures during a run.
Outputs go to ``--out``, else ``$FEDAT_OUTPUT_DIR``, else ``./results``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .codec import compression_ratio
from .config import ConfigError, ExperimentConfig, load_config
from .metrics import CSV_COLUMNS, summarize, write_csv
from .model import ParamVector
from .sim import Simulation

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
OUTPUT_ENV = "FEDAT_OUTPUT_DIR"
SWEEP_AXES = {"classes_per_client": "classes_per_client", "participation": "sample_size",
              "precision": "precision"}

log = logging.getLogger("fedat")


def output_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV) or "results")


def _precision(text: str):
    return None if text.lower() in ("lossless", "none") else int(text)


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config JSON, or a summary/CSV with an embedded config")
    p.add_argument("--method", choices=["fedat", "fedavg", "tifl", "fedasync"])
    p.add_argument("--aggregation", choices=["weighted", "uniform"])
    p.add_argument("--tiers", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--codec", choices=["polyline", "lossless"],
                   help="lossless sends raw float64 payloads (debug)")
    p.add_argument("--precision", type=int)
    p.add_argument("--sample-size", type=int)
    p.add_argument("--classes-per-client", type=int)
    p.add_argument("--clients", dest="num_clients", type=int)
    p.add_argument("--dropouts", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--time-budget", type=float)
    p.add_argument("--round-budget", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--target", dest="targets", type=float, action="append",
                   help="accuracy target for time/bytes-to-target (repeatable)")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./results)")
    p.add_argument("--name", help="output file stem (default <method>_s<seed>)")


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    for name in ("method", "aggregation", "tiers", "lam", "precision", "sample_size",
                 "classes_per_client", "num_clients", "dropouts", "learning_rate", "time_budget",
                 "round_budget", "eval_every", "workers", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    if args.targets:
        changes["targets"] = tuple(args.targets)
    if args.codec == "lossless":
        changes["precision"] = None
    elif args.codec == "polyline" and "precision" not in changes and cfg.precision is None:
        changes["precision"] = 4
    return cfg.replace(**changes) if changes else cfg


def execute(cfg: ExperimentConfig, out: Path, name: str) -> tuple[dict, Exception | None]:
    """Run one scenario and write ``name.csv`` and ``name.json``; partial output on failure."""
    out.mkdir(parents=True, exist_ok=True)
    sim = Simulation(cfg)
    error = None
    try:
        sim.run()
    except (FloatingPointError, ArithmeticError, ValueError) as exc:
        error = exc
    stream = sim.metrics
    with open(out / f"{name}.csv", "w") as fh:
        write_csv(stream, fh)
    summary = {
        "method": cfg.method, "seed": cfg.seed, "dataset": stream.header.get("dataset"),
        "config": stream.header["config"], "tiers": stream.header.get("tiers"),
        "dormant_tiers": stream.header.get("dormant_tiers", []),
        "complete": error is None, "error": None if error is None else str(error),
        **summarize(stream, cfg.targets),
    }
    (out / f"{name}.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary, error


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    name = args.name or f"{cfg.method}_s{cfg.seed}"
    summary, error = execute(cfg, output_dir(args.out), name)
    if error is not None:
        print(f"error: run failed: {error} (partial outputs written)", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{name}: events={summary['events']} "
          f"final_smoothed_accuracy={summary['final_smoothed_accuracy']}")
    return EXIT_OK


def _cell(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.4f}"
    return str(x)


def compare_rows(summaries: list[dict], target: str | None) -> list[dict]:
    prints = {s.get("dataset") for s in summaries}
    if len(prints) != 1:
        raise ConfigError("dataset", f"summaries use different datasets: {sorted(map(str, prints))}")
    ref = next((s for s in summaries if s["method"] == "fedat"), summaries[0])
    ref_var = ref["final_smoothed_variance"]
    rows = []
    for s in summaries:
        var = s["final_smoothed_variance"]
        hit = s["targets"].get(target, {}) if target else {}
        up, down = hit.get("uplink_bytes"), hit.get("downlink_bytes")
        rows.append({
            "method": s["method"], "seed": s["seed"],
            "best_accuracy": s["best_smoothed_accuracy"],
            "final_accuracy": s["final_smoothed_accuracy"],
            "variance": var,
            "norm_variance": var / ref_var if var is not None and ref_var else None,
            "time_to_target": hit.get("time"),
            "bytes_to_target": None if up is None else up + down,
        })
    return rows


def cmd_compare(args) -> int:
    summaries = []
    for path in args.summaries:
        try:
            summaries.append(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("summaries", f"cannot read {path}: {exc}") from None
    if len(summaries) < 2:
        raise ConfigError("summaries", "need at least two summaries")
    target = None
    if args.target is not None:
        target = f"{args.target:g}"
    else:
        common = set.intersection(*(set(s["targets"]) for s in summaries))
        target = min(common, key=float) if common else None
    rows = compare_rows(summaries, target)
    cols = list(rows[0])
    widths = [max(len(c), *(len(_cell(r[c])) for r in rows)) for c in cols]
    if target:
        print(f"target accuracy {target}")
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for r in rows:
        print("  ".join(_cell(r[c]).ljust(w) for c, w in zip(cols, widths)))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            w.writerows([[_cell(r[c]) for c in cols] for r in rows])
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = resolve_config(args)
    field_name = SWEEP_AXES[args.axis]
    values = [_precision(v) if field_name == "precision" else int(v)
              for v in args.values.split(",") if v]
    if not values:
        raise ConfigError("values", "sweep needs at least one value")
    out = output_dir(args.out)
    stem = args.name or f"sweep_{args.axis}_{base.method}_s{base.seed}"
    failures = []
    combined = out / f"{stem}.csv"
    out.mkdir(parents=True, exist_ok=True)
    with open(combined, "w") as fh:
        fh.write("# config: " + json.dumps(base.scenario_dict(), sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "value", *CSV_COLUMNS])
        for v in values:
            label = "lossless" if v is None else str(v)
            try:
                cfg = base.replace(**{field_name: v})
                summary, error = execute(cfg, out, f"{stem}_{label}")
            except ConfigError as exc:
                failures.append((label, exc))
                continue
            if error is not None:
                failures.append((label, error))
            with open(out / f"{stem}_{label}.csv") as run_fh:
                rows = list(csv.reader(run_fh.readlines()[1:]))
            for row in rows[1:]:
                w.writerow([args.axis, label, *row])
            print(f"{args.axis}={label}: final_smoothed_accuracy="
                  f"{summary['final_smoothed_accuracy']}")
    for label, exc in failures:
        print(f"error: {args.axis}={label} failed: {exc}", file=sys.stderr)
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_encode_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    weights = ParamVector.from_layers([rng.normal(0.0, args.sigma, args.n)])
    for p in args.precision:
        print(f"precision {p}: ratio {compression_ratio(weights, p):.3f} vs 8-byte floats")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedat", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    _add_overrides(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="tabulate summary JSONs")
    p.add_argument("summaries", nargs="+")
    p.add_argument("--target", type=float)
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="run a base config over one axis")
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma separated, e.g. 3,4,6,lossless")
    _add_overrides(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("encode-bench", help="codec compression ratio on Gaussian weights")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--precision", type=int, nargs="+", default=[3, 4, 5, 6])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_encode_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
