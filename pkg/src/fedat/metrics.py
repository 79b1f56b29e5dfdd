"""Per-event run records, robustness metrics and communication accounting."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import FederatedDataset, global_test_set
from .model import ParamVector, predict

SMOOTHING_WINDOW = 40

CSV_COLUMNS = (
    "event", "sim_time", "global_round", "tier", "global_accuracy", "accuracy_variance",
    "uplink_bytes", "downlink_bytes", "uplink_bytes_cum", "downlink_bytes_cum",
    "gamma_mean", "per_client_accuracy",
)


@dataclass(frozen=True)
class EventRecord:
    event: int
    sim_time: float
    global_round: int
    tier: int | None
    global_accuracy: float
    per_client_accuracy: tuple[float, ...]  # NaN for clients that have dropped out
    accuracy_variance: float
    uplink_bytes: int
    downlink_bytes: int
    uplink_bytes_cum: int
    downlink_bytes_cum: int
    gamma_mean: float | None

    @property
    def total_bytes_cum(self) -> int:
        return self.uplink_bytes_cum + self.downlink_bytes_cum


@dataclass
class RunMetrics:
    header: dict = field(default_factory=dict)
    records: list[EventRecord] = field(default_factory=list)

    def accuracies(self) -> np.ndarray:
        return np.array([r.global_accuracy for r in self.records])

    def times(self) -> np.ndarray:
        return np.array([r.sim_time for r in self.records])


def population_variance(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return 0.0
    return float(np.mean((v - v.mean()) ** 2))


class Evaluator:
    """Scores a model on every client's test split with one forward pass."""

    def __init__(self, ds: FederatedDataset):
        self.test = global_test_set(ds)
        sizes = [len(c.test) for c in ds.clients]
        self.offsets = np.concatenate(([0], np.cumsum(sizes)))
        self.num_clients = ds.num_clients

    def __call__(self, model: ParamVector, alive=None) -> tuple[float, np.ndarray]:
        hits = (predict(model, self.test.x) == self.test.y).astype(np.float64)
        csum = np.concatenate(([0.0], np.cumsum(hits)))
        counts = np.diff(self.offsets)
        per_client = (csum[self.offsets[1:]] - csum[self.offsets[:-1]]) / counts
        if alive is not None:
            per_client = np.where(alive, per_client, np.nan)
        return float(hits.mean()), per_client


def evaluate(model: ParamVector, ds: FederatedDataset) -> tuple[float, np.ndarray]:
    """Global accuracy on the union test set and per-client test accuracy."""
    return Evaluator(ds)(model)


def smoothed(values, window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing mean over the last ``window`` entries (fewer at the start)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return v
    c = np.concatenate(([0.0], np.cumsum(v)))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def _first_crossing(stream: RunMetrics, target: float, window: int) -> int | None:
    if not 0 < target < 1:
        raise ValueError("target must lie in (0, 1)")
    if not stream.records:
        return None
    hit = np.flatnonzero(smoothed(stream.accuracies(), window) >= target)
    return int(hit[0]) if hit.size else None


def time_to_accuracy(stream: RunMetrics, target: float,
                     window: int = SMOOTHING_WINDOW) -> float | None:
    """Simulated seconds until the smoothed accuracy first reaches ``target``; None if never."""
    i = _first_crossing(stream, target, window)
    return None if i is None else stream.records[i].sim_time


def bytes_to_accuracy(stream: RunMetrics, target: float,
                      window: int = SMOOTHING_WINDOW) -> tuple[int, int] | None:
    i = _first_crossing(stream, target, window)
    if i is None:
        return None
    r = stream.records[i]
    return r.uplink_bytes_cum, r.downlink_bytes_cum


def final_smoothed(values, window: int = SMOOTHING_WINDOW) -> float:
    s = smoothed(values, window)
    return float(s[-1]) if s.size else float("nan")


def summarize(stream: RunMetrics, targets=()) -> dict:
    recs = stream.records
    acc = stream.accuracies()
    var = np.array([r.accuracy_variance for r in recs])
    gam = [r.gamma_mean for r in recs if r.gamma_mean is not None]
    out = {
        "events": len(recs),
        "final_accuracy": float(acc[-1]) if recs else None,
        "final_smoothed_accuracy": final_smoothed(acc) if recs else None,
        "best_smoothed_accuracy": float(smoothed(acc).max()) if recs else None,
        "final_smoothed_variance": final_smoothed(var) if recs else None,
        "mean_variance": float(var.mean()) if recs else None,
        "final_sim_time": recs[-1].sim_time if recs else 0.0,
        "uplink_bytes": recs[-1].uplink_bytes_cum if recs else 0,
        "downlink_bytes": recs[-1].downlink_bytes_cum if recs else 0,
        "gamma_mean": float(np.mean(gam)) if gam else None,
        "targets": {},
    }
    for t in targets:
        b = bytes_to_accuracy(stream, t)
        out["targets"][f"{t:g}"] = {
            "time": time_to_accuracy(stream, t),
            "uplink_bytes": None if b is None else b[0],
            "downlink_bytes": None if b is None else b[1],
        }
    return out


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(stream: RunMetrics, fh) -> None:
    fh.write("# config: " + json.dumps(stream.header.get("config", {}), sort_keys=True) + "\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in stream.records:
        w.writerow([
            r.event, _fmt(r.sim_time), r.global_round, _fmt(r.tier), _fmt(r.global_accuracy),
            _fmt(r.accuracy_variance), r.uplink_bytes, r.downlink_bytes, r.uplink_bytes_cum,
            r.downlink_bytes_cum, _fmt(r.gamma_mean),
            ";".join("nan" if math.isnan(a) else repr(float(a)) for a in r.per_client_accuracy),
        ])


def csv_text(stream: RunMetrics) -> str:
    buf = io.StringIO()
    write_csv(stream, buf)
    return buf.getvalue()


def read_csv(path) -> RunMetrics:
    with open(path) as fh:
        first = fh.readline()
        header = {"config": json.loads(first[len("# config: "):])} if first.startswith("#") else {}
        if not header:
            fh.seek(0)
        records = []
        for row in csv.DictReader(fh):
            records.append(EventRecord(
                event=int(row["event"]), sim_time=float(row["sim_time"]),
                global_round=int(row["global_round"]),
                tier=int(row["tier"]) if row["tier"] else None,
                global_accuracy=float(row["global_accuracy"]),
                per_client_accuracy=tuple(float(a) for a in row["per_client_accuracy"].split(";")
                                          if a),
                accuracy_variance=float(row["accuracy_variance"]),
                uplink_bytes=int(row["uplink_bytes"]), downlink_bytes=int(row["downlink_bytes"]),
                uplink_bytes_cum=int(row["uplink_bytes_cum"]),
                downlink_bytes_cum=int(row["downlink_bytes_cum"]),
                gamma_mean=float(row["gamma_mean"]) if row["gamma_mean"] else None,
            ))
    return RunMetrics(header, records)
