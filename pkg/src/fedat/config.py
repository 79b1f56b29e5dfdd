from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

METHODS = ("fedat", "fedavg", "tifl", "fedasync")
# thread count never changes a run, so it stays out of embedded configs
EXECUTION_ONLY = ("workers",)
DEFAULT_DELAY_BANDS = ((0.0, 0.0), (0.0, 5.0), (6.0, 10.0), (11.0, 15.0), (20.0, 30.0))


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "fedat"
    aggregation: str = "weighted"
    # data
    num_classes: int = 10
    feature_dim: int = 32
    num_clients: int = 100
    samples_per_client: int = 200
    classes_per_client: int = 2
    blob_scale: float = 3.5
    size_skew: float = 0.0
    # model and local solver
    model: str = "logistic"
    hidden: int = 32
    learning_rate: float = 0.001
    local_epochs: int = 3
    batch_size: int = 10
    optimizer: str = "adam"
    lam: float = 0.4
    # system
    tiers: int = 5
    delay_bands: tuple = DEFAULT_DELAY_BANDS
    dropouts: int = 10
    probe_rounds: int = 3
    step_time: float = 0.05
    bandwidth: float = 1.0e6
    # protocol
    precision: int | None = 4
    sample_size: int = 10
    fedasync_alpha: float = 0.6
    fedasync_staleness_exponent: float = 0.0
    tifl_policy: str = "uniform"
    round_budget: int = 1_000_000
    time_budget: float = 1200.0
    eval_every: int = 1
    targets: tuple = ()
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        bands = tuple((float(lo), float(hi)) for lo, hi in self.delay_bands)
        object.__setattr__(self, "delay_bands", bands)
        object.__setattr__(self, "targets", tuple(float(t) for t in self.targets))
        self.validate()

    def validate(self):
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        need(self.method in METHODS, "method", f"must be one of {METHODS}")
        need(self.aggregation in ("weighted", "uniform"), "aggregation", "weighted or uniform")
        need(self.model in ("logistic", "mlp"), "model", "logistic or mlp")
        need(self.optimizer in ("adam", "sgd"), "optimizer", "adam or sgd")
        need(self.tifl_policy == "uniform", "tifl_policy", "only 'uniform' is implemented")
        for name in ("num_classes", "feature_dim", "num_clients", "samples_per_client",
                     "classes_per_client", "hidden", "local_epochs", "batch_size", "tiers",
                     "probe_rounds", "sample_size", "eval_every", "workers"):
            need(getattr(self, name) >= 1, name, "must be >= 1")
        need(self.classes_per_client <= self.num_classes, "classes_per_client",
             "cannot exceed num_classes")
        need(self.tiers <= self.num_clients, "tiers", "cannot exceed num_clients")
        need(0 <= self.dropouts <= self.num_clients, "dropouts", "must be in [0, num_clients]")
        need(self.learning_rate > 0, "learning_rate", "must be positive")
        need(self.lam >= 0, "lam", "must be nonnegative")
        need(self.step_time >= 0, "step_time", "must be nonnegative")
        need(self.bandwidth > 0, "bandwidth", "must be positive")
        need(0 < self.fedasync_alpha <= 1, "fedasync_alpha", "must be in (0, 1]")
        need(self.fedasync_staleness_exponent >= 0, "fedasync_staleness_exponent", "must be >= 0")
        need(self.round_budget >= 0, "round_budget", "must be >= 0")
        need(self.time_budget > 0 and math.isfinite(self.time_budget), "time_budget",
             "must be positive and finite")
        need(self.precision is None or (isinstance(self.precision, int)
                                        and 1 <= self.precision <= 9),
             "precision", "integer in [1, 9] or null for the lossless codec")
        need(len(self.delay_bands) >= 1, "delay_bands", "need at least one band")
        for lo, hi in self.delay_bands:
            need(0 <= lo <= hi, "delay_bands", f"band ({lo}, {hi}) is not 0 <= low <= high")
        need(all(0 < t < 1 for t in self.targets), "targets", "accuracy targets lie in (0, 1)")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["delay_bands"] = [list(b) for b in self.delay_bands]
        d["targets"] = list(self.targets)
        return d

    def scenario_dict(self) -> dict:
        """``to_dict`` minus execution-only fields that cannot change results."""
        d = self.to_dict()
        for name in EXECUTION_ONLY:
            d.pop(name)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(name, "unknown field")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from None


def load_config(path) -> ExperimentConfig:
    """Read a config JSON, or recover the embedded config from a summary or CSV output."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    text = path.read_text()
    if path.suffix == ".csv":
        first = text.splitlines()[0] if text else ""
        if not first.startswith("# config: "):
            raise ConfigError("config", f"{path} has no embedded config line")
        doc = json.loads(first[len("# config: "):])
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON in {path}: {exc}") from None
        if "config" in doc and isinstance(doc["config"], dict):
            doc = doc["config"]
    return ExperimentConfig.from_dict(doc)
