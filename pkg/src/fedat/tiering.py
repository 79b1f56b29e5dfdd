"""Latency profiling and static tier assignment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np


@dataclass(frozen=True)
class LatencyProfile:
    latency: dict[int, float]

    def __len__(self):
        return len(self.latency)


@dataclass
class TierTable:
    """Tiers indexed from 0 (fastest); ``counters[m]`` is the update count of tier m."""

    tiers: list[tuple[int, ...]]
    counters: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.counters:
            self.counters = [0] * len(self.tiers)
        if len(self.counters) != len(self.tiers):
            raise ValueError("one counter per tier")

    @property
    def num_tiers(self) -> int:
        return len(self.tiers)

    @property
    def total(self) -> int:
        return sum(self.counters)

    def tier_of(self, client_id: int) -> int:
        for m, members in enumerate(self.tiers):
            if client_id in members:
                return m
        raise KeyError(client_id)

    def record_update(self, m: int) -> "TierTable":
        if not 0 <= m < len(self.tiers):
            raise IndexError(f"tier index {m} out of range for {len(self.tiers)} tiers")
        self.counters[m] += 1
        return self

    def to_dict(self) -> dict:
        return {"tiers": [list(t) for t in self.tiers], "counters": list(self.counters)}


def profile(clients: Iterable[int], probe_rounds: int, seed: int,
            latency_fn: Callable[[int, int, int], float]) -> LatencyProfile:
    """Mean of ``probe_rounds`` simulated round latencies per client.

    ``latency_fn(client_id, round, seed)`` must be deterministic. Probe rounds use
    negative round indices so they never share draws with training rounds.
    """
    if probe_rounds < 1:
        raise ValueError("probe_rounds must be >= 1")
    out = {}
    for c in clients:
        draws = [latency_fn(c, -(r + 1), seed) for r in range(probe_rounds)]
        out[int(c)] = float(np.mean(draws))
    return LatencyProfile(out)


def partition(prof: LatencyProfile, num_tiers: int) -> TierTable:
    """Equal-size latency quantiles; remainder clients go one each to the slowest tiers."""
    n = len(prof)
    if not 1 <= num_tiers <= n:
        raise ValueError(f"need 1 <= tiers <= {n} clients, got {num_tiers}")
    order = sorted(prof.latency, key=lambda c: (prof.latency[c], c))
    base, rem = divmod(n, num_tiers)
    sizes = [base] * (num_tiers - rem) + [base + 1] * rem
    tiers, start = [], 0
    for size in sizes:
        tiers.append(tuple(sorted(order[start:start + size])))
        start += size
    return TierTable(tiers)
