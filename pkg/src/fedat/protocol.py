"""Server-side aggregation and the FedAT state machine.

The event loop that drives these lives in :mod:`fedat.sim`; everything here is
synchronous, deterministic arithmetic on parameter vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence


from .codec import EncodedModel, compress, decompress
from .model import ParamVector, ShapeMismatchError
from .tiering import TierTable

AGGREGATION_MODES = ("weighted", "uniform")


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    n_k: int
    encoded: EncodedModel


@dataclass(frozen=True)
class TierRoundResult:
    tier: int
    updates: tuple[ClientUpdate, ...]
    completion_time: float = 0.0

    def __post_init__(self):
        if not self.updates:
            raise ValueError("a tier round needs at least one client update")


@dataclass
class ServerState:
    per_tier_models: list[ParamVector]
    tier_table: TierTable
    initial_model: ParamVector
    round_budget: int
    aggregation: str = "weighted"
    t: int = 0

    def __post_init__(self):
        if self.aggregation not in AGGREGATION_MODES:
            raise ValueError(f"aggregation must be one of {AGGREGATION_MODES}")
        if len(self.per_tier_models) != self.tier_table.num_tiers:
            raise ValueError("one model per tier")
        for w in self.per_tier_models:
            w.check_compatible(self.initial_model)

    @classmethod
    def fresh(cls, initial: ParamVector, table: TierTable, round_budget: int,
              aggregation: str = "weighted") -> "ServerState":
        return cls([initial] * table.num_tiers, table, initial, round_budget, aggregation)

    @property
    def exhausted(self) -> bool:
        return self.t >= self.round_budget


def tier_coefficients(counters: Sequence[int], mode: str = "weighted") -> list[Fraction]:
    """Exact cross-tier weights. Weighted mode gives tier m the count of tier M-1-m."""
    M = len(counters)
    if mode == "uniform":
        return [Fraction(1, M)] * M
    total = sum(counters)
    if total == 0:
        raise ProtocolError("no tier updates recorded")
    return [Fraction(counters[M - 1 - m], total) for m in range(M)]


def _combine(models: Sequence[ParamVector], coefs: Sequence[float]) -> ParamVector:
    acc = coefs[0] * models[0].values
    for c, w in zip(coefs[1:], models[1:]):
        acc = acc + c * w.values
    return models[0].with_values(acc)


def weighted_average(state: ServerState) -> ParamVector:
    """Global model from the per-tier models; ``initial_model`` before any update."""
    if state.t == 0:
        return state.initial_model
    if state.tier_table.total == 0:
        raise ProtocolError(f"global round {state.t} but no tier updates recorded")
    coefs = [float(c) for c in tier_coefficients(state.tier_table.counters, state.aggregation)]
    return _combine(state.per_tier_models, coefs)


def data_weighted_average(models: Sequence[tuple[int, int, ParamVector]]) -> ParamVector:
    """sum_k (n_k / N_c) w_k over ``(client_id, n_k, w_k)``, summed in client_id order."""
    if not models:
        raise ValueError("nothing to aggregate")
    models = sorted(models, key=lambda m: m[0])
    ref = models[0][2]
    for cid, _, w in models[1:]:
        if w.shapes != ref.shapes:
            raise ShapeMismatchError(f"client {cid} sent shapes {w.shapes}, expected {ref.shapes}")
    n_c = sum(n for _, n, _ in models)
    return _combine([w for _, _, w in models], [n / n_c for _, n, _ in models])


def intra_tier_aggregate(result: TierRoundResult) -> ParamVector:
    return data_weighted_average([(u.client_id, u.n_k, decompress(u.encoded))
                                  for u in result.updates])


def fedat_on_tier_complete(state: ServerState, result: TierRoundResult,
                           precision: int | None) -> tuple[ServerState, EncodedModel | None]:
    """Apply one tier completion; returns the compressed global model to send back.

    Once the round budget is spent the state is left untouched and the broadcast is None.
    """
    if state.exhausted:
        return state, None
    m = result.tier
    if any(u.client_id not in state.tier_table.tiers[m] for u in result.updates):
        raise ProtocolError(f"update from a client outside tier {m}")
    state.per_tier_models[m] = intra_tier_aggregate(result)
    state.tier_table.record_update(m)
    state.t += 1
    return state, compress(weighted_average(state), precision)


def async_mix(current: ParamVector, incoming: ParamVector, alpha: float,
              staleness: int = 0, staleness_exponent: float = 0.0) -> ParamVector:
    """FedAsync server step ``(1 - a) w + a w_k`` with optional polynomial staleness decay."""
    current.check_compatible(incoming)
    a = alpha * (staleness + 1) ** (-staleness_exponent) if staleness_exponent else alpha
    if a == 1.0:
        return incoming
    return current.with_values((1.0 - a) * current.values + a * incoming.values)
