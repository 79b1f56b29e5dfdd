"""Deterministic discrete-event simulation of FedAT and the FedAvg, TiFL and FedAsync baselines.

Local training is executed eagerly when a client is launched: its result and its
response latency are pure functions of (seed, client, participation index), so the
finish time is known up front and pushed onto the event queue. The server side is
a single serialization point that consumes events in (time, kind, subject, sequence)
order, which keeps every run replayable regardless of how many worker threads train
clients.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .codec import EncodedModel, compress, decompress
from .config import ExperimentConfig
from .data import FederatedDataset, generate
from .metrics import EventRecord, Evaluator, RunMetrics, population_variance
from .model import (STATIONARY, LocalObjective, ParamVector, SolverConfig, gamma_inexactness,
                    init_params, local_train)
from .protocol import (ClientUpdate, ServerState, TierRoundResult, async_mix,
                       data_weighted_average, fedat_on_tier_complete, weighted_average)
from .tiering import TierTable, partition, profile

log = logging.getLogger(__name__)

CLIENT_FINISH = "client-finish"
DROPOUT = "dropout"
TIER_COMPLETE = "tier-complete"
_KIND_RANK = {CLIENT_FINISH: 0, DROPOUT: 1, TIER_COMPLETE: 2}

# independent random streams
_DELAY, _SAMPLE, _LOCAL, _DROP, _BANDS, _TIFL, _INIT = range(1, 8)


def _zig(k: int) -> int:
    return 2 * k if k >= 0 else -2 * k - 1


def derive_seed(seed: int, *keys: int) -> int:
    ss = np.random.SeedSequence([_zig(int(seed)), *(_zig(int(k)) for k in keys)])
    return int(ss.generate_state(1, np.uint64)[0])


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))


@dataclass(frozen=True, order=True)
class SimEvent:
    time: float
    rank: int
    subject: int
    sequence: int
    kind: str = field(compare=False)


@dataclass(frozen=True)
class DelayModel:
    bands: tuple[tuple[float, float], ...]
    assignment: dict[int, int]

    @classmethod
    def even_split(cls, clients, bands, seed: int) -> "DelayModel":
        """Shuffle clients and cut them into ``len(bands)`` equal parts, one band each."""
        order = _rng(seed, _BANDS).permutation(sorted(clients))
        parts = np.array_split(order, len(bands))
        assignment = {int(c): i for i, part in enumerate(parts) for c in part}
        return cls(tuple(tuple(b) for b in bands), assignment)


def sample_round_delay(model: DelayModel, client_id: int, rnd: int, seed: int) -> float:
    lo, hi = model.bands[model.assignment[client_id]]
    if lo == hi:
        return float(lo)
    return float(lo + (hi - lo) * _rng(seed, _DELAY, client_id, rnd).random())


@dataclass(frozen=True)
class DropoutSchedule:
    drop_time: dict[int, float]

    @classmethod
    def draw(cls, clients, count: int, window: float, seed: int) -> "DropoutSchedule":
        if count == 0:
            return cls({})
        rng = _rng(seed, _DROP)
        victims = rng.choice(np.array(sorted(clients)), size=count, replace=False)
        times = rng.uniform(0.0, window, size=count)
        return cls({int(c): float(t) for c, t in zip(victims, times)})

    def alive(self, client_id: int, t: float) -> bool:
        return t < self.drop_time.get(client_id, math.inf)


@dataclass(frozen=True)
class LatencyModel:
    delays: DelayModel
    sizes: dict[int, int]
    local_epochs: int
    batch_size: int
    step_time: float
    bandwidth: float

    def compute_time(self, client_id: int) -> float:
        return self.step_time * self.sizes[client_id] * self.local_epochs / self.batch_size

    def __call__(self, client_id: int, rnd: int, seed: int, up_bytes: int = 0,
                 down_bytes: int = 0) -> float:
        return (self.compute_time(client_id) + sample_round_delay(self.delays, client_id, rnd, seed)
                + (up_bytes + down_bytes) / self.bandwidth)


def client_response_latency(model: LatencyModel, client_id: int, rnd: int, seed: int,
                            up_bytes: int = 0, down_bytes: int = 0) -> float:
    return model(client_id, rnd, seed, up_bytes, down_bytes)


def sample_clients(pool, size: int, seed: int, group: int, rnd: int) -> list[int]:
    """Uniform sample without replacement, keyed by (group, round) for replayability."""
    pool = sorted(pool)
    k = min(size, len(pool))
    idx = _rng(seed, _SAMPLE, group, rnd).choice(len(pool), size=k, replace=False)
    return sorted(pool[i] for i in idx)


@lru_cache(maxsize=8)
def _cached_dataset(args) -> FederatedDataset:
    return generate(*args)


def make_dataset(cfg: ExperimentConfig) -> FederatedDataset:
    return _cached_dataset((cfg.num_classes, cfg.feature_dim, cfg.samples_per_client,
                            cfg.num_clients, cfg.classes_per_client, cfg.seed, cfg.blob_scale,
                            cfg.size_skew))


@dataclass
class _Job:
    client_id: int
    rnd: int
    start_time: float
    finish: float
    n_k: int
    encoded: EncodedModel
    gamma: float
    global_round: int
    survived: bool


class Simulation:
    def __init__(self, cfg: ExperimentConfig, dataset: FederatedDataset | None = None,
                 trace: bool = False, keep_models: bool = False):
        self.cfg = cfg
        self.ds = dataset if dataset is not None else make_dataset(cfg)
        self.clients = [c.client_id for c in self.ds.clients]
        self.initial = init_params(cfg.model, self.ds.feature_dim, self.ds.num_classes,
                                   cfg.hidden, seed=derive_seed(cfg.seed, _INIT))
        self.solver = SolverConfig(cfg.learning_rate, cfg.local_epochs, cfg.batch_size,
                                   cfg.optimizer)
        self.delays = DelayModel.even_split(self.clients, cfg.delay_bands, cfg.seed)
        self.latency = LatencyModel(self.delays, {c.client_id: c.n_k for c in self.ds.clients},
                                    cfg.local_epochs, cfg.batch_size, cfg.step_time,
                                    cfg.bandwidth)
        self.dropout = DropoutSchedule.draw(self.clients, cfg.dropouts, cfg.time_budget / 2,
                                            cfg.seed)
        self.evaluator = Evaluator(self.ds)
        self.trace = [] if trace else None
        self.models: list[ParamVector] | None = [] if keep_models else None
        self.metrics = RunMetrics({"config": cfg.scenario_dict(), "dataset": self.ds.fingerprint(),
                                   "dropouts": {str(c): t for c, t in
                                                sorted(self.dropout.drop_time.items())}})
        self._queue: list[SimEvent] = []
        self._seq = 0
        self._participation = {c: 0 for c in self.clients}
        self._events = 0
        self._up_pending = self._down_pending = 0
        self._up_cum = self._down_cum = 0
        self._pool = None
        self.table: TierTable | None = None
        self.dormant: set[int] = set()

    # -- queue ---------------------------------------------------------------

    def _push(self, time: float, kind: str, subject: int) -> None:
        heapq.heappush(self._queue, SimEvent(time, _KIND_RANK[kind], subject, self._seq, kind))
        self._seq += 1

    def _pop(self) -> SimEvent | None:
        if not self._queue:
            return None
        ev = heapq.heappop(self._queue)
        if ev.time > self.cfg.time_budget:
            self._queue.clear()
            return None
        if self.trace is not None:
            self.trace.append({"time": ev.time, "kind": ev.kind, "subject": ev.subject})
        return ev

    # -- clients -------------------------------------------------------------

    def _train(self, client_id: int, rnd: int, start: ParamVector, objective: LocalObjective,
               start_enc: EncodedModel, now: float, global_round: int) -> _Job:
        shard = self.ds.client(client_id)
        seed = derive_seed(self.cfg.seed, _LOCAL, client_id, rnd)
        after = local_train(start, objective, shard.train, self.solver, seed)
        gamma = gamma_inexactness(start, after, objective, shard.train)
        enc = compress(after, self.cfg.precision)
        finish = now + self.latency(client_id, rnd, self.cfg.seed, enc.nbytes, start_enc.nbytes)
        survived = self.dropout.alive(client_id, finish)
        return _Job(client_id, rnd, now, finish, shard.n_k, enc, gamma, global_round, survived)

    def _launch(self, clients, start_enc: EncodedModel, now: float, lam: float,
                global_round: int = 0) -> list[_Job]:
        start = decompress(start_enc)
        objective = LocalObjective(lam, start)
        rounds = []
        for c in clients:
            rounds.append(self._participation[c])
            self._participation[c] += 1
        self._down_pending += len(clients) * start_enc.nbytes
        args = [(c, r, start, objective, start_enc, now, global_round)
                for c, r in zip(clients, rounds)]
        if self._pool is not None and len(args) > 1:
            jobs = list(self._pool.map(lambda a: self._train(*a), args))
        else:
            jobs = [self._train(*a) for a in args]
        for j in jobs:
            if j.survived:
                self._push(j.finish, CLIENT_FINISH, j.client_id)
            else:
                log.info("client %d dropped out during its round at t=%.3f",
                         j.client_id, self.dropout.drop_time[j.client_id])
        return jobs

    def _start_sync(self, group: int, members, now: float, bc: EncodedModel, lam: float,
                    rnd: int) -> list[_Job] | None:
        live = [c for c in members if self.dropout.alive(c, now)]
        if not live:
            if group not in self.dormant:
                log.warning("tier %d has no live clients at t=%.3f; marking dormant", group, now)
            self.dormant.add(group)
            return None
        chosen = sample_clients(live, self.cfg.sample_size, self.cfg.seed, group, rnd)
        jobs = self._launch(chosen, bc, now, lam)
        done = max(j.finish if j.survived else min(j.finish, self.dropout.drop_time[j.client_id])
                   for j in jobs)
        self._push(done, TIER_COMPLETE, group)
        return jobs

    # -- metrics -------------------------------------------------------------

    def _record(self, now: float, global_round: int, tier: int | None, model: ParamVector,
                jobs) -> None:
        self._events += 1
        if self.models is not None:
            self.models.append(model)
        if (self._events - 1) % self.cfg.eval_every:
            return
        alive = np.array([self.dropout.alive(c, now) for c in self.clients])
        acc, per_client = self.evaluator(model, alive)
        gammas = [j.gamma for j in jobs if j.gamma != STATIONARY]
        self._up_cum += self._up_pending
        self._down_cum += self._down_pending
        self.metrics.records.append(EventRecord(
            event=self._events - 1, sim_time=now, global_round=global_round, tier=tier,
            global_accuracy=acc, per_client_accuracy=tuple(per_client.tolist()),
            accuracy_variance=population_variance(per_client),
            uplink_bytes=self._up_pending, downlink_bytes=self._down_pending,
            uplink_bytes_cum=self._up_cum, downlink_bytes_cum=self._down_cum,
            gamma_mean=float(np.mean(gammas)) if gammas else None,
        ))
        self._up_pending = self._down_pending = 0

    # -- protocols -----------------------------------------------------------

    def _profile_tiers(self) -> TierTable:
        size = compress(self.initial, self.cfg.precision).nbytes
        prof = profile(self.clients, self.cfg.probe_rounds, self.cfg.seed,
                       lambda c, r, s: self.latency(c, r, s, size, size))
        self.table = partition(prof, self.cfg.tiers)
        self.metrics.header["tiers"] = self.table.to_dict()
        return self.table

    def _push_dropouts(self):
        for c, t in sorted(self.dropout.drop_time.items()):
            if t <= self.cfg.time_budget:
                self._push(t, DROPOUT, c)

    def _run_fedat(self):
        cfg = self.cfg
        table = self._profile_tiers()
        state = ServerState.fresh(self.initial, table, cfg.round_budget, cfg.aggregation)
        latest = compress(self.initial, cfg.precision)
        pending: dict[int, list[_Job]] = {}
        tier_round = [0] * table.num_tiers
        if state.exhausted:
            return

        def start(m, now, bc):
            jobs = self._start_sync(m, table.tiers[m], now, bc, cfg.lam, tier_round[m])
            tier_round[m] += 1
            if jobs is not None:
                pending[m] = jobs

        for m in range(table.num_tiers):
            start(m, 0.0, latest)
        while (ev := self._pop()) is not None:
            if ev.kind != TIER_COMPLETE:
                continue
            m = ev.subject
            jobs = pending.pop(m)
            survivors = [j for j in jobs if j.survived]
            if survivors:
                result = TierRoundResult(m, tuple(ClientUpdate(j.client_id, j.n_k, j.encoded)
                                                  for j in survivors), ev.time)
                self._up_pending += sum(j.encoded.nbytes for j in survivors)
                state, latest = fedat_on_tier_complete(state, result, cfg.precision)
                self._record(ev.time, state.t, m, weighted_average(state), survivors)
                if state.exhausted:
                    break
            start(m, ev.time, latest)
        self.metrics.header["tiers"] = table.to_dict()

    def _run_sync(self, tiered: bool):
        cfg = self.cfg
        table = self._profile_tiers() if tiered else None
        model = self.initial
        bc = compress(model, cfg.precision)
        t = launched = 0
        if cfg.round_budget == 0:
            return

        def start(now):
            nonlocal launched
            while True:
                if tiered:
                    options = [m for m in range(table.num_tiers) if m not in self.dormant]
                    if not options:
                        return None
                    m = options[int(_rng(cfg.seed, _TIFL, launched).integers(len(options)))]
                    members = table.tiers[m]
                else:
                    m, members = 0, self.clients
                jobs = self._start_sync(m, members, now, bc, 0.0, launched)
                launched += 1
                if jobs is not None or not tiered:
                    return jobs

        jobs = start(0.0)
        while jobs is not None and (ev := self._pop()) is not None:
            if ev.kind != TIER_COMPLETE:
                continue
            survivors = [j for j in jobs if j.survived]
            if survivors:
                self._up_pending += sum(j.encoded.nbytes for j in survivors)
                model = data_weighted_average([(j.client_id, j.n_k, decompress(j.encoded))
                                               for j in survivors])
                t += 1
                self._record(ev.time, t, ev.subject if tiered else None, model, survivors)
                if t >= cfg.round_budget:
                    break
                bc = compress(model, cfg.precision)
            jobs = start(ev.time)

    def _run_fedasync(self):
        cfg = self.cfg
        model = self.initial
        bc = compress(model, cfg.precision)
        t = 0
        if cfg.round_budget == 0:
            return
        running: dict[int, _Job] = {}
        for c in self.clients:
            (running[c],) = self._launch([c], bc, 0.0, 0.0, global_round=0)
        while (ev := self._pop()) is not None:
            if ev.kind != CLIENT_FINISH:
                continue
            job = running.pop(ev.subject)
            self._up_pending += job.encoded.nbytes
            model = async_mix(model, decompress(job.encoded), cfg.fedasync_alpha,
                              t - job.global_round, cfg.fedasync_staleness_exponent)
            t += 1
            self._record(ev.time, t, None, model, [job])
            if t >= cfg.round_budget:
                break
            bc = compress(model, cfg.precision)
            (running[ev.subject],) = self._launch([ev.subject], bc, ev.time, 0.0, global_round=t)

    def run(self) -> RunMetrics:
        self._push_dropouts()
        runner = {"fedat": self._run_fedat, "fedavg": lambda: self._run_sync(False),
                  "tifl": lambda: self._run_sync(True), "fedasync": self._run_fedasync}
        if self.cfg.workers > 1:
            with ThreadPoolExecutor(self.cfg.workers) as pool:
                self._pool = pool
                runner[self.cfg.method]()
            self._pool = None
        else:
            runner[self.cfg.method]()
        self.metrics.header["dormant_tiers"] = sorted(self.dormant)
        return self.metrics

    def dump_trace(self, path) -> None:
        with open(path, "w") as fh:
            for row in self.trace or ():
                fh.write(json.dumps(row) + "\n")


def run(cfg: ExperimentConfig, dataset: FederatedDataset | None = None) -> RunMetrics:
    return Simulation(cfg, dataset).run()


def run_fedat(cfg, dataset=None):
    return run(cfg.replace(method="fedat"), dataset)


def run_fedavg(cfg, dataset=None):
    return run(cfg.replace(method="fedavg"), dataset)


def run_tifl(cfg, dataset=None):
    return run(cfg.replace(method="tifl"), dataset)


def run_fedasync(cfg, dataset=None):
    return run(cfg.replace(method="fedasync"), dataset)
