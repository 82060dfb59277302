"""Deterministic virtual-time simulation of FedAvg and Overlap-FedAvg.

Time is kept in integer nanosecond ticks so event ordering and round-time
arithmetic are exact and platform independent.  Each client has one compute
track (local SGD iterations) and one communication track (upload, then
download).  Rounds are barrier-synchronised: a round closes once every
participating client has picked up the new global model.

FedAvg: train E iterations, upload, wait for the server to average, download.

Overlap: at round start the communication track uploads the weights the
client produced during the previous round while the compute track keeps
training.  The server runs :func:`flsim.aggregation.phi` once every upload has
arrived and pushes the result back.  A client splices the new global model in
at the first iteration boundary after it lands; if it hits ``E_max``
iterations first it idles until the download arrives.  Every upload the
server consumes was therefore trained from the global model one round older
than the server's current one.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from . import aggregation as agg
from . import data as data_mod
from .config import ExperimentConfig
from .metrics import MetricsLog, RoundMetrics
from .models import Batch, ModelSpec, accuracy, init_params, local_sgd_step, loss

TICKS_PER_SECOND = 10 ** 9
BYTES_PER_PARAM = 4  # payloads travel as 32-bit floats


def to_ticks(seconds: float) -> int:
    return int(round(seconds * TICKS_PER_SECOND))


def to_seconds(ticks: int) -> float:
    return ticks / TICKS_PER_SECOND


class EventKind(IntEnum):
    # tie-break order at equal ticks: a download landing exactly on an
    # iteration boundary is visible at that boundary
    DOWNLOAD_ARRIVE = 0
    UPLOAD_ARRIVE = 1
    ITER_COMPLETE = 2
    ROUND_CLOSE = 3


class SimEvent(NamedTuple):
    tick: int
    kind: EventKind
    client_id: int

    @property
    def virtual_time(self) -> float:
        return to_seconds(self.tick)


class EventQueue:
    """Min-heap of events ordered by (tick, kind, client_id)."""

    def __init__(self):
        self._heap: list[SimEvent] = []
        self.now = 0

    def push(self, tick: int, kind: EventKind, client_id: int = -1) -> None:
        if tick < self.now:
            raise ValueError(f"event scheduled in the past ({tick} < {self.now})")
        heapq.heappush(self._heap, SimEvent(tick, kind, client_id))

    def pop(self) -> SimEvent:
        ev = heapq.heappop(self._heap)
        assert ev.tick >= self.now
        self.now = ev.tick
        return ev

    def __len__(self) -> int:
        return len(self._heap)


@dataclass
class NetworkModel:
    latency: float = 0.0
    bandwidth: float = math.inf  # bytes per second
    jitter_frac: float = 0.0
    jitter_seed: int = 0

    def __post_init__(self):
        if not self.latency >= 0:
            raise ValueError("latency must be >= 0")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")
        if not 0 <= self.jitter_frac < 1:
            raise ValueError("jitter_frac must lie in [0, 1)")
        self._rng = np.random.default_rng(self.jitter_seed)

    def transit_time(self, size: int) -> float:
        """Seconds to move ``size`` bytes one way."""
        base = self.latency + (0.0 if math.isinf(self.bandwidth) else size / self.bandwidth)
        if self.jitter_frac == 0:
            return base
        return base * self._rng.uniform(1 - self.jitter_frac, 1 + self.jitter_frac)


def payload_bytes(spec: ModelSpec) -> int:
    return BYTES_PER_PARAM * spec.param_count


def adaptive_interval(t_train: float, t_comm: float, E_max: int) -> int:
    """Local iterations that fit inside one round trip, clamped to [1, E_max]."""
    if not t_train > 0 or not t_comm >= 0 or E_max < 1:
        raise ValueError("need t_train > 0, t_comm >= 0 and E_max >= 1")
    return min(E_max, max(1, math.ceil(t_comm / t_train)))


def learning_rate(eta0: float, decay: float, r: int) -> float:
    return eta0 / (1.0 + decay * r)


class _BatchStream:
    """Seeded per-epoch shuffle over one client's shard."""

    def __init__(self, train: data_mod.Dataset, indices: np.ndarray,
                 batch_size: int | None, seed):
        self.train = train
        self.indices = indices
        self.size = batch_size
        self.rng = np.random.default_rng(seed)
        whole = batch_size is None or batch_size >= len(indices)
        self.full = train.batch(indices) if whole else None
        self.order = np.empty(0, dtype=np.int64)
        self.pos = 0

    def next(self) -> Batch:
        if self.full is not None:
            return self.full
        if self.pos + self.size > len(self.order):
            self.order = self.rng.permutation(self.indices)
            self.pos = 0
        chunk = self.order[self.pos:self.pos + self.size]
        self.pos += self.size
        return self.train.batch(chunk)


class Problem:
    """Everything a run needs that does not depend on the strategy."""

    def __init__(self, config: ExperimentConfig):
        c = config
        d = c.dataset
        if d.kind == "idx":
            full = data_mod.load_idx(d.images, d.labels)
        elif d.kind == "synthetic-regression":
            full = data_mod.generate_regression(c.seeds.data, d.n_samples, d.input_dim,
                                                d.output_dim, d.noise)
        else:
            full = data_mod.generate_classification(c.seeds.data, d.n_samples, d.input_dim,
                                                    d.class_count, d.cluster_spread)
        self.train, test = data_mod.train_test_split(full, d.test_fraction, c.seeds.data)
        self.shards = data_mod.partition_noniid(self.train, c.partition.n_clients,
                                                c.partition.label_alpha,
                                                c.partition.size_alpha, c.seeds.partition)
        out_dim = full.class_count if full.class_count is not None else full.targets.shape[1]
        self.spec = ModelSpec(c.model.kind, full.inputs.shape[1], out_dim,
                              c.model.hidden_dim, c.model.loss, c.model.bias)
        self.w0 = init_params(self.spec, c.seeds.init)
        self.train_batch = self.train.batch()
        self.eval_batch = test.batch() if test is not None else self.train_batch
        self.streams = [
            _BatchStream(self.train, s.indices, c.optimizer.batch_size,
                         [c.seeds.sampling, 1, s.client_id])
            for s in self.shards
        ]
        per = c.compute.t_train_per_client or [c.compute.t_train] * len(self.shards)
        self.t_train = [to_ticks(t) for t in per]
        bw = math.inf if c.network.bandwidth is None else c.network.bandwidth
        self.network = NetworkModel(c.network.latency, bw, c.network.jitter_frac, c.seeds.jitter)
        self.payload = payload_bytes(self.spec)

    def evaluate(self, w) -> tuple[float, float]:
        train_loss = loss(self.spec, w, self.train_batch)
        if self.spec.classification:
            return train_loss, accuracy(self.spec, w, self.eval_batch)
        return train_loss, loss(self.spec, w, self.eval_batch)

    def transits(self, clients) -> dict[int, tuple[int, int]]:
        # fixed draw order: ascending client id, upload before download
        return {k: (to_ticks(self.network.transit_time(self.payload)),
                    to_ticks(self.network.transit_time(self.payload)))
                for k in clients}


def _new_log(config: ExperimentConfig) -> MetricsLog:
    return MetricsLog(config.fingerprint(), config.problem_fingerprint(), config.strategy,
                      config=config.to_dict(), weights=[])


def _record(log, problem, r, start, close, w, E, busy):
    span = close - start
    train_loss, metric = problem.evaluate(w)
    util = float(np.mean([busy[k] / span for k in E]))
    log.append(RoundMetrics(r, to_seconds(close), to_seconds(span), train_loss, metric,
                            [E[k] for k in sorted(E)], util))
    log.weights.append(w)


def run_fedavg(config: ExperimentConfig, trace: list | None = None) -> MetricsLog:
    """Synchronous FedAvg: fixed E local iterations per round."""
    c = config.validate()
    problem = Problem(c)
    o = c.optimizer
    n = len(problem.shards)
    log = _new_log(c)
    w = problem.w0
    queue = EventQueue()
    for r in range(c.rounds):
        start = queue.now
        clients = agg.sample_clients(n, o.fraction_C, [c.seeds.sampling, 0, r])
        eta = learning_rate(o.eta, o.eta_decay, r)
        transit = problem.transits(clients)
        local = {k: w for k in clients}
        iters = dict.fromkeys(clients, 0)
        busy = dict.fromkeys(clients, 0)
        uploaded, downloaded = {}, set()
        for k in clients:
            queue.push(start + problem.t_train[k], EventKind.ITER_COMPLETE, k)
        while True:
            ev = queue.pop()
            if trace is not None:
                trace.append(ev)
            k = ev.client_id
            if ev.kind is EventKind.ITER_COMPLETE:
                local[k] = local_sgd_step(problem.spec, local[k], problem.streams[k].next(), eta)
                iters[k] += 1
                busy[k] += problem.t_train[k]
                if iters[k] < o.E:
                    queue.push(ev.tick + problem.t_train[k], EventKind.ITER_COMPLETE, k)
                else:
                    queue.push(ev.tick + transit[k][0], EventKind.UPLOAD_ARRIVE, k)
            elif ev.kind is EventKind.UPLOAD_ARRIVE:
                uploaded[k] = agg.ClientUpdate(k, local[k], problem.shards[k].p, staleness=0)
                if len(uploaded) == len(clients):
                    if trace is not None:
                        trace.append(("fedavg", r, [uploaded[j].staleness for j in clients]))
                    w = agg.fedavg_aggregate(uploaded[j] for j in clients)
                    for j in clients:
                        queue.push(ev.tick + transit[j][1], EventKind.DOWNLOAD_ARRIVE, j)
            elif ev.kind is EventKind.DOWNLOAD_ARRIVE:
                downloaded.add(k)
                if len(downloaded) == len(clients):
                    queue.push(ev.tick, EventKind.ROUND_CLOSE)
            else:
                _record(log, problem, r, start, ev.tick, w, iters, busy)
                break
    return log


def run_overlap(config: ExperimentConfig, trace: list | None = None) -> MetricsLog:
    """Overlap-FedAvg with adaptive interval, compensation and server NAG."""
    c = config.validate()
    problem = Problem(c)
    o = c.optimizer
    clients = list(range(len(problem.shards)))
    log = _new_log(c)
    server_eta = o.server_eta if o.server_eta is not None else o.eta
    state = agg.ServerState.initial(problem.w0, server_eta, lam=o.lam, beta=o.beta,
                                    nag_mode=o.nag_mode, compensation=o.compensation)
    base = {k: problem.w0 for k in clients}
    pending = {k: problem.w0 for k in clients}  # upload queued for the next round
    queue = EventQueue()
    for r in range(c.rounds):
        start = queue.now
        eta = learning_rate(o.eta, o.eta_decay, r)
        # uploads consumed this round were trained during round r - 1
        consumed = max(r - 1, 0)
        state = replace(state, eta=learning_rate(server_eta, o.eta_decay, consumed))
        restore_eta = learning_rate(o.eta, o.eta_decay, consumed)
        transit = problem.transits(clients)
        local = dict(base)
        iters = dict.fromkeys(clients, 0)
        busy = dict.fromkeys(clients, 0)
        arrived, has_global, finished = {}, set(), {}

        def finish(k, tick):
            finished[k] = tick
            pending[k] = local[k]
            base[k] = state.w
            if len(finished) == len(clients):
                queue.push(tick, EventKind.ROUND_CLOSE)

        for k in clients:
            queue.push(start + transit[k][0], EventKind.UPLOAD_ARRIVE, k)
            queue.push(start + problem.t_train[k], EventKind.ITER_COMPLETE, k)
        while True:
            ev = queue.pop()
            if trace is not None:
                trace.append(ev)
            k = ev.client_id
            if ev.kind is EventKind.UPLOAD_ARRIVE:
                arrived[k] = agg.ClientUpdate(k, pending[k], problem.shards[k].p, staleness=1)
                if len(arrived) == len(clients):
                    updates = [arrived[j] for j in clients]
                    if trace is not None:
                        trace.append(("phi", r, [u.staleness for u in updates]))
                    state = agg.phi(state, updates, restore_eta=restore_eta)
                    for j in clients:
                        queue.push(ev.tick + transit[j][1], EventKind.DOWNLOAD_ARRIVE, j)
            elif ev.kind is EventKind.ITER_COMPLETE:
                local[k] = local_sgd_step(problem.spec, local[k], problem.streams[k].next(), eta)
                iters[k] += 1
                busy[k] += problem.t_train[k]
                if k in has_global:
                    finish(k, ev.tick)
                elif iters[k] < o.E_max:
                    queue.push(ev.tick + problem.t_train[k], EventKind.ITER_COMPLETE, k)
                # else: E_max reached, idle until the download lands
            elif ev.kind is EventKind.DOWNLOAD_ARRIVE:
                has_global.add(k)
                if iters[k] >= o.E_max:
                    finish(k, ev.tick)
            else:
                _record(log, problem, r, start, ev.tick, state.w, iters, busy)
                break
    return log


def run(config: ExperimentConfig, trace: list | None = None) -> MetricsLog:
    if config.strategy == "fedavg":
        return run_fedavg(config, trace)
    return run_overlap(config, trace)
