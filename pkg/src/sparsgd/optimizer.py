"""Synchronous sparsified SGD with error feedback.

Per step and worker::

    g  = stochastic gradient (+ weight decay, then momentum)
    p  = lr * g + e
    q_w = C(p)
    q  = sum over workers of q_w          (all-reduce or all-gather)
    x  = x - q
    e  = p - q_w                          (local residual)

``error_update="aggregate"`` switches the last line to ``e = p - q``.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .comm import ClusterConfig, TrafficMeter, aggregate_gathered, all_gather, all_reduce_sum, model_exchange_time
from .compressors import CompressorConfig, Kind, compress_scoped
from .data import Dataset
from .errors import ConfigError, DivergenceError
from .models import Model
from .params import GLOBAL_SCOPE, LayeredParams, SparsePayload, decompress, decompress_scoped, unflatten
from .rng import RngStream, stream_for, worker_tag


class CommScheme(str, enum.Enum):
    ALLREDUCE = "allreduce"
    ALLGATHER = "allgather"


class ErrorUpdate(str, enum.Enum):
    LOCAL = "local"
    AGGREGATE = "aggregate"


@dataclass(frozen=True)
class TrainerConfig:
    gamma0: float = 0.1
    lr_decay_epochs: tuple[int, ...] = ()
    lr_decay_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 1
    batch_size: int = 32
    scale_lr_by_workers: bool = False
    error_update: ErrorUpdate = ErrorUpdate.LOCAL

    def __post_init__(self):
        object.__setattr__(self, "lr_decay_epochs", tuple(int(e) for e in self.lr_decay_epochs))
        object.__setattr__(self, "error_update", ErrorUpdate(self.error_update))
        if not self.gamma0 > 0:
            raise ConfigError(f"gamma0 must be positive, got {self.gamma0}", rule="gamma0")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}", rule="momentum")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative", rule="weight-decay")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1", rule="budget")
        decay = self.lr_decay_epochs
        if any(b <= a for a, b in zip(decay, decay[1:])) or any(e >= self.epochs or e < 0 for e in decay):
            raise ConfigError(
                f"decay epochs {decay} must be strictly increasing and below epochs={self.epochs}",
                rule="decay-epochs",
            )


def lr_at(epoch: int, cfg: TrainerConfig, world_size: int = 1) -> float:
    gamma = cfg.gamma0 * (world_size if cfg.scale_lr_by_workers else 1)
    n_decays = sum(1 for e in cfg.lr_decay_epochs if e <= epoch)
    return gamma / cfg.lr_decay_factor ** n_decays


def check_scheme(comp: CompressorConfig, scheme: CommScheme) -> None:
    """Reject collective/compressor pairs that cannot work together."""
    scheme = CommScheme(scheme)
    if comp.kind is Kind.TOPK and scheme is not CommScheme.ALLGATHER:
        raise ConfigError("top-k selects per-worker coordinates and needs allgather", rule="topk-requires-allgather")
    if comp.kind is Kind.IDENTITY and scheme is not CommScheme.ALLREDUCE:
        raise ConfigError("the dense baseline exchanges with allreduce", rule="identity-requires-allreduce")
    if comp.kind.is_random and scheme is CommScheme.ALLREDUCE and not comp.shared_coordinates:
        raise ConfigError(
            f"{comp.kind.value} over allreduce needs seed_mode=shared", rule="allreduce-requires-shared-seed"
        )


@dataclass
class WorkerState:
    worker_id: int
    x: LayeredParams
    e: LayeredParams
    m: LayeredParams
    shard: Dataset

    @classmethod
    def fresh(cls, worker_id: int, x0: LayeredParams, shard: Dataset) -> "WorkerState":
        return cls(worker_id, x0.copy(), x0.zeros_like(), x0.zeros_like(), shard)


def local_gradient(
    state: WorkerState, model: Model, X: np.ndarray, y: np.ndarray, cfg: TrainerConfig, timings: dict | None = None
) -> tuple[float, LayeredParams]:
    """Mini-batch loss and the momentum direction; updates ``state.m`` in place."""
    if X.shape[0] == 0:
        raise ConfigError(f"worker {state.worker_id} has an empty batch", rule="empty-shard")
    t0 = time.perf_counter()
    loss, cache = model.forward(state.x, X, y)
    t1 = time.perf_counter()
    g = model.backward(state.x, cache)
    t2 = time.perf_counter()
    if timings is not None:
        timings["forward"] = timings.get("forward", 0.0) + (t1 - t0)
        timings["backward"] = timings.get("backward", 0.0) + (t2 - t1)
    if cfg.weight_decay:
        g.iadd(state.x, cfg.weight_decay)
    for m, gl in zip(state.m.arrays(), g.arrays()):
        m *= cfg.momentum
        m += gl
    return loss, state.m


def worker_half_step(
    state: WorkerState, g: LayeredParams, gamma: float, comp: CompressorConfig, rng: RngStream | None
) -> tuple[list[SparsePayload], LayeredParams]:
    """p = gamma * g + e and its compressed payload(s)."""
    p = g * gamma + state.e
    return compress_scoped(p, comp, rng), p


@dataclass
class StepReport:
    step: int
    t_forward: float = 0.0
    t_backward: float = 0.0
    t_codec: float = 0.0
    t_exchange_modeled: float = 0.0
    entries: int = 0
    bytes: float = 0.0
    messages: int = 0
    loss: float = 0.0

    @property
    def t_total(self) -> float:
        return self.t_forward + self.t_backward + self.t_codec + self.t_exchange_modeled


@dataclass
class WorkerTrace:
    """What one worker did in one step; handed to ``on_step`` callbacks."""

    worker_id: int
    p: LayeredParams
    q_local: LayeredParams
    e_next: LayeredParams
    payloads: list[SparsePayload]


@dataclass
class StepTrace:
    report: StepReport
    q: LayeredParams
    workers: list[WorkerTrace]


def _exchange(
    columns: Sequence[Sequence[SparsePayload]],
    structure,
    scheme: CommScheme,
    cluster: ClusterConfig,
    meter: TrafficMeter,
    dtype,
) -> LayeredParams:
    """Run one collective per payload slot and return the dense aggregate q."""
    world = len(columns)
    parts = []
    for slot in range(len(columns[0])):
        col = [columns[w][slot] for w in range(world)]
        if world == 1:
            dense = decompress(col[0], dtype)
        elif scheme is CommScheme.ALLREDUCE:
            dense = decompress(all_reduce_sum(col, cluster, meter), dtype)
        else:
            dense = aggregate_gathered(all_gather(col, cluster, meter)[0], col[0].dim, dtype)
        parts.append((col[0].scope, dense))
    if len(parts) == 1 and parts[0][0] is GLOBAL_SCOPE:
        return unflatten(parts[0][1], structure)
    return LayeredParams(parts, dtype=dtype)


def global_step(
    states: Sequence[WorkerState],
    model: Model,
    batches: Sequence[tuple[np.ndarray, np.ndarray]],
    gamma: float,
    step: int,
    tcfg: TrainerConfig,
    comp: CompressorConfig,
    cluster: ClusterConfig,
    scheme: CommScheme,
    trace: bool = False,
) -> StepTrace:
    """One synchronous step of every worker. Mutates ``states`` in place."""
    scheme = CommScheme(scheme)
    check_scheme(comp, scheme)
    world = len(states)
    structure = states[0].x.structure
    dtype = states[0].x.dtype
    meter = TrafficMeter(world)
    report = StepReport(step)
    timings: dict[str, float] = {}
    codec = 0.0

    shared = comp.shared_coordinates
    payloads, ps, losses = [], [], []
    for st, (X, y) in zip(states, batches):
        loss, g = local_gradient(st, model, X, y, tcfg, timings)
        if not math.isfinite(loss) or not g.is_finite():
            # stop before a NaN reaches the compressor
            raise DivergenceError(f"non-finite loss or gradient on worker {st.worker_id} at step {step} (lr {gamma:g})")
        losses.append(loss)
        rng = stream_for(comp.base_seed, st.worker_id, step, shared) if comp.kind.is_random else None
        t0 = time.perf_counter()
        pl, p = worker_half_step(st, g, gamma, comp, rng)
        codec += time.perf_counter() - t0
        payloads.append(pl)
        ps.append(p)

    t0 = time.perf_counter()
    q = _exchange(payloads, structure, scheme, cluster, meter, dtype)
    t_aggregate = time.perf_counter() - t0

    workers = []
    for st, pl, p in zip(states, payloads, ps):
        t0 = time.perf_counter()
        q_local = decompress_scoped(pl, structure, dtype)
        codec += time.perf_counter() - t0
        st.x.isub(q)
        st.e = p - (q_local if tcfg.error_update is ErrorUpdate.LOCAL else q)
        if trace:
            workers.append(WorkerTrace(st.worker_id, p, q_local, st.e, pl))

    report.t_forward = timings.get("forward", 0.0) / world
    report.t_backward = timings.get("backward", 0.0) / world
    # aggregate decoding is included in full: each real worker does it once
    report.t_codec = codec / world + t_aggregate
    report.t_exchange_modeled = float(model_exchange_time(meter, cluster).max())
    report.entries = meter.total_entries
    report.bytes = meter.total_bytes
    report.messages = meter.total_messages
    report.loss = float(np.mean(losses))
    return StepTrace(report, q, workers)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    eval_metric: float
    lr: float
    cumulative_bytes: float


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    steps: list[StepReport] = field(default_factory=list)
    params: LayeredParams | None = None


def epoch_order(shard_size: int, data_seed: int, worker_id: int, epoch: int, shared: bool = False) -> np.ndarray:
    """Seed-keyed row order of a shard for one epoch."""
    tag = 0 if shared else worker_tag(worker_id)
    return RngStream(data_seed, tag=tag, step=epoch, ordinal=2).permutation(shard_size)


def steps_per_epoch(shards: Sequence[Dataset], batch_size: int) -> int:
    # workers stay in lock-step, so the smallest shard sets the pace
    return math.ceil(min(s.n for s in shards) / batch_size)


def train(
    model: Model,
    shards: Sequence[Dataset],
    eval_set: Dataset,
    tcfg: TrainerConfig,
    comp: CompressorConfig,
    cluster: ClusterConfig,
    scheme: CommScheme,
    init_seed: int = 0,
    data_seed: int = 0,
    shared_order: bool = False,
    dtype=np.float64,
    on_step: Callable[[StepTrace], None] | None = None,
    stop_when: Callable[[EpochRecord], bool] | None = None,
) -> History:
    """Run ``tcfg.epochs`` epochs of synchronous steps across ``len(shards)`` workers.

    ``shared_order`` gives every worker the same per-epoch row order, which
    together with replicated shards makes all workers see identical batches.
    ``stop_when`` is checked after every epoch and ends the run early.
    """
    scheme = CommScheme(scheme)
    check_scheme(comp, scheme)
    world = len(shards)
    if world != cluster.world_size:
        raise ConfigError(f"{world} shards for a cluster of {cluster.world_size}", rule="world-size")
    if any(s.n == 0 for s in shards):
        raise ConfigError("every worker needs a non-empty shard", rule="empty-shard")
    x0 = model.init_params(init_seed, dtype)
    states = [WorkerState.fresh(w, x0, s) for w, s in enumerate(shards)]
    n_steps = steps_per_epoch(shards, tcfg.batch_size)
    history = History()
    cumulative = 0.0
    step = 0
    b = tcfg.batch_size
    for epoch in range(tcfg.epochs):
        gamma = lr_at(epoch, tcfg, world)
        orders = [epoch_order(s.n, data_seed, w, epoch, shared_order) for w, s in enumerate(shards)]
        losses = []
        for i in range(n_steps):
            batches = []
            for s, order in zip(shards, orders):
                rows = order[i * b:(i + 1) * b]
                batches.append((s.features[rows], s.labels[rows]))
            tr = global_step(states, model, batches, gamma, step, tcfg, comp, cluster, scheme, trace=on_step is not None)
            rep = tr.report
            if not math.isfinite(rep.loss) or not states[0].x.is_finite():
                raise DivergenceError(f"non-finite loss or parameters at step {step} (epoch {epoch}, lr {gamma:g})")
            if on_step is not None:
                on_step(tr)
            history.steps.append(rep)
            losses.append(rep.loss)
            cumulative += rep.bytes
            step += 1
        metric = model.metric(states[0].x, eval_set.features, eval_set.labels)
        record = EpochRecord(epoch, float(np.mean(losses)), float(metric), gamma, cumulative)
        history.epochs.append(record)
        if stop_when is not None and stop_when(record):
            break
    history.params = states[0].x
    return history
