"""Simulated peer-to-peer collectives over sparse payloads.

Nothing is sent anywhere. Each collective computes its result in one
deterministic pass (ascending worker id) and charges the per-worker traffic
a real implementation would generate to a :class:`TrafficMeter`:

* all-reduce follows the ring model: 2(W-1) messages per worker, each worker
  moving ``2(W-1)/W`` of its payload. Only values go on the wire, because
  the coordinates are reproducible from the shared seed.
* all-gather is modelled as W-1 point-to-point sends of the whole
  (index, value) payload.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ProtocolViolation, StructureError
from .params import SparsePayload, scatter_add

INDEX_BYTES = 4

TEN_GBIT = 1.25e9  # bytes per second


@dataclass(frozen=True)
class ClusterConfig:
    world_size: int = 1
    bandwidth: float = TEN_GBIT
    latency: float = 0.0
    value_bytes: int = 8
    index_bytes: int = INDEX_BYTES

    def __post_init__(self):
        if self.world_size < 1:
            raise ConfigError(f"world_size must be >= 1, got {self.world_size}", rule="world-size")
        if not self.bandwidth > 0:
            raise ConfigError(f"bandwidth must be positive, got {self.bandwidth}", rule="bandwidth")
        if self.latency < 0:
            raise ConfigError(f"latency must be non-negative, got {self.latency}", rule="latency")
        if self.value_bytes not in (4, 8):
            raise ConfigError(f"value_bytes must be 4 or 8, got {self.value_bytes}", rule="value-bytes")
        if self.index_bytes != INDEX_BYTES:
            raise ConfigError("indices are 32-bit on the wire", rule="index-bytes")


@dataclass
class TrafficMeter:
    """Per-worker traffic counters for one step."""

    world_size: int
    messages: np.ndarray = field(init=False)
    entries: np.ndarray = field(init=False)
    bytes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.reset()

    def reset(self) -> None:
        self.messages = np.zeros(self.world_size, dtype=np.int64)
        self.entries = np.zeros(self.world_size, dtype=np.int64)
        # ring all-reduce moves fractional payload shares
        self.bytes = np.zeros(self.world_size, dtype=np.float64)

    def record(self, worker: int, messages: int, entries: int, nbytes: float) -> None:
        if messages < 0 or entries < 0 or nbytes < 0:
            raise ValueError("traffic counters only grow")
        self.messages[worker] += messages
        self.entries[worker] += entries
        self.bytes[worker] += nbytes

    @property
    def total_messages(self) -> int:
        return int(self.messages.sum())

    @property
    def total_entries(self) -> int:
        return int(self.entries.sum())

    @property
    def total_bytes(self) -> float:
        return float(self.bytes.sum())


def _check_common(payloads: Sequence[SparsePayload]) -> None:
    if not payloads:
        raise ProtocolViolation("collective needs at least one payload")
    first = payloads[0]
    for w, p in enumerate(payloads[1:], start=1):
        if p.scope != first.scope or p.dim != first.dim:
            raise ProtocolViolation(
                f"workers 0 and {w} disagree on payload shape: "
                f"(scope={first.scope!r}, dim={first.dim}) vs (scope={p.scope!r}, dim={p.dim})"
            )


def all_reduce_sum(
    payloads: Sequence[SparsePayload],
    cluster: ClusterConfig | None = None,
    meter: TrafficMeter | None = None,
) -> SparsePayload:
    """Sum payloads that share one coordinate set; every worker gets the result."""
    _check_common(payloads)
    world = len(payloads)
    if world == 1:
        return payloads[0]
    for w in range(1, world):
        if not np.array_equal(payloads[w - 1].indices, payloads[w].indices):
            raise ProtocolViolation(
                f"all-reduce needs identical coordinates; workers {w - 1} and {w} differ"
            )
    total = payloads[0].values.copy()
    for p in payloads[1:]:
        total += p.values
    if meter is not None:
        cluster = cluster or ClusterConfig(world_size=world)
        share = 2 * (world - 1) / world
        for w, p in enumerate(payloads):
            meter.record(w, 2 * (world - 1), p.nnz, p.nnz * cluster.value_bytes * share)
    first = payloads[0]
    return SparsePayload(first.scope, first.dim, first.indices, total, trusted=True)


def all_gather(
    payloads: Sequence[SparsePayload],
    cluster: ClusterConfig | None = None,
    meter: TrafficMeter | None = None,
) -> list[list[SparsePayload]]:
    """Deliver every worker's payload to every worker, in worker-id order."""
    _check_common(payloads)
    world = len(payloads)
    if meter is not None and world > 1:
        cluster = cluster or ClusterConfig(world_size=world)
        per_entry = cluster.value_bytes + cluster.index_bytes
        for w, p in enumerate(payloads):
            meter.record(w, world - 1, p.nnz, p.nnz * per_entry * (world - 1))
    gathered = list(payloads)
    # payloads are frozen, so the per-worker lists can share them
    return [list(gathered) for _ in range(world)]


def aggregate_gathered(gathered: Sequence[SparsePayload], dim: int, dtype=None) -> np.ndarray:
    """Dense sum of gathered payloads, accumulated in worker-id order."""
    if not gathered:
        raise StructureError("nothing to aggregate")
    dense = np.zeros(dim, dtype=dtype or gathered[0].values.dtype)
    for p in gathered:
        if p.dim != dim:
            raise StructureError(f"payload dim {p.dim} != {dim}")
        scatter_add(dense, p)
    return dense


def model_exchange_time(meter: TrafficMeter, cluster: ClusterConfig) -> np.ndarray:
    """Alpha-beta network time per worker, in seconds."""
    return cluster.latency * meter.messages + meter.bytes / cluster.bandwidth
