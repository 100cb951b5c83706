"""Gradient compressors: identity, top-k, random-k and block-random-k.

Each compressor maps a dense vector to a :class:`SparsePayload`. The
``compress_scoped`` adapter applies one of them either per layer or once over
the concatenation of all layers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError, ContractViolation
from .params import GLOBAL_SCOPE, LayeredParams, SparsePayload, flatten
from .rng import RngStream


class Kind(str, enum.Enum):
    IDENTITY = "identity"
    TOPK = "topk"
    RANDOMK = "randomk"
    BLOCKRANDOMK = "blockrandomk"

    @property
    def is_random(self) -> bool:
        return self in (Kind.RANDOMK, Kind.BLOCKRANDOMK)


class Scope(str, enum.Enum):
    LAYERWISE = "layerwise"
    GLOBAL = "global"


class SeedMode(str, enum.Enum):
    SHARED = "shared"
    PERWORKER = "perworker"


@dataclass(frozen=True)
class CompressorConfig:
    kind: Kind = Kind.TOPK
    fraction: float = 0.01
    scope: Scope = Scope.LAYERWISE
    seed_mode: SeedMode = SeedMode.PERWORKER
    base_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "scope", Scope(self.scope))
        object.__setattr__(self, "seed_mode", SeedMode(self.seed_mode))
        if not (0.0 < self.fraction <= 1.0):
            raise ConfigError(f"fraction must lie in (0, 1], got {self.fraction}", rule="fraction-range")

    @property
    def shared_coordinates(self) -> bool:
        """Whether every worker selects the same coordinates at a given step."""
        if self.kind is Kind.IDENTITY:
            return True
        return self.kind.is_random and self.seed_mode is SeedMode.SHARED


def k_for(dim: int, fraction: float) -> int:
    if dim < 1:
        raise ContractViolation(f"dim must be >= 1, got {dim}")
    if not (0.0 < fraction <= 1.0):
        raise ContractViolation(f"fraction must lie in (0, 1], got {fraction}")
    # decimal reading of the fraction, so 0.07 * 700 is exactly 49
    return min(dim, max(1, math.ceil(Fraction(str(fraction)) * dim)))


def _check_k(k: int, dim: int) -> None:
    if not (1 <= k <= dim):
        raise ContractViolation(f"k={k} outside [1, {dim}]")


def compress_identity(v: np.ndarray, scope: str | None = GLOBAL_SCOPE) -> SparsePayload:
    v = np.asarray(v).reshape(-1)
    return SparsePayload(scope, v.size, np.arange(v.size), v.copy(), trusted=True)


def topk_indices(v: np.ndarray, k: int) -> np.ndarray:
    """Sorted indices of the k largest |v|, ties going to the lower index."""
    mag = np.abs(v)
    dim = mag.size
    if k == dim:
        return np.arange(dim)
    # magnitude of the k-th largest entry
    kth = mag[np.argpartition(mag, dim - k)[dim - k]]
    above = np.flatnonzero(mag > kth)
    ties = np.flatnonzero(mag == kth)[: k - above.size]
    if above.size + ties.size != k:  # only reachable with NaN entries
        raise ContractViolation("top-k selection failed; vector contains NaN")
    return np.union1d(above, ties)


def compress_topk(v: np.ndarray, k: int, scope: str | None = GLOBAL_SCOPE) -> SparsePayload:
    v = np.asarray(v).reshape(-1)
    _check_k(k, v.size)
    idx = topk_indices(v, k)
    return SparsePayload(scope, v.size, idx, v[idx], trusted=True)


def randomk_indices(dim: int, k: int, rng: RngStream) -> np.ndarray:
    """k distinct coordinates by a partial Fisher-Yates shuffle of range(dim).

    Uses exactly k draws, so streams stay aligned for a given (dim, k).
    """
    offsets = rng.below(np.arange(dim, dim - k, -1))
    picks = np.empty(k, dtype=np.int64)
    swapped: dict[int, int] = {}
    for i, off in enumerate(offsets.tolist()):
        j = i + off
        picks[i] = swapped.get(j, j)
        swapped[j] = swapped.get(i, i)
    picks.sort()
    return picks


def compress_randomk(v: np.ndarray, k: int, rng: RngStream, scope: str | None = GLOBAL_SCOPE) -> SparsePayload:
    v = np.asarray(v).reshape(-1)
    _check_k(k, v.size)
    idx = randomk_indices(v.size, k, rng)
    return SparsePayload(scope, v.size, idx, v[idx], trusted=True)


def block_start(dim: int, rng: RngStream) -> int:
    return rng.below(dim)


def block_indices(dim: int, k: int, start: int) -> np.ndarray:
    """The k coordinates following ``start`` (inclusive), wrapping past the end."""
    stop = start + k
    if stop <= dim:
        return np.arange(start, stop)
    return np.concatenate((np.arange(0, stop - dim), np.arange(start, dim)))


def compress_blockrandomk(v: np.ndarray, k: int, rng: RngStream, scope: str | None = GLOBAL_SCOPE) -> SparsePayload:
    v = np.asarray(v).reshape(-1)
    dim = v.size
    _check_k(k, dim)
    start = block_start(dim, rng)
    stop = start + k
    if stop <= dim:
        idx = np.arange(start, stop)
        values = v[start:stop].copy()
    else:
        idx = block_indices(dim, k, start)
        values = np.concatenate((v[: stop - dim], v[start:]))
    return SparsePayload(scope, dim, idx, values, trusted=True)


def compress(v: np.ndarray, cfg: CompressorConfig, rng: RngStream | None, scope: str | None = GLOBAL_SCOPE) -> SparsePayload:
    """Apply the configured scheme to one vector."""
    v = np.asarray(v).reshape(-1)
    if cfg.kind is Kind.IDENTITY:
        return compress_identity(v, scope)
    k = k_for(v.size, cfg.fraction)
    if cfg.kind is Kind.TOPK:
        return compress_topk(v, k, scope)
    if rng is None:
        raise ContractViolation(f"{cfg.kind.value} needs an rng stream")
    if cfg.kind is Kind.RANDOMK:
        return compress_randomk(v, k, rng, scope)
    return compress_blockrandomk(v, k, rng, scope)


def compress_scoped(p: LayeredParams, cfg: CompressorConfig, rng: RngStream | None) -> list[SparsePayload]:
    """One payload per layer (layer-wise) or one over the flattened vector (global).

    The stream advances once per payload, in layer order.
    """
    if cfg.scope is Scope.GLOBAL:
        return [compress(flatten(p), cfg, rng, GLOBAL_SCOPE)]
    out = []
    for name, values in p.items():
        out.append(compress(values, cfg, rng, name))
        if rng is not None:
            rng = rng.advance()
    return out
