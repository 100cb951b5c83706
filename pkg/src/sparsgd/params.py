"""Dense layered vectors, sparse payloads and the conversions between them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractViolation, StructureError

# (name, size) pairs in declaration order.
Structure = tuple[tuple[str, int], ...]

INDEX_DTYPE = np.uint32

GLOBAL_SCOPE = None


class LayeredParams:
    """An ordered sequence of named flat layers.

    Holds parameters, gradients, momentum buffers and error memories alike.
    The layer structure is fixed at construction; the arrays themselves may
    be updated in place by their single owner.
    """

    __slots__ = ("_names", "_arrays", "_structure")

    def __init__(self, layers: Iterable[tuple[str, np.ndarray]], dtype=None):
        names, arrays = [], []
        for name, values in layers:
            arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
            if arr.size == 0:
                raise StructureError(f"layer {name!r} is empty")
            if name in names:
                raise StructureError(f"duplicate layer name {name!r}")
            names.append(name)
            arrays.append(arr)
        if not names:
            raise StructureError("at least one layer is required")
        self._names = tuple(names)
        self._arrays = arrays
        self._structure = tuple((n, a.size) for n, a in zip(names, arrays))

    @classmethod
    def zeros(cls, structure: Structure, dtype=np.float64) -> "LayeredParams":
        return cls(((name, np.zeros(size, dtype=dtype)) for name, size in structure))

    @classmethod
    def _wrap(cls, names, arrays) -> "LayeredParams":
        # no copy; used by arithmetic that already produced fresh arrays
        obj = cls.__new__(cls)
        obj._names = names
        obj._arrays = list(arrays)
        obj._structure = tuple((n, a.size) for n, a in zip(names, arrays))
        return obj

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    @property
    def structure(self) -> Structure:
        return self._structure

    @property
    def total_dim(self) -> int:
        return sum(size for _, size in self._structure)

    @property
    def dtype(self):
        return self._arrays[0].dtype

    def __len__(self) -> int:
        return len(self._names)

    def __getitem__(self, key: str | int) -> np.ndarray:
        if isinstance(key, str):
            try:
                key = self._names.index(key)
            except ValueError:
                raise KeyError(key) from None
        return self._arrays[key]

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return zip(self._names, self._arrays)

    def arrays(self) -> list[np.ndarray]:
        return list(self._arrays)

    def copy(self) -> "LayeredParams":
        return LayeredParams._wrap(self._names, [a.copy() for a in self._arrays])

    def zeros_like(self) -> "LayeredParams":
        return LayeredParams._wrap(self._names, [np.zeros_like(a) for a in self._arrays])

    def _check(self, other: "LayeredParams") -> None:
        if not isinstance(other, LayeredParams):
            raise TypeError(f"expected LayeredParams, got {type(other).__name__}")
        if other._structure != self._structure:
            raise StructureError(
                f"layer structures differ: {self._structure} vs {other._structure}"
            )

    def __add__(self, other: "LayeredParams") -> "LayeredParams":
        self._check(other)
        return LayeredParams._wrap(self._names, [a + b for a, b in zip(self._arrays, other._arrays)])

    def __sub__(self, other: "LayeredParams") -> "LayeredParams":
        self._check(other)
        return LayeredParams._wrap(self._names, [a - b for a, b in zip(self._arrays, other._arrays)])

    def __mul__(self, scalar: float) -> "LayeredParams":
        return LayeredParams._wrap(self._names, [a * scalar for a in self._arrays])

    __rmul__ = __mul__

    def iadd(self, other: "LayeredParams", scale: float | None = None) -> None:
        """In-place ``self += other`` (or ``self += scale * other``)."""
        self._check(other)
        for a, b in zip(self._arrays, other._arrays):
            if scale is None:
                a += b
            else:
                a += scale * b

    def isub(self, other: "LayeredParams") -> None:
        self._check(other)
        for a, b in zip(self._arrays, other._arrays):
            a -= b

    def equals(self, other: "LayeredParams") -> bool:
        """Bit-level equality of structure and values."""
        if self._structure != other._structure:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self._arrays, other._arrays))

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self._arrays)

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}:{s}" for n, s in self._structure)
        return f"LayeredParams({inner})"


def flatten(params: LayeredParams) -> np.ndarray:
    return np.concatenate(params.arrays())


def unflatten(v: np.ndarray, structure: Structure) -> LayeredParams:
    v = np.asarray(v).reshape(-1)
    expected = sum(size for _, size in structure)
    if v.size != expected:
        raise StructureError(f"vector of length {v.size} does not fit structure of size {expected}")
    layers, offset = [], 0
    for name, size in structure:
        layers.append((name, v[offset:offset + size]))
        offset += size
    return LayeredParams(layers, dtype=v.dtype)


def layer_offsets(structure: Structure) -> list[tuple[str, int, int]]:
    """(name, start, stop) of each layer inside the flattened vector."""
    out, offset = [], 0
    for name, size in structure:
        out.append((name, offset, offset + size))
        offset += size
    return out


@dataclass(frozen=True, eq=False)
class SparsePayload:
    """Compressed message: sorted unique coordinates plus their values.

    ``scope`` is the layer name the payload was cut from, or ``None`` for a
    payload over the whole flattened vector.
    """

    scope: str | None
    dim: int
    indices: np.ndarray
    values: np.ndarray
    # True when the constructor already knows indices are sorted and unique
    trusted: bool = field(default=False, repr=False)

    def __post_init__(self):
        idx = np.asarray(self.indices)
        vals = np.asarray(self.values)
        if idx.ndim != 1 or vals.ndim != 1:
            raise ContractViolation("indices and values must be one-dimensional")
        if idx.size != vals.size:
            raise ContractViolation(
                f"{idx.size} indices but {vals.size} values"
            )
        if idx.size > self.dim:
            raise ContractViolation(f"{idx.size} entries exceed dim {self.dim}")
        if not self.trusted:
            _check_indices(idx, self.dim)
        object.__setattr__(self, "indices", idx.astype(INDEX_DTYPE, copy=False))
        object.__setattr__(self, "values", vals)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def same_coordinates(self, other: "SparsePayload") -> bool:
        return (
            self.scope == other.scope
            and self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparsePayload):
            return NotImplemented
        return self.same_coordinates(other) and np.array_equal(self.values, other.values)

    __hash__ = None


def _check_indices(indices: np.ndarray, dim: int) -> None:
    if indices.size == 0:
        return
    if not np.issubdtype(indices.dtype, np.integer):
        raise ContractViolation(f"indices must be integers, got {indices.dtype}")
    if indices[0] < 0 or indices[-1] >= dim:
        raise ContractViolation(f"indices out of range [0, {dim})")
    if indices.size > 1 and not np.all(np.diff(indices.astype(np.int64)) > 0):
        raise ContractViolation("indices must be strictly increasing")


def gather(v: np.ndarray, indices: Sequence[int] | np.ndarray, scope: str | None = None) -> SparsePayload:
    v = np.asarray(v).reshape(-1)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    _check_indices(idx, v.size)
    if idx.size and idx.min() < 0:
        raise ContractViolation("negative index")
    return SparsePayload(scope, v.size, idx, v[idx], trusted=True)


def scatter_add(target: np.ndarray, payload: SparsePayload) -> np.ndarray:
    """Add the payload into ``target`` in place and return it."""
    if payload.dim != target.size:
        raise StructureError(f"payload dim {payload.dim} does not match target length {target.size}")
    # indices are unique, so plain fancy-index accumulation is exact
    target[payload.indices] += payload.values
    return target


def decompress(payload: SparsePayload, dtype=None) -> np.ndarray:
    dense = np.zeros(payload.dim, dtype=dtype or payload.values.dtype)
    return scatter_add(dense, payload)


def decompress_scoped(payloads: Sequence[SparsePayload], structure: Structure, dtype=np.float64) -> LayeredParams:
    """Dense LayeredParams from one payload per layer or a single global payload."""
    if len(payloads) == 1 and payloads[0].scope is GLOBAL_SCOPE:
        return unflatten(decompress(payloads[0], dtype), structure)
    names = [p.scope for p in payloads]
    if names != [name for name, _ in structure]:
        raise StructureError(f"payload scopes {names} do not match layers {structure}")
    return LayeredParams(((p.scope, decompress(p, dtype)) for p in payloads), dtype=dtype)
