"""Wall-clock cost of compressing and decompressing one gradient vector."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .compressors import Kind, compress_blockrandomk, compress_randomk, compress_topk, k_for
from .rng import RngStream

SCHEMES = (Kind.TOPK, Kind.RANDOMK, Kind.BLOCKRANDOMK)


@dataclass
class BenchRow:
    scheme: str
    dim: int
    k: int
    selected: int
    samples: list[float]

    @property
    def mean(self) -> float:
        return statistics.fmean(self.samples)

    @property
    def stdev(self) -> float:
        return statistics.stdev(self.samples) if len(self.samples) > 1 else 0.0


def _codec_once(kind: Kind, v: np.ndarray, k: int, rng: RngStream, buf: np.ndarray) -> tuple[float, int]:
    t0 = time.perf_counter()
    if kind is Kind.TOPK:
        pl = compress_topk(v, k)
    elif kind is Kind.RANDOMK:
        pl = compress_randomk(v, k, rng)
    else:
        pl = compress_blockrandomk(v, k, rng)
    buf[pl.indices] = pl.values
    elapsed = time.perf_counter() - t0
    # reset the reusable buffer outside the timed region
    buf[pl.indices] = 0
    return elapsed, pl.nnz


def bench_codecs(
    dim: int,
    fraction: float = 0.01,
    repetitions: int = 20,
    warmup: int = 3,
    seed: int = 0,
    dtype=np.float32,
    schemes=SCHEMES,
) -> list[BenchRow]:
    """Time compress + decompress for each scheme on the same random vectors.

    Every scheme sees the identical sequence of vectors; repetition ``r``
    uses rng stream step ``r``.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if repetitions < 1:
        raise ValueError("need at least one repetition")
    k = k_for(dim, fraction)
    gen = np.random.default_rng(seed)
    vectors = [gen.standard_normal(dim).astype(dtype) for _ in range(min(repetitions, 4))]
    buf = np.zeros(dim, dtype=dtype)
    rows = []
    for kind in schemes:
        kind = Kind(kind)
        for w in range(warmup):
            _codec_once(kind, vectors[w % len(vectors)], k, RngStream(seed, step=10**9 + w), buf)
        samples, selected = [], set()
        for r in range(repetitions):
            elapsed, nnz = _codec_once(kind, vectors[r % len(vectors)], k, RngStream(seed, step=r), buf)
            samples.append(elapsed)
            selected.add(nnz)
        rows.append(BenchRow(kind.value, dim, k, selected.pop() if len(selected) == 1 else -1, samples))
    return rows


def format_table(rows: list[BenchRow]) -> str:
    """Markdown table, one column per measured sample (milliseconds)."""
    n = len(rows[0].samples)
    head = ["scheme", "dim", "k", "selected", "mean_ms", "std_ms"] + [f"s{i + 1}_ms" for i in range(n)]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in rows:
        cells = [r.scheme, str(r.dim), str(r.k), str(r.selected), f"{r.mean * 1e3:.3f}", f"{r.stdev * 1e3:.3f}"]
        cells += [f"{s * 1e3:.3f}" for s in r.samples]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)
