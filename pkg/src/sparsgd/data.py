"""Synthetic datasets, sharding and CSV import/export."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, MetricsFileError
from .rng import RngStream


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    seed: int = 0

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a matrix")
        if self.features.shape[0] < 1:
            raise ValueError("dataset needs at least one row")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(
                f"{self.features.shape[0]} feature rows but labels of shape {self.labels.shape}"
            )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, rows: np.ndarray, name: str | None = None) -> "Dataset":
        return Dataset(self.features[rows], self.labels[rows], name or self.name, self.seed)

    def equals(self, other: "Dataset") -> bool:
        return np.array_equal(self.features, other.features) and np.array_equal(self.labels, other.labels)


def least_squares_optimum(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimizer and minimum of 0.5/n * ||Ax - b||^2 by a direct solve."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x_star = np.linalg.solve(A.T @ A, A.T @ b)
    r = A @ x_star - b
    return x_star, 0.5 * float(r @ r) / A.shape[0]


def gen_least_squares(
    p: int, n: int, condition: float = 10.0, seed: int = 0, noise: float = 0.1
) -> tuple[Dataset, np.ndarray, float]:
    """Least-squares instance whose Hessian A^T A / n has eigenvalues in [1/condition, 1].

    Eigenvalues are spaced geometrically so the condition number is exact.
    """
    if not (n >= p >= 1):
        raise ValueError(f"need n >= p >= 1, got n={n}, p={p}")
    if condition < 1:
        raise ValueError(f"condition must be >= 1, got {condition}")
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.standard_normal((n, p)))
    V, _ = np.linalg.qr(rng.standard_normal((p, p)))
    eig = np.geomspace(1.0, 1.0 / condition, p) if p > 1 else np.ones(1)
    A = np.sqrt(n) * (U * np.sqrt(eig)) @ V.T
    x_true = rng.standard_normal(p)
    b = A @ x_true + noise * rng.standard_normal(n)
    x_star, f_star = least_squares_optimum(A, b)
    return Dataset(A, b, name="least_squares", seed=seed), x_star, f_star


def gen_blobs(classes: int, n: int, p: int, separation: float = 3.0, seed: int = 0) -> Dataset:
    """Isotropic unit-variance Gaussian clusters with centres ``separation`` from the origin."""
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    centres = blob_centres(classes, p, separation, seed)
    labels = np.arange(n) % classes
    features = centres[labels] + np.random.default_rng([seed, 1]).standard_normal((n, p))
    return Dataset(features, labels.astype(np.int64), name="blobs", seed=seed)


def blob_centres(classes: int, p: int, separation: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((classes, p))
    return centres * (separation / np.linalg.norm(centres, axis=1, keepdims=True))


def split(dataset: Dataset, eval_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded train/eval split. The eval part takes ``ceil(eval_fraction * n)`` rows."""
    n_eval = int(np.ceil(eval_fraction * dataset.n))
    if not (0 < n_eval < dataset.n):
        raise ConfigError(f"eval_fraction {eval_fraction} leaves an empty split", rule="eval-fraction")
    order = RngStream(seed, tag=0, step=0, ordinal=1).permutation(dataset.n)
    return (
        dataset.subset(np.sort(order[n_eval:]), dataset.name + "-train"),
        dataset.subset(np.sort(order[:n_eval]), dataset.name + "-eval"),
    )


def shard_indices(n: int, world_size: int, worker_id: int, seed: int) -> np.ndarray:
    if world_size > n:
        raise ConfigError(f"cannot split {n} rows across {world_size} workers", rule="shard-size")
    if not (0 <= worker_id < world_size):
        raise ConfigError(f"worker id {worker_id} outside [0, {world_size})", rule="worker-id")
    order = RngStream(seed, tag=0, step=0).permutation(n)
    # array_split hands the remainder to the lowest worker ids
    return np.array_split(order, world_size)[worker_id]


def shard(dataset: Dataset, world_size: int, worker_id: int, seed: int = 0) -> Dataset:
    rows = shard_indices(dataset.n, world_size, worker_id, seed)
    return dataset.subset(rows, f"{dataset.name}[{worker_id}/{world_size}]")


def save_csv(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    integral = np.issubdtype(dataset.labels.dtype, np.integer)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(dataset.p)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            # repr() of a float round-trips exactly
            writer.writerow([repr(float(x)) for x in row] + [int(label) if integral else repr(float(label))])


def load_csv(path: str | Path, name: str | None = None, seed: int = 0) -> Dataset:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise MetricsFileError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2 or rows[0][-1] != "label":
        raise MetricsFileError(f"{path}: expected a header ending in 'label' and at least one row")
    body = rows[1:]
    try:
        features = np.array([[float(x) for x in r[:-1]] for r in body], dtype=np.float64)
        raw_labels = [r[-1] for r in body]
        try:
            labels = np.array([int(x) for x in raw_labels], dtype=np.int64)
        except ValueError:
            labels = np.array([float(x) for x in raw_labels], dtype=np.float64)
    except ValueError as exc:
        raise MetricsFileError(f"{path}: {exc}") from exc
    return Dataset(features, labels, name or path.stem, seed)
