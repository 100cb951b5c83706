"""Execute a RunConfig and write its metrics files."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .config import RunConfig, save_config
from .data import Dataset, gen_blobs, gen_least_squares, least_squares_optimum, load_csv, shard, split
from .errors import MetricsFileError
from .models import MLP, LeastSquaresModel, Model
from .optimizer import EpochRecord, History, StepTrace, train

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EPOCH_COLUMNS = ("epoch", "train_loss", "eval_metric", "lr", "cumulative_bytes")
STEP_COLUMNS = (
    "step", "t_forward", "t_backward", "t_codec", "t_exchange_modeled", "entries", "bytes", "messages", "loss",
)
# wall-clock columns; everything else in a run's output is a function of the config
MEASURED_COLUMNS = ("t_forward", "t_backward", "t_codec")

EPOCHS_FILE = "epochs.csv"
STEPS_FILE = "steps.csv"
CONFIG_FILE = "config.ini"


@dataclass
class Experiment:
    model: Model
    train_set: Dataset
    eval_set: Dataset
    shards: list[Dataset]


def build(cfg: RunConfig) -> Experiment:
    """Dataset, model and per-worker shards for a config."""
    d = cfg.data
    if d.kind == "least_squares":
        full, _, f_star = gen_least_squares(d.features, d.n, d.condition, cfg.seeds.data, d.noise)
    elif d.kind == "blobs":
        full = gen_blobs(d.classes, d.n, d.features, d.separation, cfg.seeds.data)
        f_star = None
    else:
        full = load_csv(d.path, seed=cfg.seeds.data)
        f_star = None

    if cfg.model.kind == "linear":
        if f_star is None:
            _, f_star = least_squares_optimum(full.features, full.labels)
        model: Model = LeastSquaresModel(full.p, f_star)
        # suboptimality is measured on the training objective itself
        train_set, eval_set = full, full
    else:
        classes = int(full.labels.max()) + 1
        model = MLP([full.p, *cfg.model.hidden, classes], cfg.model.activation)
        train_set, eval_set = split(full, d.eval_fraction, cfg.seeds.data)

    world = cfg.world_size
    if d.replicate:
        shards = [train_set] * world
    else:
        shards = [shard(train_set, world, w, cfg.seeds.data) for w in range(world)]
    return Experiment(model, train_set, eval_set, shards)


def execute(cfg: RunConfig, on_step: Callable[[StepTrace], None] | None = None) -> History:
    exp = build(cfg)
    return train(
        exp.model,
        exp.shards,
        exp.eval_set,
        cfg.trainer,
        cfg.compressor,
        cfg.cluster,
        cfg.scheme,
        init_seed=cfg.seeds.init,
        data_seed=cfg.seeds.data,
        shared_order=cfg.data.replicate,
        dtype=np.dtype(cfg.dtype),
        on_step=on_step,
    )


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, kind: str, columns, rows) -> None:
    with path.open("w", newline="") as fh:
        fh.write(f"# sparsgd {kind} schema v{SCHEMA_VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(getattr(row, c)) for c in columns])


def read_csv(path: Path, kind: str, columns) -> list[dict[str, float]]:
    """Rows of a metrics file, validated against its schema."""
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise MetricsFileError(f"cannot read {path}: {exc}") from exc
    expected_stamp = f"# sparsgd {kind} schema v{SCHEMA_VERSION}"
    if not lines or lines[0].strip() != expected_stamp:
        raise MetricsFileError(f"{path}: missing schema stamp {expected_stamp!r}")
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header is None or tuple(header) != tuple(columns):
        raise MetricsFileError(f"{path}: header {header} does not match {list(columns)}")
    rows = []
    for lineno, raw in enumerate(reader, start=3):
        if len(raw) != len(columns):
            raise MetricsFileError(f"{path}:{lineno}: expected {len(columns)} fields, got {len(raw)}")
        try:
            rows.append({c: float(v) for c, v in zip(columns, raw)})
        except ValueError as exc:
            raise MetricsFileError(f"{path}:{lineno}: {exc}") from None
    return rows


def write_outputs(out_dir: Path, cfg: RunConfig, history: History) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / CONFIG_FILE)
    write_csv(out_dir / EPOCHS_FILE, "epochs", EPOCH_COLUMNS, history.epochs)
    write_csv(out_dir / STEPS_FILE, "steps", STEP_COLUMNS, history.steps)


def run(cfg: RunConfig, out_dir: str | Path | None = None) -> History:
    """Train and write config.ini, epochs.csv and steps.csv into the output directory."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    log.info(
        "training %s/%s W=%d scheme=%s for %d epochs -> %s",
        cfg.compressor.kind.value, cfg.compressor.scope.value, cfg.world_size,
        cfg.scheme.value, cfg.trainer.epochs, out,
    )
    history = execute(cfg)
    try:
        write_outputs(out, cfg, history)
    except OSError as exc:
        raise MetricsFileError(f"cannot write metrics to {out}: {exc}") from exc
    last: EpochRecord = history.epochs[-1]
    log.info("done: train_loss=%.6g eval_metric=%.6g", last.train_loss, last.eval_metric)
    return history

