"""Markdown summaries over a directory of finished runs.

Two tables come out: a grid of final eval metrics (scheme rows, scope x W
columns) and a per-configuration breakdown of mean step time into forward,
backward, codec (measured) and exchange (modeled).
"""

from __future__ import annotations

import statistics
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from .compressors import Kind
from .config import RunConfig, load_config
from .errors import ConfigError, MetricsFileError
from .optimizer import CommScheme
from .runner import CONFIG_FILE, EPOCH_COLUMNS, EPOCHS_FILE, STEP_COLUMNS, STEPS_FILE, read_csv

BASELINE = "Standard SGD"
_NAMES = {Kind.TOPK: "Top-k", Kind.RANDOMK: "Random-k", Kind.BLOCKRANDOMK: "Block-random-k"}
_SCHEME_NAMES = {CommScheme.ALLGATHER: "allGather", CommScheme.ALLREDUCE: "allReduce"}
ROW_ORDER = [
    BASELINE,
    "Top-k",
    "Random-k (allGather)",
    "Random-k (allReduce)",
    "Block-random-k (allGather)",
    "Block-random-k (allReduce)",
]


@dataclass
class RunRecord:
    path: Path
    config: RunConfig
    epochs: list[dict]
    steps: list[dict]

    @property
    def row_label(self) -> str:
        kind = self.config.compressor.kind
        if kind is Kind.IDENTITY:
            return BASELINE
        if kind is Kind.TOPK:
            return "Top-k"
        return f"{_NAMES[kind]} ({_SCHEME_NAMES[self.config.scheme]})"

    @property
    def column(self) -> tuple[str, int]:
        return self.config.compressor.scope.value, self.config.world_size

    @property
    def final_metric(self) -> float:
        return self.epochs[-1]["eval_metric"]


def load_run(path: Path) -> RunRecord:
    cfg_path = path / CONFIG_FILE
    if not cfg_path.is_file():
        raise MetricsFileError(f"{cfg_path}: missing")
    try:
        cfg = load_config(cfg_path)
    except ConfigError as exc:
        raise MetricsFileError(f"{cfg_path}: {exc}") from exc
    epochs = read_csv(path / EPOCHS_FILE, "epochs", EPOCH_COLUMNS)
    steps = read_csv(path / STEPS_FILE, "steps", STEP_COLUMNS)
    if not epochs:
        raise MetricsFileError(f"{path / EPOCHS_FILE}: no rows")
    if not steps:
        raise MetricsFileError(f"{path / STEPS_FILE}: no rows")
    return RunRecord(path, cfg, epochs, steps)


def find_runs(root: Path) -> list[RunRecord]:
    root = Path(root)
    if not root.is_dir():
        raise MetricsFileError(f"{root}: not a directory")
    dirs = sorted({p.parent for p in root.rglob(EPOCHS_FILE)})
    if not dirs:
        raise MetricsFileError(f"{root}: no completed runs ({EPOCHS_FILE} not found)")
    return [load_run(d) for d in dirs]


def _cell(values: list[float]) -> str:
    if len(values) == 1:
        return f"{values[0]:.4g}"
    return f"{statistics.fmean(values):.4g} ± {statistics.stdev(values):.2g} (n={len(values)})"


def metric_grid(runs: list[RunRecord]) -> str:
    columns = sorted({r.column for r in runs}, key=lambda c: (c[0] != "layerwise", c[0], c[1]))
    cells: dict[tuple[str, tuple[str, int]], list[float]] = defaultdict(list)
    for r in runs:
        cells[(r.row_label, r.column)].append(r.final_metric)
    present = {r.row_label for r in runs}
    rows = [label for label in ROW_ORDER if label == BASELINE or label in present]
    head = ["scheme"] + [f"{scope} W={w}" for scope, w in columns]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for label in rows:
        vals = [_cell(cells[(label, c)]) if (label, c) in cells else "–" for c in columns]
        lines.append("| " + " | ".join([label] + vals) + " |")
    return "\n".join(lines)


BREAKDOWN_COLUMNS = ("t_forward", "t_backward", "t_codec", "t_exchange_modeled")


def breakdown_rows(runs: list[RunRecord]) -> list[tuple[str, list[float], float]]:
    """(label, mean stage times in ms, mean total in ms) per configuration."""
    groups: dict[str, list[dict]] = defaultdict(list)
    for r in runs:
        scope, w = r.column
        groups[f"{r.row_label}, {scope}, W={w}"].extend(r.steps)
    out = []
    for label in sorted(groups, key=lambda g: (ROW_ORDER.index(g.split(",")[0]), g)):
        steps = groups[label]
        means = [1e3 * statistics.fmean(s[c] for s in steps) for c in BREAKDOWN_COLUMNS]
        total = 1e3 * statistics.fmean(sum(s[c] for c in BREAKDOWN_COLUMNS) for s in steps)
        out.append((label, means, total))
    return out


def time_breakdown(runs: list[RunRecord]) -> str:
    head = ["configuration", "forward ms (measured)", "backward ms (measured)", "codec ms (measured)",
            "exchange ms (modeled)", "total ms"]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for label, means, total in breakdown_rows(runs):
        lines.append("| " + " | ".join([label] + [f"{m:.3f}" for m in means] + [f"{total:.3f}"]) + " |")
    return "\n".join(lines)


def report(root: str | Path) -> str:
    runs = find_runs(Path(root))
    metric_names = {"linear": "final suboptimality", "mlp": "final eval accuracy"}
    kinds = sorted({metric_names[r.config.model.kind] for r in runs})
    return "\n".join([
        f"## Final metric by scheme, scope and workers ({', '.join(kinds)})",
        "",
        metric_grid(runs),
        "",
        "## Mean time per training step",
        "",
        time_breakdown(runs),
        "",
    ])
