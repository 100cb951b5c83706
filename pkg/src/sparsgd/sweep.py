"""Cartesian sweeps over config keys.

A grid file names a base config and the values to try::

    [sweep]
    base = base.ini
    output_dir = runs/sweep
    jobs = 2

    [grid]
    compressor.kind = topk, randomk, blockrandomk
    cluster.world_size = 1, 2, 4

Each combination runs in its own subdirectory of ``output_dir``.
Combinations that fail validation (say top-k with allreduce) are skipped,
so leave ``cluster.scheme`` out of the base file unless it is fixed.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import from_parser, load_config, parse_text
from .errors import ConfigError, MetricsFileError
from .runner import run

log = logging.getLogger(__name__)


def _run_one(args):
    cfg, out = args
    run(cfg, out)
    return str(out)


def expand(grid_path: str | Path):
    """Yield (name, RunConfig) for every valid grid point."""
    grid_path = Path(grid_path)
    try:
        parser = parse_text(grid_path.read_text(), str(grid_path))
    except OSError as exc:
        raise MetricsFileError(f"cannot read grid {grid_path}: {exc}") from exc
    if "sweep" not in parser or "base" not in parser["sweep"]:
        raise ConfigError(f"{grid_path}: [sweep] base = <config> is required", rule="sweep-base")
    base_path = grid_path.parent / parser["sweep"]["base"].strip()
    load_config(base_path)  # fail early on a broken base
    base_text = base_path.read_text()
    axes = []
    for key, raw in (parser["grid"].items() if "grid" in parser else []):
        if "." not in key:
            raise ConfigError(f"grid key {key!r} must look like section.key", rule="sweep-key")
        axes.append((key, [v.strip() for v in raw.split(",") if v.strip()]))
    for combo in itertools.product(*[vals for _, vals in axes]):
        # overlay onto the raw base file so unset keys keep their derived defaults
        p = parse_text(base_text, str(base_path))
        for (key, _), value in zip(axes, combo):
            section, option = key.split(".", 1)
            if section not in p:
                p.add_section(section)
            p[section][option] = value
        name = ",".join(f"{k.split('.', 1)[1]}={v}" for (k, _), v in zip(axes, combo)) or "base"
        try:
            cfg = from_parser(p)
        except ConfigError as exc:
            log.warning("skipping %s: %s", name, exc)
            continue
        yield name, cfg


def sweep(grid_path: str | Path, jobs: int | None = None) -> list[str]:
    grid_path = Path(grid_path)
    parser = parse_text(grid_path.read_text(), str(grid_path))
    section = parser["sweep"] if "sweep" in parser else {}
    out_root = Path(section.get("output_dir", "runs/sweep"))
    if not out_root.is_absolute():
        out_root = grid_path.parent / out_root
    jobs = jobs or int(section.get("jobs", "1"))
    work = [(cfg, out_root / name) for name, cfg in expand(grid_path)]
    if not work:
        raise ConfigError(f"{grid_path}: no valid grid points", rule="sweep-empty")
    if jobs <= 1:
        return [_run_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, work))
