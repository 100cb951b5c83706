"""Command line entry point: ``sparsgd {train,bench,report,sweep}``.

Exit codes: 0 success, 1 configuration error, 2 numerical divergence,
3 I/O or metrics-file error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError, MetricsFileError, ProtocolViolation, StructureError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("sparsgd")


def cmd_train(args) -> int:
    from .config import load_config
    from .runner import run

    cfg = load_config(args.config)
    run(cfg, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench_codecs, format_table

    rows = bench_codecs(
        args.dim, args.fraction, args.reps, warmup=args.warmup, seed=args.seed, dtype=np.dtype(args.dtype)
    )
    table = format_table(rows)
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import report

    text = report(args.dir)
    print(text)
    if not args.no_write:
        (Path(args.dir) / "report.md").write_text(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .report import report
    from .sweep import sweep

    dirs = sweep(args.grid, jobs=args.jobs)
    log.info("%d runs finished", len(dirs))
    root = Path(dirs[0]).parent
    text = report(root)
    (root / "report.md").write_text(text)
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsgd", description="Sparsified SGD with error feedback on a simulated cluster")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one configuration")
    p.add_argument("--config", required=True, help="path to the run config (INI)")
    p.add_argument("--out", default=None, help="output directory (overrides [run] output_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="time compress + decompress per scheme")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--fraction", type=float, default=0.01)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.add_argument("--out", default=None, help="also write the table here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="summarise finished runs as markdown")
    p.add_argument("--dir", required=True)
    p.add_argument("--no-write", action="store_true", help="print only, do not write report.md")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="run a grid of configurations")
    p.add_argument("--grid", required=True)
    p.add_argument("--jobs", type=int, default=None, help="concurrent runs (default: [sweep] jobs)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, StructureError, ProtocolViolation) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DivergenceError as exc:
        log.error("divergence: %s", exc)
        return EXIT_DIVERGED
    except (MetricsFileError, OSError) as exc:
        log.error("i/o error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
