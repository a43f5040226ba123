"""Command-line benchmark runner for the mini-apps.

Examples
--------
::

    python -m fabsp --app histogram --pes 8 --updates-per-pe 100000
    FABSP_PES=2 fabsp-bench --app all --format csv

Exit status is 0 when every run is valid (or validation is off), 1 when a
run fails its checker or crashes, and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

from .fabric import SpmdError
from .miniapps import APP_NAMES, AppConfig, AppReport, run_app

__all__ = ["RunStats", "parse_args", "build_configs", "run_benchmark", "emit_report", "main"]

PES_ENV = "FABSP_PES"
EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2

_SIZE_FLAGS = ("updates_per_pe", "table_per_pe", "reads_per_pe", "rows_per_pe", "nnz_per_row",
               "elements_per_pe")


@dataclass
class RunStats:
    """One report record; field names are the stable json/csv keys.

    ``frames_sent_total`` counts data frames, so ``aggregation_ratio`` is the
    mean number of messages per shipped buffer.
    """

    app: str
    pes: int
    sizes: dict
    seed: int
    wall_time_seconds: float
    items_sent_total: int
    frames_sent_total: int
    aggregation_ratio: float
    valid: bool
    checksum: str
    rounds: Optional[int] = None

    @classmethod
    def from_report(cls, report: AppReport) -> "RunStats":
        cfg = report.config
        items = report.stats.items_pushed
        frames = report.stats.data_frames_sent
        return cls(report.app, cfg.npes, cfg.sizes(), cfg.seed, report.wall_time_seconds, items, frames,
                   items / frames if frames else 0.0, report.valid, f"{report.checksum:016x}",
                   report.rounds)

    @classmethod
    def from_dict(cls, d: dict) -> "RunStats":
        return cls(**{f.name: d[f.name] for f in fields(cls)})

    def to_dict(self) -> dict:
        return asdict(self)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _count(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _density(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fabsp-bench", description="Run FA-BSP mini-app benchmarks.")
    p.add_argument("--app", required=True, choices=APP_NAMES + ("all",),
                   help="mini-app to run, or 'all' for every app in turn")
    p.add_argument("--pes", type=_positive_int, default=None,
                   help=f"number of PEs (default: ${PES_ENV} or 4)")
    p.add_argument("--updates-per-pe", type=_count)
    p.add_argument("--table-per-pe", type=_count)
    p.add_argument("--reads-per-pe", type=_count)
    p.add_argument("--rows-per-pe", type=_count)
    p.add_argument("--nnz-per-row", type=_density)
    p.add_argument("--elements-per-pe", type=_count)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--buffer-items", type=_positive_int, default=1024, help="aggregation buffer B")
    p.add_argument("--ring-capacity", type=_positive_int, default=64, help="selector ring capacity C")
    p.add_argument("--inbox-capacity", type=_positive_int, default=64, help="frames per PE inbox")
    p.add_argument("--format", choices=("json", "csv", "human"), default="json")
    p.add_argument("--validate", choices=("on", "off"), default="on")
    return p


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse and validate; exits with status 2 on bad input."""
    parser = _parser()
    args = parser.parse_args(argv)
    if args.pes is None:
        env = os.environ.get(PES_ENV)
        if env is None:
            args.pes = 4
        else:
            try:
                args.pes = _positive_int(env)
            except (ValueError, argparse.ArgumentTypeError):
                parser.error(f"{PES_ENV} must be a positive integer, got {env!r}")
    return args


def build_configs(args: argparse.Namespace) -> list[AppConfig]:
    apps = APP_NAMES if args.app == "all" else (args.app,)
    configs = []
    for app in apps:
        sizes = {k: getattr(args, k) for k in _SIZE_FLAGS if getattr(args, k) is not None}
        configs.append(AppConfig(app, npes=args.pes, seed=args.seed, buffer_items=args.buffer_items,
                                 ring_capacity=args.ring_capacity, inbox_capacity=args.inbox_capacity,
                                 validate=args.validate == "on", **sizes).resolved())
    return configs


def run_benchmark(cfg: AppConfig) -> RunStats:
    return RunStats.from_report(run_app(cfg))


def emit_report(stats: Sequence[RunStats], fmt: str) -> str:
    """Render records as json lines, csv (header plus rows) or an aligned table."""
    if fmt == "json":
        return "".join(json.dumps(s.to_dict()) + "\n" for s in stats)
    names = [f.name for f in fields(RunStats)]
    rows = []
    for s in stats:
        d = s.to_dict()
        d["sizes"] = ";".join(f"{k}={v}" for k, v in d["sizes"].items())
        d["rounds"] = "" if d["rounds"] is None else d["rounds"]
        rows.append(d)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    if fmt == "human":
        for d in rows:
            d["wall_time_seconds"] = f"{d['wall_time_seconds']:.4f}"
            d["aggregation_ratio"] = f"{d['aggregation_ratio']:.1f}"
        table = [names] + [[str(d[n]) for n in names] for d in rows]
        widths = [max(len(r[i]) for r in table) for i in range(len(names))]
        return "".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n" for r in table)
    raise ValueError(f"unknown format {fmt!r}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    try:
        configs = build_configs(args)
    except ValueError as exc:
        print(f"fabsp-bench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    results = []
    status = EXIT_OK
    for cfg in configs:
        try:
            st = run_benchmark(cfg)
        except (SpmdError, RuntimeError, ValueError) as exc:
            print(f"fabsp-bench: {cfg.app} failed: {exc}", file=sys.stderr)
            status = EXIT_INVALID
            continue
        if cfg.validate and not st.valid:
            print(f"fabsp-bench: {cfg.app} failed validation (P={cfg.npes}, seed={cfg.seed})", file=sys.stderr)
            status = EXIT_INVALID
        results.append(st)
    sys.stdout.write(emit_report(results, args.format))
    return status


if __name__ == "__main__":
    sys.exit(main())
