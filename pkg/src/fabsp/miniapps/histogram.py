"""Histogram: every PE increments random buckets of a cyclically distributed table."""
from __future__ import annotations

import numpy as np

from ..selector import Actor
from .common import AppConfig, AppReport, digest, gen_indices, phase_stats, run_pes, sum_stats, timed_phase
from .oracles import serial_histogram


class HistogramActor(Actor):
    fmt = "q"

    def __init__(self, table: list, **kwargs):
        super().__init__(**kwargs)
        self.table = table

    def process(self, offset: int, sender: int) -> None:
        # handlers never overlap on a PE, so a plain increment is race-free
        self.table[offset] += 1


def _pe_main(ctx, cfg: AppConfig):
    P = ctx.npes
    table = [0] * cfg.table_per_pe
    idx = gen_indices(cfg.seed, ctx.rank, cfg.updates_per_pe, P * cfg.table_per_pe)

    def kernel():
        dest = (idx % P).tolist()
        offset = (idx // P).tolist()
        actor = HistogramActor(table, ring_capacity=cfg.ring_capacity, buffer_items=cfg.buffer_items)
        actor.start()
        send = actor.send
        for pe, off in zip(dest, offset):
            send(pe, off)
        actor.done()
        actor.wait()

    _, secs = timed_phase(ctx, kernel)
    return table, secs, phase_stats(ctx)


def histogram_table(parts: list[list[int]]) -> np.ndarray:
    """Interleave per-PE tables into global bucket order."""
    P = len(parts)
    T = len(parts[0])
    out = np.zeros(P * T, dtype=np.int64)
    for r, part in enumerate(parts):
        out[r::P] = part
    return out


def histogram_run(cfg: AppConfig) -> AppReport:
    cfg = cfg.resolved()
    res = run_pes(cfg, _pe_main, cfg)
    table = histogram_table([r[0] for r in res])
    valid = int(table.sum()) == cfg.npes * cfg.updates_per_pe
    if cfg.validate:
        expected = serial_histogram(cfg.seed, cfg.npes, cfg.updates_per_pe, cfg.table_per_pe)
        valid = valid and np.array_equal(table, expected)
    return AppReport("histogram", cfg, res[0][1], sum_stats([r[2] for r in res]), bool(valid),
                     digest(table), result=table)
