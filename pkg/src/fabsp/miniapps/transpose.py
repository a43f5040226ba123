"""Sparse transpose of a cyclically row-distributed pattern."""
from __future__ import annotations

import numpy as np

from ..selector import Actor
from .common import (AppConfig, AppReport, SparseMatrixPartition, assemble, digest, gen_er_rows,
                     phase_stats, run_pes, sum_stats, timed_phase)
from .oracles import serial_transpose


class TransposeActor(Actor):
    """Message ``(local column, global row)`` lands in the column owner's row list."""

    fmt = "qq"

    def __init__(self, rows_of: list, **kwargs):
        super().__init__(**kwargs)
        self.rows_of = rows_of

    def process(self, msg, sender):
        col_local, row = msg
        self.rows_of[col_local].append(row)


def distributed_transpose(ctx, part: SparseMatrixPartition, ring_capacity: int,
                          buffer_items: int) -> SparseMatrixPartition:
    """Collective: return this PE's rows of the transpose of the distributed ``part``."""
    P, me = ctx.npes, ctx.rank
    n_local_cols = len(range(me, part.ncols_global, P))
    rows_of: list[list[int]] = [[] for _ in range(n_local_cols)]
    actor = TransposeActor(rows_of, ring_capacity=ring_capacity, buffer_items=buffer_items)
    actor.start()
    send = actor.send
    for l, cols in enumerate(part.row_lists()):
        r = l * P + me
        for c in cols:
            send(c % P, (c // P, r))
    actor.done()
    actor.wait()
    for lst in rows_of:
        lst.sort()
    return SparseMatrixPartition.from_rows(part.ncols_global, part.nrows_global, me, P, rows_of)


def _same(a: SparseMatrixPartition, b: SparseMatrixPartition) -> bool:
    return np.array_equal(a.offsets, b.offsets) and np.array_equal(a.cols, b.cols)


def _pe_main(ctx, cfg: AppConfig):
    part = gen_er_rows(cfg.seed, ctx.rank, ctx.npes, cfg.rows_per_pe, cfg.nnz_per_row)
    t, secs = timed_phase(ctx, distributed_transpose, ctx, part, cfg.ring_capacity, cfg.buffer_items)
    stats = phase_stats(ctx)
    tt = distributed_transpose(ctx, t, cfg.ring_capacity, cfg.buffer_items)
    t.check()
    return part, t, secs, stats, _same(part, tt)


def transpose_run(cfg: AppConfig) -> AppReport:
    cfg = cfg.resolved()
    res = run_pes(cfg, _pe_main, cfg)
    parts = [r[1] for r in res]
    valid = all(r[4] for r in res)
    if cfg.validate:
        valid = valid and assemble(parts) == serial_transpose(assemble([r[0] for r in res]))
    checksum = digest(*[a for p in parts for a in (p.offsets, p.cols)])
    return AppReport("transpose", cfg, res[0][2], sum_stats([r[3] for r in res]), bool(valid),
                     checksum, result=parts)
