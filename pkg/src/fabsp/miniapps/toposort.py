"""Recover row and column orders that make a scrambled unit upper-triangular pattern triangular."""
from __future__ import annotations

import numpy as np

from ..selector import Selector
from .common import (AppConfig, AppReport, SparseMatrixPartition, digest, gen_scrambled_triangular,
                     partition, run_pes, sum_stats, timed_phase)
from .oracles import is_unit_upper_triangular, serial_toposort
from .transpose import distributed_transpose

COLUMN, DECREMENT = 0, 1


class PeelSelector(Selector):
    """COLUMN carries ``(local column, position)``; DECREMENT carries ``(local row, column)``."""

    fmt = "qq"

    def __init__(self, state: "_PeState", **kwargs):
        super().__init__(2, **kwargs)
        self.state = state

    def process_0(self, msg, sender):
        col_local, pos = msg
        st = self.state
        st.col_pos[col_local] = pos
        c = col_local * self.npes + self.rank
        P = self.npes
        for r in st.col_rows[col_local]:
            self.send(DECREMENT, r % P, (r // P, c))

    def process_1(self, msg, sender):
        row_local, c = msg
        st = self.state
        st.count[row_local] -= 1
        st.rowsum[row_local] -= c
        if st.count[row_local] == 1:
            st.next_ready.append(row_local)


class _PeState:
    def __init__(self, part: SparseMatrixPartition, tpart: SparseMatrixPartition):
        rows = part.row_lists()
        self.count = [len(r) for r in rows]
        self.rowsum = [sum(r) for r in rows]
        self.col_rows = tpart.row_lists()
        self.row_pos = [-1] * part.nrows_local
        self.col_pos = [-1] * tpart.nrows_local
        self.next_ready: list[int] = []


def toposort(ctx, part: SparseMatrixPartition, tpart: SparseMatrixPartition, ring_capacity: int,
             buffer_items: int) -> tuple[_PeState, int, bool]:
    """Collective peeling; returns (state, rounds, complete)."""
    P = ctx.npes
    n = part.nrows_global
    st = _PeState(part, tpart)
    ready = [l for l, k in enumerate(st.count) if k == 1]
    resolved = 0
    rounds = 0
    while True:
        offset, total = ctx.scan_sum(len(ready))
        if total == 0:
            break
        rounds += 1
        base = n - 1 - resolved - offset
        st.next_ready = []
        sel = PeelSelector(st, ring_capacity=ring_capacity, buffer_items=buffer_items)
        sel.start()
        for i, l in enumerate(ready):
            pos = base - i
            st.row_pos[l] = pos
            c = st.rowsum[l]
            sel.send(COLUMN, c % P, (c // P, pos))
        sel.done(COLUMN)
        sel.wait()
        resolved += total
        row_pos, count = st.row_pos, st.count
        ready = sorted({l for l in st.next_ready if count[l] == 1 and row_pos[l] < 0})
    return st, rounds, resolved == n


def _pe_main(ctx, cfg: AppConfig, mat):
    P, me = ctx.npes, ctx.rank
    part = partition(mat, me, P)
    tpart = distributed_transpose(ctx, part, cfg.ring_capacity, cfg.buffer_items)
    first = len(ctx.conveyors)
    (st, rounds, complete), secs = timed_phase(ctx, toposort, ctx, part, tpart, cfg.ring_capacity,
                                               cfg.buffer_items)
    stats = sum_stats([c.stats() for c in ctx.conveyors[first:]])
    return st.row_pos, st.col_pos, rounds, complete, secs, stats


def _interleave(parts: list[list[int]], n: int) -> np.ndarray:
    out = np.empty(n, dtype=np.int64)
    for r, p in enumerate(parts):
        out[r::len(parts)] = p
    return out


def topological_sort_run(cfg: AppConfig) -> AppReport:
    cfg = cfg.resolved()
    n = cfg.npes * cfg.rows_per_pe
    mat, _, _ = gen_scrambled_triangular(cfg.seed, n, cfg.nnz_per_row)
    res = run_pes(cfg, _pe_main, cfg, mat)
    row_pos = _interleave([r[0] for r in res], n)
    col_pos = _interleave([r[1] for r in res], n)
    rounds = res[0][2]
    complete = all(r[3] for r in res)
    valid = complete and is_unit_upper_triangular(mat, row_pos, col_pos)
    notes = "" if complete else "peeling stalled: input is not a permuted unit upper-triangular pattern"
    if valid and cfg.validate and cfg.npes == 1:
        expected_rows, expected_cols, _ = serial_toposort(mat)
        valid = np.array_equal(row_pos, expected_rows) and np.array_equal(col_pos, expected_cols)
    return AppReport("toposort", cfg, res[0][4], sum_stats([r[5] for r in res]), bool(valid),
                     digest(row_pos, col_pos), rounds=rounds, result=(row_pos, col_pos), notes=notes)
