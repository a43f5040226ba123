"""Apply a row and a column permutation to a row-distributed sparse pattern."""
from __future__ import annotations

import numpy as np

from ..selector import Selector
from .common import (STREAM_PERM, AppConfig, AppReport, SparseMatrixPartition, assemble, digest,
                     gen_er_rows, phase_stats, run_pes, sum_stats, timed_phase)
from .oracles import serial_permute

REQUEST, PLACE = 0, 1


def gen_permutations(seed: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column permutations of ``range(n)``."""
    rng = np.random.default_rng([seed, STREAM_PERM])
    return rng.permutation(n).astype(np.int64), rng.permutation(n).astype(np.int64)


class PermuteSelector(Selector):
    """Entries visit their column owner, which knows the column's image, then their new row.

    REQUEST carries ``(local column, new global row)``; PLACE carries
    ``(new local row, new global column)``.
    """

    fmt = "qq"

    def __init__(self, col_image: list, out_rows: list, **kwargs):
        super().__init__(2, **kwargs)
        self.col_image = col_image
        self.out_rows = out_rows

    def process_0(self, msg, sender):
        col_local, new_row = msg
        P = self.npes
        self.send(PLACE, new_row % P, (new_row // P, self.col_image[col_local]))

    def process_1(self, msg, sender):
        row_local, new_col = msg
        self.out_rows[row_local].append(new_col)


def distributed_permute(ctx, part: SparseMatrixPartition, row_image: list, col_image: list,
                        ring_capacity: int, buffer_items: int) -> SparseMatrixPartition:
    """Collective; ``row_image``/``col_image`` hold the images of this PE's rows/columns."""
    P, me = ctx.npes, ctx.rank
    out_rows: list[list[int]] = [[] for _ in range(part.nrows_local)]
    sel = PermuteSelector(col_image, out_rows, ring_capacity=ring_capacity, buffer_items=buffer_items)
    sel.start()
    send = sel.send
    for l, cols in enumerate(part.row_lists()):
        new_row = row_image[l]
        for c in cols:
            send(REQUEST, c % P, (c // P, new_row))
    sel.done(REQUEST)
    sel.wait()
    for lst in out_rows:
        lst.sort()
    return SparseMatrixPartition.from_rows(part.nrows_global, part.ncols_global, me, P, out_rows)


def _pe_main(ctx, cfg: AppConfig, row_perm: np.ndarray, col_perm: np.ndarray):
    P, me = ctx.npes, ctx.rank
    part = gen_er_rows(cfg.seed, me, P, cfg.rows_per_pe, cfg.nnz_per_row)
    row_image = row_perm[me::P].tolist()
    col_image = col_perm[me::P].tolist()
    out, secs = timed_phase(ctx, distributed_permute, ctx, part, row_image, col_image,
                            cfg.ring_capacity, cfg.buffer_items)
    out.check()
    ok = ctx.allreduce_sum(out.nnz) == ctx.allreduce_sum(part.nnz)
    return part, out, secs, phase_stats(ctx), ok


def permute_run(cfg: AppConfig) -> AppReport:
    cfg = cfg.resolved()
    n = cfg.npes * cfg.rows_per_pe
    row_perm, col_perm = gen_permutations(cfg.seed, n)
    res = run_pes(cfg, _pe_main, cfg, row_perm, col_perm)
    parts = [r[1] for r in res]
    valid = all(r[4] for r in res)
    if cfg.validate:
        original = assemble([r[0] for r in res])
        valid = valid and assemble(parts) == serial_permute(original, row_perm, col_perm)
    checksum = digest(*[a for p in parts for a in (p.offsets, p.cols)])
    return AppReport("permute", cfg, res[0][2], sum_stats([r[3] for r in res]), bool(valid),
                     checksum, result=parts)
