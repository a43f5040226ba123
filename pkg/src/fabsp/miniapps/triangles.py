"""Triangle counting on the lower-triangular adjacency of a random graph."""
from __future__ import annotations

from ..selector import Actor
from .common import (AppConfig, AppReport, assemble, digest, gen_lower_graph_rows, phase_stats,
                     run_pes, sum_stats, timed_phase)
from .oracles import triangles_dense


class ProbeActor(Actor):
    """A probe ``(local row j, k)`` closes a triangle when ``k`` is a neighbour of ``j``."""

    fmt = "qq"

    def __init__(self, rows: list, **kwargs):
        super().__init__(**kwargs)
        self.rows = rows
        self.count = 0

    def process(self, msg, sender):
        j, k = msg
        if k in self.rows[j]:
            self.count += 1


def count_triangles(ctx, part, ring_capacity: int, buffer_items: int) -> int:
    """Collective; returns the global triangle count."""
    P = ctx.npes
    row_lists = part.row_lists()
    actor = ProbeActor([frozenset(r) for r in row_lists], ring_capacity=ring_capacity,
                       buffer_items=buffer_items)
    actor.start()
    send = actor.send
    for cols in row_lists:
        # columns are sorted, so cols[:t] are exactly the k < j = cols[t]
        for t in range(1, len(cols)):
            j = cols[t]
            dest, jl = j % P, j // P
            for k in cols[:t]:
                send(dest, (jl, k))
    actor.done()
    actor.wait()
    return ctx.allreduce_sum(actor.count)


def _pe_main(ctx, cfg: AppConfig):
    part = gen_lower_graph_rows(cfg.seed, ctx.rank, ctx.npes, cfg.rows_per_pe, cfg.nnz_per_row)
    total, secs = timed_phase(ctx, count_triangles, ctx, part, cfg.ring_capacity, cfg.buffer_items)
    return part, total, secs, phase_stats(ctx)


def triangle_count_run(cfg: AppConfig) -> AppReport:
    cfg = cfg.resolved()
    res = run_pes(cfg, _pe_main, cfg)
    total = res[0][1]
    valid = all(r[1] == total for r in res)
    if cfg.validate:
        valid = valid and triangles_dense(assemble([r[0] for r in res])) == total
    return AppReport("triangles", cfg, res[0][2], sum_stats([r[3] for r in res]), bool(valid),
                     digest(total), result=total)
