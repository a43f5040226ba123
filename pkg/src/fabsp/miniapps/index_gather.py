"""Index-gather: read random entries of a distributed table through a Request/Response selector."""
from __future__ import annotations

import numpy as np

from ..selector import OUTSIDE, Selector, TerminationGraph
from .common import AppConfig, AppReport, digest, gen_indices, phase_stats, run_pes, sum_stats, timed_phase

REQUEST, RESPONSE = 0, 1


class IndexGatherSelector(Selector):
    """Request carries ``(local offset, slot)``; Response carries ``(value, slot)``."""

    fmt = "qq"

    def __init__(self, data: list, gather: list, **kwargs):
        super().__init__(2, graph=TerminationGraph(2, [(OUTSIDE, REQUEST), (REQUEST, RESPONSE)]), **kwargs)
        self.data = data
        self.gather = gather

    def process_0(self, msg, sender):
        offset, slot = msg
        self.send(RESPONSE, sender, (self.data[offset], slot))

    def process_1(self, msg, sender):
        value, slot = msg
        self.gather[slot] = value


def table_value(g):
    """Fill rule of the distributed table: entry ``g`` holds ``2g + 1``."""
    return 2 * g + 1


def _pe_main(ctx, cfg: AppConfig):
    P, me = ctx.npes, ctx.rank
    data = [table_value(l * P + me) for l in range(cfg.table_per_pe)]
    idx = gen_indices(cfg.seed, me, cfg.reads_per_pe, P * cfg.table_per_pe)
    gather = [0] * cfg.reads_per_pe

    def kernel():
        dest = (idx % P).tolist()
        offset = (idx // P).tolist()
        sel = IndexGatherSelector(data, gather, ring_capacity=cfg.ring_capacity,
                                  buffer_items=cfg.buffer_items)
        sel.start()
        send = sel.send
        for i, (pe, off) in enumerate(zip(dest, offset)):
            send(REQUEST, pe, (off, i))
        sel.done(REQUEST)
        sel.wait()

    _, secs = timed_phase(ctx, kernel)
    gathered = np.asarray(gather, dtype=np.int64)
    ok = bool(np.array_equal(gathered, table_value(idx)))
    return gathered, secs, phase_stats(ctx), ok


def index_gather_run(cfg: AppConfig) -> AppReport:
    cfg = cfg.resolved()
    res = run_pes(cfg, _pe_main, cfg)
    valid = all(r[3] for r in res)
    gathered = [r[0] for r in res]
    return AppReport("ig", cfg, res[0][1], sum_stats([r[2] for r in res]), valid,
                     digest(*gathered), result=gathered)
