"""Random permutation by dart throwing into a cyclically distributed target."""
from __future__ import annotations

import math

import numpy as np

from ..selector import Actor, Selector
from .common import (STREAM_DARTS, AppConfig, AppReport, digest, phase_stats, rank_rng, run_pes,
                     sum_stats, timed_phase)
from .oracles import is_permutation, serial_randperm

CLAIM, REPLY = 0, 1
# target slots per output element; a half-empty target keeps late rounds short
TARGET_FACTOR = 2


def max_rounds(m: int) -> int:
    return 10 * math.ceil(math.log2(max(m, 1))) + 50


class DartSelector(Selector):
    """CLAIM carries ``(local slot, local dart)``; REPLY carries ``(local dart, accepted)``."""

    fmt = "qq"

    def __init__(self, target: list, rejected: list, **kwargs):
        super().__init__(2, **kwargs)
        self.target = target
        self.rejected = rejected

    def process_0(self, msg, sender):
        slot, dart = msg
        target = self.target
        if target[slot] < 0:
            target[slot] = dart * self.npes + sender
            self.send(REPLY, sender, (dart, 1))
        else:
            self.send(REPLY, sender, (dart, 0))

    def process_1(self, msg, sender):
        dart, accepted = msg
        if not accepted:
            self.rejected.append(dart)


class PlaceActor(Actor):
    """Writes ``(local position, value)`` into the cyclic output array."""

    fmt = "qq"

    def __init__(self, out: list, **kwargs):
        super().__init__(**kwargs)
        self.out = out

    def process(self, msg, sender):
        pos, value = msg
        self.out[pos] = value


def _throw(ctx, cfg: AppConfig):
    P, me = ctx.npes, ctx.rank
    m = P * cfg.elements_per_pe
    slots = TARGET_FACTOR * m
    target = [-1] * len(range(me, slots, P))
    rng = rank_rng(cfg.seed, me, STREAM_DARTS)
    unplaced = list(range(cfg.elements_per_pe))
    cap = max_rounds(m)
    rounds = 0
    while ctx.allreduce_sum(len(unplaced)):
        if rounds >= cap:
            return None, rounds
        rounds += 1
        throws = rng.integers(0, slots, size=len(unplaced), dtype=np.int64) if unplaced else np.zeros(0, np.int64)
        rejected: list[int] = []
        sel = DartSelector(target, rejected, ring_capacity=cfg.ring_capacity, buffer_items=cfg.buffer_items)
        sel.start()
        send = sel.send
        for dart, slot in zip(unplaced, throws.tolist()):
            send(CLAIM, slot % P, (slot // P, dart))
        sel.done(CLAIM)
        sel.wait()
        rejected.sort()
        unplaced = rejected

    # compaction: occupied slots keep their order, PE by PE
    values = [v for v in target if v >= 0]
    offset, _ = ctx.scan_sum(len(values))
    out = [-1] * cfg.elements_per_pe
    placer = PlaceActor(out, ring_capacity=cfg.ring_capacity, buffer_items=cfg.buffer_items)
    placer.start()
    for i, v in enumerate(values):
        pos = offset + i
        placer.send(pos % P, (pos // P, v))
    placer.done()
    placer.wait()
    return out, rounds


def _pe_main(ctx, cfg: AppConfig):
    (out, rounds), secs = timed_phase(ctx, _throw, ctx, cfg)
    return out, rounds, secs, phase_stats(ctx)


def gather_cyclic(parts: list[list[int]]) -> np.ndarray:
    P = len(parts)
    out = np.empty(sum(len(p) for p in parts), dtype=np.int64)
    for r, p in enumerate(parts):
        out[r::P] = p
    return out


def random_permutation_run(cfg: AppConfig) -> AppReport:
    cfg = cfg.resolved()
    m = cfg.npes * cfg.elements_per_pe
    res = run_pes(cfg, _pe_main, cfg)
    rounds = res[0][1]
    stats = sum_stats([r[3] for r in res])
    if res[0][0] is None:
        return AppReport("randperm", cfg, res[0][2], stats, False, 0, rounds=rounds,
                         notes=f"dart throwing exceeded {max_rounds(m)} rounds")
    perm = gather_cyclic([r[0] for r in res])
    valid = is_permutation(perm, m)
    if cfg.validate and cfg.npes == 1:
        expected, _ = serial_randperm(cfg.seed, m, max_rounds(m))
        valid = valid and np.array_equal(perm, expected)
    return AppReport("randperm", cfg, res[0][2], stats, bool(valid), digest(perm), rounds=rounds,
                     result=perm)
