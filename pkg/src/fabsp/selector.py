"""Actors and selectors over partitioned global mailboxes.

A :class:`Selector` is created collectively on every PE.  Each of its ``N``
mailboxes is partitioned across PEs: ``send(mailbox, pe, msg)`` delivers
``msg`` to the partition of ``mailbox`` that lives on ``pe``, where the
mailbox's handler runs as ``handler(msg, sender_pe)``.

Users never see buffers or termination bookkeeping.  ``send`` appends to a
small local ring; a communication task per mailbox drains the ring into a
:class:`~fabsp.conveyor.Conveyor`, pulls received messages and runs the
handler.  ``done(mailbox)`` promises that this PE sends nothing more to the
mailbox from outside the selector; mailboxes fed only by other mailboxes are
finished automatically by following the termination graph.

Example
-------
::

    class Histogram(Actor):
        fmt = "q"

        def __init__(self, table):
            super().__init__()
            self.table = table

        def process(self, offset, sender):
            self.table[offset] += 1

    def pe_main(ctx):
        table = [0] * 100
        h = Histogram(table)
        h.start()
        for g in indices:
            h.send(g % ctx.npes, g // ctx.npes)
        h.done()
        h.wait()
"""
from __future__ import annotations

from collections import deque
from graphlib import CycleError, TopologicalSorter
from typing import Any, Callable, Iterable, Optional, Sequence

from .conveyor import DEFAULT_BUFFER_ITEMS, Conveyor
from .fabric import PeContext, current_context
from .tasking import SignalSlot, current_task, spawn, yield_now

__all__ = [
    "OUTSIDE",
    "DEFAULT_RING_CAPACITY",
    "SelectorError",
    "HandlerError",
    "TerminationGraph",
    "Mailbox",
    "Selector",
    "Actor",
    "selector_start",
]

OUTSIDE = -1
DEFAULT_RING_CAPACITY = 64


class SelectorError(RuntimeError):
    """Misuse of a selector: send after done, done on a runtime-owned mailbox..."""


class HandlerError(RuntimeError):
    """A message handler raised; carries the mailbox, PE and sender."""

    def __init__(self, mailbox: int, pe: int, sender: int, msg: Any):
        super().__init__(f"handler of mailbox {mailbox} on PE {pe} failed on message {msg!r} from PE {sender}")
        self.mailbox = mailbox
        self.pe = pe
        self.sender = sender


class _DoneMarker:
    __slots__ = ()

    def __repr__(self) -> str:
        return "DONE"


DONE = _DoneMarker()


class TerminationGraph:
    """Acyclic dependency graph over mailboxes plus the virtual :data:`OUTSIDE` node.

    An edge ``x -> y`` means the handler of ``x`` may send to ``y``; an edge
    ``OUTSIDE -> y`` means code outside the selector sends to ``y`` and must
    call ``done(y)``.
    """

    def __init__(self, n: int, edges: Iterable[tuple[int, int]]):
        if n < 1:
            raise ValueError("a selector needs at least one mailbox")
        self.n = n
        self.edges: frozenset[tuple[int, int]] = frozenset(edges)
        preds: list[set[int]] = [set() for _ in range(n)]
        for src, dst in self.edges:
            if dst == OUTSIDE:
                raise ValueError("OUTSIDE cannot have incoming edges")
            if not (0 <= dst < n and (src == OUTSIDE or 0 <= src < n)):
                raise ValueError(f"edge {(src, dst)} references a mailbox outside [0, {n})")
            preds[dst].add(src)
        try:
            order = TopologicalSorter({v: preds[v] - {OUTSIDE} for v in range(n)}).static_order()
            self.order = tuple(order)
        except CycleError as exc:
            raise ValueError(f"termination graph has a cycle: {exc.args[1]}") from None
        self.predecessors = tuple(frozenset(p) for p in preds)
        succ: list[list[int]] = [[] for _ in range(n)]
        for src, dst in sorted(self.edges):
            if src != OUTSIDE:
                succ[src].append(dst)
        self.successors = tuple(tuple(s) for s in succ)

    @classmethod
    def linear(cls, n: int) -> "TerminationGraph":
        """``OUTSIDE -> 0 -> 1 -> ... -> n-1``."""
        return cls(n, [(OUTSIDE, 0)] + [(i, i + 1) for i in range(n - 1)])

    def outside_fed(self, mailbox: int) -> bool:
        return OUTSIDE in self.predecessors[mailbox]

    def __repr__(self) -> str:
        return f"TerminationGraph(n={self.n}, edges={sorted(self.edges)})"


class Mailbox:
    """One mailbox partition on one PE."""

    __slots__ = ("id", "ring", "capacity", "conveyor", "process", "completion",
                 "closed", "outside_done", "indegree", "handled")

    def __init__(self, mid: int, capacity: int):
        self.id = mid
        self.ring: deque = deque()
        self.capacity = capacity
        self.conveyor: Optional[Conveyor] = None
        self.process: Optional[Callable[[Any, int], Any]] = None
        self.completion = SignalSlot()
        self.closed = False         # DoneMarker enqueued
        self.outside_done = False   # user called done()
        self.indegree = 0
        self.handled = 0

    def __repr__(self) -> str:
        return f"<Mailbox {self.id} ring={len(self.ring)}/{self.capacity} closed={self.closed}>"


class Selector:
    """An actor with ``N`` partitioned global mailboxes.

    Subclasses either define ``process_0 ... process_{N-1}`` methods or assign
    ``self.mailbox[i].process`` in ``__init__``.  Construction and
    :meth:`start` are collective: every PE must build the same selectors in
    the same order with the same arguments.

    Parameters
    ----------
    mailboxes : int
        Number of mailboxes ``N``.
    fmt : str
        :mod:`struct` format of a message (single field means scalar messages).
    graph : TerminationGraph, optional
        Defaults to the linear graph ``OUTSIDE -> 0 -> ... -> N-1``.
    ring_capacity : int
        Packets the local outgoing ring of each mailbox holds before ``send``
        yields to the communication task.
    buffer_items : int
        Conveyor aggregation buffer size per destination.
    """

    fmt = "q"

    def __init__(self, mailboxes: int = 1, fmt: Optional[str] = None,
                 graph: Optional[TerminationGraph] = None,
                 ring_capacity: int = DEFAULT_RING_CAPACITY,
                 buffer_items: int = DEFAULT_BUFFER_ITEMS,
                 ctx: Optional[PeContext] = None):
        if ring_capacity < 1:
            raise ValueError("ring_capacity must be >= 1")
        self.ctx = ctx or current_context()
        self.npes = self.ctx.npes
        self.rank = self.ctx.rank
        if fmt is not None:
            self.fmt = fmt
        self.graph = graph or TerminationGraph.linear(mailboxes)
        if self.graph.n != mailboxes:
            raise ValueError(f"graph has {self.graph.n} nodes but selector has {mailboxes} mailboxes")
        self.buffer_items = buffer_items
        self.mailbox = [Mailbox(i, ring_capacity) for i in range(mailboxes)]
        for i, box in enumerate(self.mailbox):
            box.process = getattr(self, f"process_{i}", None)
            box.indegree = len(self.graph.predecessors[i])
        self.all_done = SignalSlot()
        self._started = False
        self._completed = 0
        self._active_handler: Optional[int] = None
        self._handler_task = None

    # -- lifecycle --------------------------------------------------------------
    def start(self) -> "Selector":
        """Begin one conveyor per mailbox and spawn its communication task."""
        if self._started:
            raise SelectorError("selector already started")
        if current_task() is None:
            raise SelectorError("selectors must be started from within a task")
        for box in self.mailbox:
            if box.process is None:
                raise SelectorError(f"mailbox {box.id} has no process handler")
        self._started = True
        for box in self.mailbox:
            box.conveyor = Conveyor(self.ctx, self.fmt, self.buffer_items)
        for box in self.mailbox:
            spawn(self._worker, box)
        for box in self.mailbox:
            if box.indegree == 0:
                self._close(box)
        return self

    def completion_future(self) -> SignalSlot:
        """Filled once every mailbox of this selector has completed on this PE."""
        return self.all_done

    def wait(self) -> None:
        self.all_done.wait()

    # -- user API -----------------------------------------------------------------
    def send(self, mailbox: int, pe: int, msg: Any) -> None:
        """Queue ``msg`` for the partition of ``mailbox`` on PE ``pe``.

        Never drops and never fails; yields to the communication tasks while
        the mailbox's ring is full.
        """
        box = self.mailbox[mailbox]
        if box.closed or (box.outside_done and current_task() is not self._handler_task):
            raise SelectorError(f"send to mailbox {mailbox} on PE {self.rank} after done")
        if not 0 <= pe < self.npes:
            raise ValueError(f"destination PE {pe} out of range [0, {self.npes})")
        ring = box.ring
        while len(ring) >= box.capacity:
            yield_now(idle=True)
        ring.append((pe, msg))

    def done(self, mailbox: int = 0) -> None:
        """Declare that this PE sends nothing more to ``mailbox`` from outside the selector."""
        if not self._started:
            raise SelectorError("done() before start()")
        box = self.mailbox[mailbox]
        if not self.graph.outside_fed(mailbox):
            raise SelectorError(
                f"mailbox {mailbox} is only fed by other mailboxes; the runtime issues its done")
        if box.outside_done:
            raise SelectorError(f"done({mailbox}) called twice on PE {self.rank}")
        box.outside_done = True
        self._drop_edge(box)

    # -- runtime internals -----------------------------------------------------------
    def _drop_edge(self, box: Mailbox) -> None:
        box.indegree -= 1
        if box.indegree == 0:
            self._close(box)

    def _close(self, box: Mailbox) -> None:
        ring = box.ring
        while len(ring) >= box.capacity:
            yield_now(idle=True)
        box.closed = True
        ring.append(DONE)

    def _worker(self, box: Mailbox) -> None:
        ring = box.ring
        while not ring:
            yield_now(idle=True)
        conv = box.conveyor
        push = conv.push
        pull = conv.pull
        handler = box.process
        rank = self.rank
        saw_done = False
        before = conv.progress
        while conv.advance(saw_done):
            pushed = 0
            while ring:
                pkt = ring[0]
                if pkt is DONE:
                    ring.popleft()
                    saw_done = True
                    pushed += 1
                    break
                if not push(*pkt):
                    break
                ring.popleft()
                pushed += 1
            handled = 0
            # handlers of one selector never overlap on a PE, even when one is
            # suspended inside a nested send
            if self._active_handler is None:
                self._active_handler = box.id
                self._handler_task = current_task()
                try:
                    got = pull()
                    while got is not None:
                        msg, sender = got
                        try:
                            handler(msg, sender)
                        except Exception as exc:
                            raise HandlerError(box.id, rank, sender, msg) from exc
                        handled += 1
                        got = pull()
                finally:
                    self._active_handler = None
                    self._handler_task = None
                box.handled += handled
            yield_now(idle=not (pushed or handled or conv.progress != before))
            before = conv.progress
        box.completion.put(True)
        self._on_mailbox_complete(box)

    def _on_mailbox_complete(self, box: Mailbox) -> None:
        for succ in self.graph.successors[box.id]:
            self._drop_edge(self.mailbox[succ])
        self._completed += 1
        if self._completed == len(self.mailbox):
            self.all_done.put(True)

    def stats(self):
        """Aggregate conveyor counters of all mailboxes on this PE."""
        from .conveyor import ConveyorStats
        total = ConveyorStats()
        for box in self.mailbox:
            if box.conveyor is not None:
                total = total + box.conveyor.stats()
        return total


class Actor(Selector):
    """A selector with a single mailbox; subclasses define ``process(msg, sender)``."""

    def __init__(self, fmt: Optional[str] = None, **kwargs: Any):
        super().__init__(1, fmt, **kwargs)
        self.mailbox[0].process = self.process

    def process(self, msg: Any, sender: int) -> None:
        raise NotImplementedError

    def send(self, pe: int, msg: Any) -> None:  # type: ignore[override]
        box = self.mailbox[0]
        if box.closed or (box.outside_done and current_task() is not self._handler_task):
            raise SelectorError(f"send to actor on PE {self.rank} after done")
        if not 0 <= pe < self.npes:
            raise ValueError(f"destination PE {pe} out of range [0, {self.npes})")
        ring = box.ring
        while len(ring) >= box.capacity:
            yield_now(idle=True)
        ring.append((pe, msg))

    def done(self) -> None:  # type: ignore[override]
        Selector.done(self, 0)


def selector_start(n: int, fmt: str, graph: Optional[TerminationGraph],
                   handlers: Sequence[Callable[[Any, int], Any]], **kwargs: Any) -> Selector:
    """Build and start a selector from plain handler callables."""
    if len(handlers) != n:
        raise ValueError(f"expected {n} handlers, got {len(handlers)}")
    sel = Selector(n, fmt, graph, **kwargs)
    for box, h in zip(sel.mailbox, handlers):
        box.process = h
    return sel.start()
