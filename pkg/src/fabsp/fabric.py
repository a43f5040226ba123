"""SPMD execution fabric.

Launches ``P`` PEs as threads of one process, each running its own
cooperative :class:`~fabsp.tasking.Scheduler`.  PEs share nothing but the
:class:`Transport`, a set of bounded per-PE inboxes carrying
:class:`BufferFrame` values.  Everything collective (barrier, reductions) is
built on top of that transport.
"""
from __future__ import annotations

import enum
import struct
import threading
import time
import traceback
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Any, Callable, Optional

from .tasking import DeadlockError, Scheduler, current_task, yield_now

__all__ = [
    "FabricError",
    "FabricAborted",
    "SpmdError",
    "FabricConfig",
    "PartitionedLayout",
    "FrameKind",
    "BufferFrame",
    "Transport",
    "PeContext",
    "Fabric",
    "launch_spmd",
    "current_context",
    "my_pe",
    "n_pes",
]

_tls = threading.local()
_INT = struct.Struct("<q")
_IDLE_POLL_SECONDS = 0.05


class FabricError(RuntimeError):
    pass


class FabricAborted(FabricError):
    """Raised on a PE when another PE failed and the run is being torn down."""


class SpmdError(FabricError):
    """One or more PEs failed.  ``errors`` maps rank to the formatted traceback."""

    def __init__(self, message: str, errors: dict[int, str]):
        super().__init__(message)
        self.errors = errors


@dataclass(frozen=True)
class FabricConfig:
    """Fabric parameters.

    ``deadlock_timeout`` (seconds) turns a PE that has been idle that long
    without any incoming traffic into a :class:`~fabsp.tasking.DeadlockError`;
    ``None`` waits forever.
    """

    npes: int = 4
    inbox_capacity: int = 64
    seed: int = 0
    deadlock_timeout: Optional[float] = None

    def __post_init__(self):
        if self.npes < 1:
            raise ValueError(f"npes must be >= 1, got {self.npes}")
        if self.inbox_capacity < 1:
            raise ValueError(f"inbox_capacity must be >= 1, got {self.inbox_capacity}")


class PartitionedLayout:
    """Cyclic global index space: global ``g`` lives on PE ``g % P`` at offset ``g // P``."""

    __slots__ = ("npes",)

    def __init__(self, npes: int):
        if npes < 1:
            raise ValueError("npes must be >= 1")
        self.npes = npes

    def owner_of(self, g: int) -> int:
        return g % self.npes

    def local_of(self, g: int) -> int:
        return g // self.npes

    def global_of(self, pe: int, local: int) -> int:
        return local * self.npes + pe

    def local_count(self, n_global: int, pe: int) -> int:
        """Number of indices in ``[0, n_global)`` owned by ``pe``."""
        return max(0, (n_global - pe + self.npes - 1) // self.npes)

    def __repr__(self) -> str:
        return f"PartitionedLayout(npes={self.npes})"


class FrameKind(enum.IntEnum):
    DATA = 0
    FIN = 1


@dataclass(frozen=True)
class BufferFrame:
    """A unit of transfer between PEs.

    ``items`` holds ``item_count`` fixed-size packed records for DATA frames.
    A FIN frame carries ``total_sent``, the exact number of data items its
    sender pushed toward the receiver on this conveyor.
    """

    conveyor_id: int
    sender: int
    kind: FrameKind = FrameKind.DATA
    items: bytes = b""
    item_count: int = 0
    total_sent: int = 0

    def __post_init__(self):
        if self.kind is FrameKind.DATA and self.item_count < 1:
            raise ValueError("data frame must carry at least one item")


class _Inbox:
    __slots__ = ("queue", "lock", "capacity", "blocked")

    def __init__(self, capacity: int):
        self.queue: deque[BufferFrame] = deque()
        self.lock = threading.Lock()
        self.capacity = capacity
        self.blocked: set[int] = set()


class Transport:
    """Reference in-process transport: one bounded multi-producer inbox per PE.

    Frames from one sender to one destination are delivered in send order.
    A refused send registers the sender; it is woken when the inbox drains.
    """

    def __init__(self, npes: int, capacity: int):
        self.npes = npes
        self.capacity = capacity
        self._inboxes = [_Inbox(capacity) for _ in range(npes)]
        self.events = [threading.Event() for _ in range(npes)]

    def send_frame(self, dest: int, frame: BufferFrame) -> bool:
        if not 0 <= dest < self.npes:
            raise ValueError(f"destination PE {dest} out of range [0, {self.npes})")
        box = self._inboxes[dest]
        with box.lock:
            if len(box.queue) >= box.capacity:
                box.blocked.add(frame.sender)
                return False
            box.queue.append(frame)
        self.events[dest].set()
        return True

    def poll_frame(self, me: int) -> Optional[BufferFrame]:
        box = self._inboxes[me]
        with box.lock:
            if not box.queue:
                return None
            frame = box.queue.popleft()
            woken = self._take_blocked(box)
        for s in woken:
            self.events[s].set()
        return frame

    def drain(self, me: int) -> list[BufferFrame]:
        """Take every frame currently queued for ``me``."""
        box = self._inboxes[me]
        if not box.queue:
            return []
        with box.lock:
            frames = list(box.queue)
            box.queue.clear()
            woken = self._take_blocked(box)
        for s in woken:
            self.events[s].set()
        return frames

    @staticmethod
    def _take_blocked(box: _Inbox) -> list[int]:
        if not box.blocked:
            return []
        woken = list(box.blocked)
        box.blocked.clear()
        return woken

    def pending(self, me: int) -> int:
        return len(self._inboxes[me].queue)


class PeContext:
    """Everything one PE knows about the run: rank, layout, routed inbox, collectives.

    Frames polled from the transport are routed by ``conveyor_id`` into local
    queues, so any task that pumps the inbox keeps it from clogging no matter
    which conveyor the frames belong to.  Negative channel ids are reserved
    for collectives.
    """

    def __init__(self, fabric: "Fabric", rank: int):
        self.fabric = fabric
        self.rank = rank
        self.npes = fabric.config.npes
        self.layout = PartitionedLayout(self.npes)
        self.transport = fabric.transport
        self.conveyors: list = []
        self._routes: defaultdict[int, deque[BufferFrame]] = defaultdict(deque)
        self._event = fabric.transport.events[rank]
        self._next_conveyor = 0
        self._coll_seq = 0
        self._idle_since: Optional[float] = None

    def __repr__(self) -> str:
        return f"PeContext(rank={self.rank}, npes={self.npes})"

    # -- point to point ---------------------------------------------------------
    def send_frame(self, dest: int, frame: BufferFrame) -> bool:
        return self.transport.send_frame(dest, frame)

    def pump(self) -> int:
        frames = self.transport.drain(self.rank)
        routes = self._routes
        for f in frames:
            routes[f.conveyor_id].append(f)
        return len(frames)

    def channel(self, conveyor_id: int) -> deque:
        """Local queue of frames routed to ``conveyor_id``."""
        return self._routes[conveyor_id]

    def release_channel(self, conveyor_id: int) -> None:
        q = self._routes.get(conveyor_id)
        if q is not None and not q:
            del self._routes[conveyor_id]

    def next_conveyor_id(self) -> int:
        # conveyors are created collectively in the same order on every PE
        cid = self._next_conveyor
        self._next_conveyor += 1
        return cid

    def send_frame_blocking(self, dest: int, frame: BufferFrame) -> None:
        """Retry ``send_frame`` until accepted, yielding between attempts."""
        while not self.transport.send_frame(dest, frame):
            self.pump()
            self._wait_step()

    # -- idling -----------------------------------------------------------------
    def idle_wait(self) -> None:
        """Scheduler idle hook: block until traffic arrives or inbox space frees up."""
        fabric = self.fabric
        if fabric.aborted.is_set():
            raise FabricAborted(f"PE {self.rank}: run aborted by another PE")
        if self.pump():
            self._idle_since = None
            return
        woke = self._event.wait(_IDLE_POLL_SECONDS)
        if woke:
            self._event.clear()
            self._idle_since = None
        else:
            self._check_deadlock("idle")
        if fabric.aborted.is_set():
            raise FabricAborted(f"PE {self.rank}: run aborted by another PE")
        self.pump()

    def _check_deadlock(self, where: str) -> None:
        timeout = self.fabric.config.deadlock_timeout
        if timeout is None:
            return
        now = time.monotonic()
        if self._idle_since is None:
            self._idle_since = now
        elif now - self._idle_since > timeout:
            raise DeadlockError(f"PE {self.rank}: no progress for {timeout:.1f}s while {where}")

    def _wait_step(self) -> None:
        if current_task() is not None:
            yield_now(idle=True)
        else:
            self.idle_wait()

    # -- collectives --------------------------------------------------------------
    def _collective(self, payload: bytes, combine: Callable[[list[bytes]], list[bytes]]) -> bytes:
        """Gather one payload per PE at rank 0, combine, scatter one result per PE."""
        self._coll_seq += 1
        chan = -self._coll_seq
        P = self.npes
        q = self.channel(chan)
        started = time.monotonic()
        timeout = self.fabric.config.deadlock_timeout

        def wait_for(n: int) -> None:
            while len(q) < n:
                if not self.pump():
                    if timeout is not None and time.monotonic() - started > timeout:
                        raise DeadlockError(
                            f"PE {self.rank}: collective #{self._coll_seq} timed out "
                            f"({len(q)}/{n} frames)")
                    if self.fabric.aborted.is_set():
                        raise FabricAborted(f"PE {self.rank}: run aborted by another PE")
                    self._wait_step()

        if self.rank == 0:
            wait_for(P - 1)
            inputs: list[bytes] = [b""] * P
            inputs[0] = payload
            while q:
                f = q.popleft()
                inputs[f.sender] = f.items
            outputs = combine(inputs)
            for dest in range(1, P):
                self.send_frame_blocking(dest, BufferFrame(chan, 0, FrameKind.DATA, outputs[dest], 1))
            result = outputs[0]
        else:
            self.send_frame_blocking(0, BufferFrame(chan, self.rank, FrameKind.DATA, payload, 1))
            wait_for(1)
            result = q.popleft().items
        self.release_channel(chan)
        return result

    def barrier(self) -> None:
        """No PE returns until every PE has entered."""
        self._collective(b"\0", lambda inputs: [b"\0"] * len(inputs))

    def allreduce_sum(self, x: int) -> int:
        def combine(inputs):
            total = _INT.pack(sum(_INT.unpack(b)[0] for b in inputs))
            return [total] * len(inputs)
        return _INT.unpack(self._collective(_INT.pack(x), combine))[0]

    def scan_sum(self, x: int) -> tuple[int, int]:
        """Return ``(sum of x over lower ranks, sum over all ranks)``."""
        def combine(inputs):
            vals = [_INT.unpack(b)[0] for b in inputs]
            total = sum(vals)
            out, acc = [], 0
            for v in vals:
                out.append(struct.pack("<qq", acc, total))
                acc += v
            return out
        return struct.unpack("<qq", self._collective(_INT.pack(x), combine))


class Fabric:
    """Shared state of one SPMD run: config, transport, per-PE contexts."""

    def __init__(self, config: FabricConfig):
        self.config = config
        self.transport = Transport(config.npes, config.inbox_capacity)
        self.aborted = threading.Event()
        self.contexts = [PeContext(self, r) for r in range(config.npes)]

    def abort(self) -> None:
        self.aborted.set()
        for ev in self.transport.events:
            ev.set()


def current_context() -> PeContext:
    ctx = getattr(_tls, "ctx", None)
    if ctx is None:
        raise FabricError("not running inside a PE")
    return ctx


def my_pe() -> int:
    return current_context().rank


def n_pes() -> int:
    return current_context().npes


def _run_pe(fabric: Fabric, rank: int, pe_main: Callable, args: tuple,
            results: list, errors: dict) -> None:
    ctx = fabric.contexts[rank]
    _tls.ctx = ctx
    try:
        sched = Scheduler(idle_hook=ctx.idle_wait, name=f"PE{rank}")
        results[rank] = sched.run(pe_main, ctx, *args)
    except BaseException as exc:  # noqa: BLE001 - every PE failure must be reported
        errors[rank] = (exc, traceback.format_exc())
        fabric.abort()
    finally:
        _tls.ctx = None


def launch_spmd(config: FabricConfig, pe_main: Callable[..., Any], *args: Any) -> list:
    """Run ``pe_main(ctx, *args)`` on every PE and return the per-rank results.

    If any PE raises, the others are aborted and :class:`SpmdError` is raised
    with the diagnostics of every PE that failed.
    """
    fabric = Fabric(config)
    results: list = [None] * config.npes
    errors: dict[int, tuple[BaseException, str]] = {}
    threads = [
        threading.Thread(target=_run_pe, args=(fabric, r, pe_main, args, results, errors),
                         name=f"fabsp-pe{r}", daemon=True)
        for r in range(config.npes)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        primary = {r: e for r, e in errors.items() if not isinstance(e[0], FabricAborted)} or errors
        lines = [f"PE {r}: {type(e).__name__}: {e}" for r, (e, _) in sorted(primary.items())]
        aborted = sorted(set(errors) - set(primary))
        if aborted:
            lines.append(f"aborted PEs: {aborted}")
        first = primary[min(primary)][0]
        raise SpmdError("SPMD run failed\n" + "\n".join(lines),
                        {r: tb for r, (_, tb) in errors.items()}) from first
    return results
