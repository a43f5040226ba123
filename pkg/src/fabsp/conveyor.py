"""Message aggregation with push/pull/advance and counting-based termination.

A conveyor buffers fixed-size records per destination PE and ships them as
:class:`~fabsp.fabric.BufferFrame` values once ``capacity`` records have
accumulated.  Termination uses a counting protocol: when a PE declares itself
locally done it flushes its partial buffers and sends every PE (itself
included) a FIN frame carrying the exact number of records it pushed toward
that PE.  A PE is complete once it has heard a FIN from every PE, received
exactly the announced number of records from each, had all of its own frames
accepted, and the caller has pulled everything.  Nothing here depends on
frame ordering.
"""
from __future__ import annotations

import enum
import re
import struct
import sys
from array import array
from collections import deque
from dataclasses import dataclass
from itertools import chain, repeat, starmap
from operator import itemgetter
from typing import Any, Iterable, Optional

from .fabric import BufferFrame, FrameKind, PeContext

__all__ = [
    "ConveyorError",
    "Phase",
    "ConveyorStats",
    "RecordCodec",
    "Conveyor",
    "begin",
    "DEFAULT_BUFFER_ITEMS",
]

DEFAULT_BUFFER_ITEMS = 1024

_FIELD = re.compile(r"(\d*)([a-zA-Z?])")


class ConveyorError(RuntimeError):
    """Protocol misuse: push after done, regressing ``locally_done``..."""


class Phase(enum.Enum):
    ACTIVE = "active"
    ENDGAME = "endgame"
    COMPLETE = "complete"


@dataclass
class ConveyorStats:
    items_pushed: int = 0
    items_pulled: int = 0
    frames_sent: int = 0
    frames_received: int = 0
    # DATA frames only; frames_sent also counts the P FIN frames per session
    data_frames_sent: int = 0

    def __add__(self, other: "ConveyorStats") -> "ConveyorStats":
        return ConveyorStats(
            self.items_pushed + other.items_pushed,
            self.items_pulled + other.items_pulled,
            self.frames_sent + other.frames_sent,
            self.frames_received + other.frames_received,
            self.data_frames_sent + other.data_frames_sent,
        )


class RecordCodec:
    """Packs and unpacks fixed-size records described by a :mod:`struct` format.

    A format with a single field (``"q"``) carries plain scalars; anything
    wider carries tuples.  Homogeneous formats (``"qq"``, ``"3d"``) go through
    :mod:`array` for speed.

    >>> c = RecordCodec("qq")
    >>> c.item_size
    16
    >>> list(c.unpack(c.pack([(1, 2), (3, 4)])))
    [(1, 2), (3, 4)]
    """

    def __init__(self, fmt: str):
        body = fmt[1:] if fmt[:1] in "<>=!@" else fmt
        self.fmt = fmt
        self.struct = struct.Struct("<" + body)
        self.item_size = self.struct.size
        if self.item_size == 0:
            raise ValueError(f"empty record format {fmt!r}")
        fields = []
        for count, code in _FIELD.findall(body):
            if code in "sp":
                fields.append(code)
            else:
                fields.extend(code * int(count or 1))
        self.width = len(fields)
        self._code: Optional[str] = None
        code = fields[0]
        if (sys.byteorder == "little" and fmt[:1] not in ">!" and all(f == code for f in fields)
                and code in "bBhHiIlLqQfd"
                and array(code).itemsize == struct.calcsize("<" + code)):
            self._code = code

    def pack(self, items: list) -> bytes:
        if self._code is not None:
            if self.width == 1:
                return array(self._code, items).tobytes()
            return array(self._code, chain.from_iterable(items)).tobytes()
        if self.width == 1:
            return b"".join(map(self.struct.pack, items))
        return b"".join(starmap(self.struct.pack, items))

    def unpack(self, data: bytes) -> Iterable[Any]:
        if self._code is not None:
            a = array(self._code)
            a.frombytes(data)
            if self.width == 1:
                return a.tolist()
            it = iter(a.tolist())
            return zip(*([it] * self.width))
        if self.width == 1:
            return map(itemgetter(0), self.struct.iter_unpack(data))
        return self.struct.iter_unpack(data)


class Conveyor:
    """One aggregation session on one PE.

    Not thread-safe; driven by exactly one task of the owning PE.  Created
    collectively: every PE must create its conveyors in the same order with
    the same format and capacity.

    Parameters
    ----------
    ctx : PeContext
        The owning PE.
    fmt : str
        :mod:`struct` format of one record.
    capacity : int
        Records buffered per destination before a frame is shipped.
    """

    def __init__(self, ctx: PeContext, fmt: str = "q", capacity: int = DEFAULT_BUFFER_ITEMS,
                 conveyor_id: Optional[int] = None):
        if capacity < 1:
            raise ValueError(f"buffer capacity must be >= 1, got {capacity}")
        self.ctx = ctx
        self.id = ctx.next_conveyor_id() if conveyor_id is None else conveyor_id
        self.codec = RecordCodec(fmt)
        self.item_size = self.codec.item_size
        self.capacity = capacity
        self.phase = Phase.ACTIVE
        self.progress = 0
        npes = ctx.npes
        self._rank = ctx.rank
        self._npes = npes
        self._bufs: list[list] = [[] for _ in range(npes)]
        self._sent = [0] * npes
        self._received = [0] * npes
        self._fins: dict[int, int] = {}
        self._outq: deque[tuple[int, BufferFrame]] = deque()
        self._recv: deque = deque()
        self._chan = ctx.channel(self.id)
        self._local_done = False
        self._pulled = 0
        self._frames_sent = 0
        self._data_frames = 0
        self._frames_received = 0
        ctx.conveyors.append(self)

    def __repr__(self) -> str:
        return f"<Conveyor id={self.id} pe={self._rank} {self.phase.value}>"

    def _flush(self, dest: int) -> bool:
        buf = self._bufs[dest]
        frame = BufferFrame(self.id, self._rank, FrameKind.DATA, self.codec.pack(buf), len(buf))
        if not self.ctx.transport.send_frame(dest, frame):
            return False
        self._bufs[dest] = []
        self._frames_sent += 1
        self._data_frames += 1
        self.progress += 1
        return True

    def push(self, dest: int, item: Any) -> bool:
        """Buffer ``item`` for ``dest``.

        Returns False, with no state change, when the destination buffer is
        full and the transport refused to take it; retry after ``advance``.
        """
        if self._local_done:
            raise ConveyorError(f"push on conveyor {self.id} after local done")
        buf = self._bufs[dest]
        cap = self.capacity
        if len(buf) >= cap:
            if not self._flush(dest):
                return False
            buf = self._bufs[dest]
        buf.append(item)
        self._sent[dest] += 1
        if len(buf) >= cap:
            self._flush(dest)
        return True

    def pull(self) -> Optional[tuple[Any, int]]:
        """Next received ``(item, sender)``, or None."""
        try:
            got = self._recv.popleft()
        except IndexError:
            return None
        self._pulled += 1
        return got

    def advance(self, locally_done: bool) -> bool:
        """Move frames in both directions; False exactly when the session is complete.

        Once ``locally_done`` has been passed as True it must stay True.
        Calling again after completion keeps returning False.
        """
        if self.phase is Phase.COMPLETE:
            return False
        if not locally_done:
            if self._local_done:
                raise ConveyorError(f"conveyor {self.id}: locally_done regressed from True to False")
        elif not self._local_done:
            self._begin_endgame()

        bufs = self._bufs
        if self.phase is Phase.ACTIVE:
            cap = self.capacity
            for d in range(self._npes):
                if len(bufs[d]) >= cap:
                    self._flush(d)
        else:
            for d in range(self._npes):
                if bufs[d] and not self._flush(d):
                    break
            else:
                self._send_fins()

        self._receive()

        if (self.phase is Phase.ENDGAME and len(self._fins) == self._npes and not self._outq
                and not self._recv and not any(bufs) and self._fins_balanced()):
            self.phase = Phase.COMPLETE
            self.progress += 1
            self.ctx.release_channel(self.id)
            return False
        return True

    def _begin_endgame(self) -> None:
        self._local_done = True
        self.phase = Phase.ENDGAME
        self.progress += 1
        for d in range(self._npes):
            self._outq.append((d, BufferFrame(self.id, self._rank, FrameKind.FIN, total_sent=self._sent[d])))

    def _send_fins(self) -> None:
        outq = self._outq
        send = self.ctx.transport.send_frame
        while outq:
            dest, frame = outq[0]
            if not send(dest, frame):
                return
            outq.popleft()
            self._frames_sent += 1
            self.progress += 1

    def _receive(self) -> None:
        self.ctx.pump()
        chan = self._chan
        if not chan:
            return
        recv = self._recv
        unpack = self.codec.unpack
        while chan:
            f = chan.popleft()
            self._frames_received += 1
            if f.kind is FrameKind.DATA:
                recv.extend(zip(unpack(f.items), repeat(f.sender)))
                self._received[f.sender] += f.item_count
            else:
                if f.sender in self._fins:
                    raise ConveyorError(f"conveyor {self.id}: duplicate FIN from PE {f.sender}")
                self._fins[f.sender] = f.total_sent
        self.progress += 1

    def _fins_balanced(self) -> bool:
        received = self._received
        for s, total in self._fins.items():
            if received[s] != total:
                if received[s] > total:
                    raise ConveyorError(
                        f"conveyor {self.id}: PE {s} announced {total} items but {received[s]} arrived")
                return False
        return True

    def stats(self) -> ConveyorStats:
        return ConveyorStats(sum(self._sent), self._pulled, self._frames_sent, self._frames_received,
                             self._data_frames)

    @property
    def locally_done(self) -> bool:
        return self._local_done


def begin(ctx: PeContext, fmt: str = "q", capacity: int = DEFAULT_BUFFER_ITEMS,
          check: bool = False) -> Conveyor:
    """Start a conveyor session collectively.

    With ``check=True`` every PE verifies via allreduce that all PEs passed
    the same record size and capacity.
    """
    conv = Conveyor(ctx, fmt, capacity)
    if check:
        P = ctx.npes
        for name, value in (("item_size", conv.item_size), ("capacity", capacity), ("id", conv.id)):
            if ctx.allreduce_sum(value) != P * value or ctx.allreduce_sum(value * value) != P * value * value:
                raise ConveyorError(f"conveyor {conv.id}: {name} differs across PEs")
    return conv
