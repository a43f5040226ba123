"""Actor/selector runtime with automatic message aggregation and termination detection."""
from .conveyor import Conveyor, ConveyorError, ConveyorStats, Phase, begin
from .fabric import (
    BufferFrame,
    FabricConfig,
    FrameKind,
    PartitionedLayout,
    PeContext,
    SpmdError,
    Transport,
    current_context,
    launch_spmd,
    my_pe,
    n_pes,
)
from .selector import OUTSIDE, Actor, HandlerError, Selector, SelectorError, TerminationGraph, selector_start
from .tasking import SignalSlot, finish, future_wait, promise_put, spawn, yield_now

__version__ = "0.1.0"
