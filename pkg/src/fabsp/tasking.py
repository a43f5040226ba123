"""Cooperative task runtime: spawn, yield, finish scopes and promise/future slots.

Each PE owns one :class:`Scheduler` running on one OS thread.  Tasks are
greenlets multiplexed on that thread with a FIFO run queue, so a task may
yield from anywhere in its call stack (a message handler that blocks inside a
nested ``send`` is just a task that yields).

Tasks never migrate between schedulers.  Cross-PE communication goes through
:mod:`fabsp.fabric`, never through :class:`SignalSlot`.
"""
from __future__ import annotations

import threading
from collections import deque
from typing import Any, Callable, Optional

from greenlet import greenlet

__all__ = [
    "TaskingError",
    "SingleAssignmentError",
    "DeadlockError",
    "Task",
    "FinishScope",
    "SignalSlot",
    "Scheduler",
    "spawn",
    "yield_now",
    "finish",
    "promise_put",
    "future_wait",
    "current_scheduler",
    "current_task",
]

_local = threading.local()


class TaskingError(RuntimeError):
    """Misuse of the task runtime (spawn into a closed scope, yield outside a task...)."""


class SingleAssignmentError(TaskingError):
    """A second ``put`` on a :class:`SignalSlot`."""


class DeadlockError(TaskingError):
    """No task can make progress and nothing external can wake one."""


class FinishScope:
    """Counts transitively spawned, still-running tasks."""

    __slots__ = ("pending", "closed", "_waiter", "_sched")

    def __init__(self, sched: "Scheduler"):
        self.pending = 0
        self.closed = False
        self._waiter: Optional[Task] = None
        self._sched = sched

    def _enter(self) -> None:
        if self.closed:
            raise TaskingError("spawn into a finish scope that has already been exited")
        self.pending += 1

    def _leave(self) -> None:
        self.pending -= 1
        if self.pending == 0 and self._waiter is not None:
            waiter, self._waiter = self._waiter, None
            self._sched._wake(waiter)


class Task:
    """A resumable unit of work bound to one scheduler.

    Attributes
    ----------
    done : bool
        True once the body has returned.
    result : Any
        Return value of the body, valid when ``done``.
    """

    __slots__ = ("name", "body", "args", "done", "result", "scopes", "_glet", "_sched")

    def __init__(self, sched: "Scheduler", body: Callable, args: tuple, scope: FinishScope, name: str):
        self.name = name
        self.body = body
        self.args = args
        self.done = False
        self.result: Any = None
        # innermost finish scope last; spawns register with scopes[-1]
        self.scopes = [scope]
        self._sched = sched
        self._glet = greenlet(self._run, parent=sched._hub)

    def _run(self) -> None:
        self.result = self.body(*self.args)
        self.done = True
        self.scopes[0]._leave()

    def __repr__(self) -> str:
        state = "done" if self.done else "live"
        return f"<Task {self.name} {state}>"


class SignalSlot:
    """Single-assignment promise/future pair.

    ``put`` fills the slot at most once and wakes every waiting task;
    ``wait`` suspends the calling task cooperatively until the slot is filled.
    """

    __slots__ = ("_filled", "_value", "_waiters")

    def __init__(self) -> None:
        self._filled = False
        self._value: Any = None
        self._waiters: list[Task] = []

    @property
    def filled(self) -> bool:
        return self._filled

    @property
    def value(self) -> Any:
        if not self._filled:
            raise TaskingError("slot is empty")
        return self._value

    def put(self, value: Any = None) -> None:
        if self._filled:
            raise SingleAssignmentError("promise already satisfied")
        self._filled = True
        self._value = value
        waiters, self._waiters = self._waiters, []
        for t in waiters:
            t._sched._wake(t)

    def wait(self) -> Any:
        while not self._filled:
            task = current_task()
            if task is None:
                raise TaskingError("future_wait on an empty slot outside of a task")
            self._waiters.append(task)
            task._sched._block()
        return self._value

    def __repr__(self) -> str:
        return f"SignalSlot(filled={self._filled})"


class Scheduler:
    """FIFO cooperative scheduler for the tasks of one PE.

    Parameters
    ----------
    idle_hook : callable, optional
        Invoked on the scheduler's own stack when every runnable task has
        yielded with ``idle=True`` in a row.  Typically blocks on the PE's
        inbox until something arrives; may raise to abort the run.
    name : str
        Used in diagnostics.
    """

    def __init__(self, idle_hook: Optional[Callable[[], None]] = None, name: str = "pe"):
        self.name = name
        self.idle_hook = idle_hook
        self.current: Optional[Task] = None
        self.resume_count = 0
        self.spawn_count = 0
        self.complete_count = 0
        self._runq: deque[Task] = deque()
        self._hub: Optional[greenlet] = None
        self._blocked = 0
        self._last_idle = False
        self._requeue_current = False

    # -- internal transitions -------------------------------------------------
    def _wake(self, task: Task) -> None:
        self._blocked -= 1
        self._runq.append(task)

    def _block(self) -> None:
        # caller registered itself somewhere that will _wake it
        self._blocked += 1
        self._requeue_current = False
        self._last_idle = False
        self._hub.switch()
        self.resume_count += 1

    def _yield(self, idle: bool) -> None:
        self._requeue_current = True
        self._last_idle = idle
        self._hub.switch()
        self.resume_count += 1

    # -- public API -------------------------------------------------------------
    def spawn(self, body: Callable, *args: Any, scope: Optional[FinishScope] = None,
              name: Optional[str] = None) -> Task:
        if scope is None:
            cur = self.current
            if cur is None:
                raise TaskingError("spawn outside of a task requires an explicit scope")
            scope = cur.scopes[-1]
        scope._enter()
        self.spawn_count += 1
        task = Task(self, body, args, scope, name or getattr(body, "__name__", "task"))
        self._runq.append(task)
        return task

    def run(self, main: Callable, *args: Any) -> Any:
        """Run ``main`` as the root task and return once every task has finished."""
        if getattr(_local, "sched", None) is not None:
            raise TaskingError("a scheduler is already running on this thread")
        _local.sched = self
        self._hub = greenlet.getcurrent()
        root_scope = FinishScope(self)
        try:
            root = self.spawn(main, *args, scope=root_scope, name="main")
            self._loop(root_scope)
            root_scope.closed = True
            return root.result
        finally:
            _local.sched = None
            self._hub = None

    def _loop(self, root_scope: FinishScope) -> None:
        runq = self._runq
        idle_streak = 0
        while True:
            if not runq:
                if root_scope.pending == 0:
                    return
                raise DeadlockError(
                    f"{self.name}: {self._blocked} task(s) blocked on futures/finish and none runnable")
            task = runq.popleft()
            self.current = task
            self._requeue_current = False
            task._glet.switch()
            self.current = None
            if task.done:
                self.complete_count += 1
                idle_streak = 0
                continue
            if self._requeue_current:
                runq.append(task)
                if self._last_idle:
                    idle_streak += 1
                    if idle_streak >= len(runq):
                        idle_streak = 0
                        if self.idle_hook is not None:
                            self.idle_hook()
                else:
                    idle_streak = 0


def current_scheduler() -> Optional[Scheduler]:
    return getattr(_local, "sched", None)


def current_task() -> Optional[Task]:
    sched = getattr(_local, "sched", None)
    return None if sched is None else sched.current


def _require_task() -> Task:
    task = current_task()
    if task is None:
        raise TaskingError("must be called from within a task")
    return task


def spawn(body: Callable, *args: Any, scope: Optional[FinishScope] = None) -> Task:
    """Spawn ``body(*args)`` on the current PE, registered with the innermost finish scope."""
    sched = current_scheduler()
    if sched is None:
        raise TaskingError("spawn requires a running scheduler")
    return sched.spawn(body, *args, scope=scope)


def yield_now(idle: bool = False) -> None:
    """Pass control to the scheduler; the caller is resumed later.

    ``idle=True`` tells the scheduler this task is only polling; when all
    runnable tasks poll without progress the scheduler may block the PE.
    """
    task = _require_task()
    task._sched._yield(idle)


def finish(body: Callable, *args: Any) -> Any:
    """Run ``body`` and wait for every task it spawned, transitively.

    Outside of any task a fresh scheduler is started on the calling thread.
    """
    task = current_task()
    if task is None:
        return Scheduler(name="finish").run(body, *args)
    sched = task._sched
    scope = FinishScope(sched)
    task.scopes.append(scope)
    try:
        result = body(*args)
    finally:
        task.scopes.pop()
    while scope.pending:
        scope._waiter = task
        sched._block()
    scope.closed = True
    return result


def promise_put(slot: SignalSlot, value: Any = None) -> None:
    slot.put(value)


def future_wait(slot: SignalSlot) -> Any:
    return slot.wait()
