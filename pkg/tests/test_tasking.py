import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fabsp.tasking import (DeadlockError, Scheduler, SignalSlot, SingleAssignmentError, TaskingError,
                           current_task, finish, future_wait, promise_put, spawn, yield_now)


def test_single_task_sets_flag():
    flag = []
    finish(lambda: spawn(flag.append, True))
    assert flag == [True]


def test_empty_finish_returns_immediately():
    assert finish(lambda: 42) == 42


def test_nested_spawn_counts_all_tasks():
    counter = [0]

    def child():
        counter[0] += 1

    def parent():
        counter[0] += 1
        for _ in range(10):
            spawn(child)

    finish(lambda: spawn(parent))
    assert counter[0] == 11


def test_finish_inside_task_waits_for_grandchildren():
    log = []

    def leaf(i):
        yield_now()
        log.append(i)

    def mid():
        for i in range(3):
            spawn(leaf, i)

    def main():
        finish(lambda: spawn(mid))
        log.append("after")

    Scheduler().run(main)
    assert sorted(log[:3]) == [0, 1, 2] and log[3] == "after"


def test_future_blocks_until_put():
    order = []

    def main():
        slot = SignalSlot()

        def consumer():
            order.append(("got", future_wait(slot)))

        spawn(consumer)
        yield_now()
        order.append("put")
        promise_put(slot, 7)

    Scheduler().run(main)
    assert order == ["put", ("got", 7)]


def test_second_put_raises():
    slot = SignalSlot()
    slot.put(1)
    with pytest.raises(SingleAssignmentError):
        slot.put(2)
    assert slot.value == 1


def test_wait_on_filled_slot_outside_task_returns():
    slot = SignalSlot()
    slot.put("x")
    assert slot.wait() == "x"


def test_wait_on_empty_slot_outside_task_raises():
    with pytest.raises(TaskingError):
        SignalSlot().wait()


def test_blocked_forever_is_a_deadlock():
    with pytest.raises(DeadlockError):
        Scheduler().run(lambda: SignalSlot().wait())


def test_yield_outside_task_raises():
    with pytest.raises(TaskingError):
        yield_now()


def test_spawn_into_closed_scope_raises():
    def main():
        sched = current_task()._sched
        scope = current_task().scopes[-1]
        scope.closed = True
        sched.spawn(lambda: None, scope=scope)

    with pytest.raises(TaskingError):
        Scheduler().run(main)


def test_idle_hook_runs_only_when_every_task_polls():
    calls = []
    sched = Scheduler(idle_hook=lambda: calls.append(len(calls)))
    state = {"busy": 3}

    def busy():
        while state["busy"]:
            state["busy"] -= 1
            yield_now(idle=False)

    def poller():
        for _ in range(4):
            yield_now(idle=True)

    def main():
        spawn(busy)
        spawn(poller)

    sched.run(main)
    # the hook fires once the busy task is gone and the poller keeps polling
    assert calls and sched.complete_count == sched.spawn_count == 3


def test_schedulers_on_separate_threads_are_independent():
    out = {}

    def body(name):
        def main():
            acc = []
            for i in range(5):
                spawn(acc.append, i)
            finish(lambda: None)
            return acc
        out[name] = Scheduler(name=name).run(main)

    ts = [threading.Thread(target=body, args=(f"t{i}",)) for i in range(4)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert all(sorted(v) == [0, 1, 2, 3, 4] for v in out.values())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=4), min_size=0, max_size=12))
def test_finish_soundness(fanouts):
    """Every transitively spawned task has completed when finish returns."""
    started = [0]
    completed = [0]

    def node(depth):
        started[0] += 1
        if depth < len(fanouts):
            for _ in range(fanouts[depth]):
                spawn(node, depth + 1)
        yield_now()
        completed[0] += 1

    sched = Scheduler()
    sched.run(lambda: finish(lambda: spawn(node, 0)))
    assert completed[0] == started[0]
    assert sched.complete_count == sched.spawn_count


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=20), min_size=1, max_size=10))
def test_finite_yielders_all_complete(yields):
    done = []

    def body(i, n):
        for _ in range(n):
            yield_now(idle=bool(i % 2))
        done.append(i)

    def main():
        for i, n in enumerate(yields):
            spawn(body, i, n)

    Scheduler(idle_hook=lambda: None).run(main)
    assert sorted(done) == list(range(len(yields)))
