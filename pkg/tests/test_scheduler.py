import pytest

from fedccl.scheduler import Scheduler


def test_runs_in_time_then_fifo_order():
    s = Scheduler()
    seen = []
    s.call_at(2.0, lambda: seen.append("b"))
    s.call_at(1.0, lambda: seen.append("a1"))
    s.call_at(1.0, lambda: seen.append("a2"))
    s.call_later(3.0, lambda: seen.append("c"))
    assert len(s) == 4
    assert s.run() == 3.0
    assert seen == ["a1", "a2", "b", "c"]


def test_processes_interleave():
    s = Scheduler()
    trace = []

    def proc(name, delays):
        for d in delays:
            yield d
            trace.append((s.now, name))

    s.spawn(proc("x", [1.0, 1.0, 1.0]))
    s.spawn(proc("y", [1.5, 1.0]), delay=0.0)
    s.run()
    assert trace == [(1.0, "x"), (1.5, "y"), (2.0, "x"), (2.5, "y"), (3.0, "x")]


def test_run_until_and_resume():
    s = Scheduler()
    seen = []
    for t in (1, 2, 3):
        s.call_at(t, lambda t=t: seen.append(t))
    s.run(until=2.0)
    assert seen == [1, 2] and len(s) == 1
    s.run()
    assert seen == [1, 2, 3]


def test_events_scheduled_from_callbacks():
    s = Scheduler()
    seen = []
    s.call_at(1.0, lambda: s.call_later(0.0, lambda: seen.append(s.now)))
    s.run()
    assert seen == [1.0]


def test_rejects_the_past():
    s = Scheduler(start=5.0)
    with pytest.raises(ValueError):
        s.call_at(4.0, lambda: None)
    with pytest.raises(ValueError):
        s.call_later(-1.0, lambda: None)
