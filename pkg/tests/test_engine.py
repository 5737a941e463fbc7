import io

import pytest

from repeatersim.core import HardwareParams, seconds_to_ticks
from repeatersim.engine import Engine, Kind, LivelockError, SchedulingError, stream_rng
from repeatersim.simulation import Stop, measure_rate


def test_same_time_fires_before_later():
    engine = Engine()
    fired = []
    engine.schedule(10, Kind.ROUND_START, lambda e: fired.append("late"))
    engine.schedule(0, Kind.ROUND_START, lambda e: fired.append("now"))
    engine.run_until(t_end=100)
    assert fired == ["now", "late"]


def test_expiry_beats_herald_at_equal_time():
    engine = Engine()
    fired = []
    engine.schedule(5, Kind.BSM_RESULT, lambda e: fired.append("bsm"))
    engine.schedule(5, Kind.MEMORY_EXPIRED, lambda e: fired.append("expired"))
    engine.run_until(t_end=5)
    assert fired == ["expired", "bsm"]


def test_full_priority_table():
    engine = Engine()
    fired = []
    for kind in reversed(list(Kind)):
        engine.schedule(1, kind, lambda e: fired.append(e.kind))
    engine.run_until(t_end=1)
    assert fired == [Kind.MEMORY_EXPIRED, Kind.BSM_RESULT, Kind.PHOTON_AT_BSM,
                     Kind.CLASSICAL_MESSAGE, Kind.EMIT_PHOTONS, Kind.ROUND_START]


def test_insertion_order_breaks_remaining_ties():
    engine = Engine()
    fired = []
    for i in range(5):
        engine.schedule(3, Kind.CLASSICAL_MESSAGE, lambda e, i=i: fired.append(i))
    engine.run_until(t_end=3)
    assert fired == [0, 1, 2, 3, 4]


def test_cancel_prevents_firing():
    engine = Engine()
    fired = []
    handle = engine.schedule(2, Kind.EMIT_PHOTONS, lambda e: fired.append("x"))
    engine.cancel(handle)
    engine.run_until(t_end=10)
    assert fired == []
    assert engine.pending() == 0


def test_rejects_past_schedule():
    engine = Engine()
    engine.schedule(10, Kind.ROUND_START, lambda e: None)
    engine.run_until(t_end=10)
    with pytest.raises(SchedulingError):
        engine.schedule(9, Kind.ROUND_START, lambda e: None)


def test_clock_never_decreases():
    engine = Engine()
    times = []

    def cb(event):
        times.append(engine.now)
        if engine.now < 1000:
            engine.schedule_in(event.payload["step"], Kind.CLASSICAL_MESSAGE, cb, step=event.payload["step"])

    for step in (7, 3, 11):
        engine.schedule(0, Kind.CLASSICAL_MESSAGE, cb, step=step)
    engine.run_until(t_end=2000)
    assert times == sorted(times)


def test_empty_protocol_runs_to_end_time():
    engine = Engine()
    stats = engine.run_until(t_end=seconds_to_ticks(1.0))
    assert stats.end_to_end_successes == 0
    assert stats.elapsed_s == 1.0


def test_livelock_reported():
    with pytest.raises(LivelockError):
        Engine().run_until(target_successes=1)


def test_unbounded_run_rejected():
    with pytest.raises(ValueError):
        Engine().run_until()


def test_stream_rng_reproducible_and_distinct():
    a = stream_rng(42, 3).random(5)
    b = stream_rng(42, 3).random(5)
    c = stream_rng(42, 4).random(5)
    assert (a == b).all()
    assert not (a == c).any()


def test_forced_link_succeeds_on_period_grid():
    params = HardwareParams(1, 1, 1, 1, 0.0, 2e5)
    stats = measure_rate(40.0, 0, params, "synchronous", Stop(successes=50, max_time_s=None))
    period = 4 * 40 * 10**12 // 2e5
    assert stats.success_times == [int(period * (i + 1)) for i in range(50)]


def test_same_seed_identical_stats():
    params = HardwareParams(tau_mem_s=5e-3)
    runs = [measure_rate(60.0, 3, params, "independent", Stop(successes=50, max_time_s=None), seed=8)
            for _ in range(2)]
    assert runs[0] == runs[1]


def test_trace_lines_are_tab_separated_and_replayable():
    params = HardwareParams()
    traces = []
    for _ in range(2):
        buf = io.StringIO()
        measure_rate(20.0, 1, params, "synchronous", Stop(successes=2, max_time_s=None), seed=4, trace=buf)
        traces.append(buf.getvalue())
    assert traces[0] == traces[1]
    lines = traces[0].splitlines()
    assert lines[0].split("\t")[:2] == ["0", "ROUND_START"]
    kinds = {line.split("\t")[1] for line in lines}
    assert kinds <= {k.name for k in Kind}
    stamps = [int(line.split("\t")[0]) for line in lines]
    assert stamps == sorted(stamps)
