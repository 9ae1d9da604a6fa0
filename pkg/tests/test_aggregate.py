import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterlens.aggregate import (
    UndefinedWeightError,
    detect_lumps,
    event_cdfs,
    exec_time_cdf,
    linear_fit_r2,
    moving_average,
    observation_report,
    queue_series,
    running_series,
    weighted_cdfs,
)
from clusterlens.lifecycle import build_lifecycle, build_lifecycles
from clusterlens.model import (
    PENDING_TERMINALS,
    RUNNING_TERMINALS,
    EventKind,
    TaskEvent,
    TaskKey,
)
from clusterlens.synth import Burst, SynthConfig, generate_synthetic
from oracles import cdf_value_at, naive_cdf_counts, naive_windowed_mean, state_interval_counter

K = TaskKey(1, 0)


def life_of(*kinds_times, key=K):
    events = [TaskEvent(time=t, key=key, kind=k) for k, t in kinds_times]
    return build_lifecycle(key, events)


def test_single_task_cdfs_are_unit_steps():
    life = life_of((EventKind.SUBMIT, 1), (EventKind.SCHEDULE, 2), (EventKind.FINISH, 3))
    cdfs, totals = event_cdfs([life])
    for cdf in cdfs.values():
        assert len(cdf.xs) == 1
        assert cdf.fs[-1] == 1.0
    assert totals.new_submissions == totals.completions == 1


def test_queue_series_recurrence():
    lives = [
        life_of((EventKind.SUBMIT, 1), key=TaskKey(1, 0)),
        life_of((EventKind.SUBMIT, 2), (EventKind.SCHEDULE, 3), key=TaskKey(2, 0)),
    ]
    q = queue_series(lives)
    assert list(q.times) == [1, 2, 3]
    assert list(q.values) == [1, 2, 1]


def test_pkill_decrements_queue():
    lives = [life_of((EventKind.SUBMIT, 1), (EventKind.KILL, 2))]
    q = queue_series(lives)
    assert list(q.values) == [1, 0]


def test_running_series_examples():
    life = life_of((EventKind.SUBMIT, 1), (EventKind.SCHEDULE, 2), (EventKind.FINISH, 5))
    r = running_series([life])
    assert r.at(2) == 1
    assert r.at(4) == 1
    assert r.at(5) == 0

    life = life_of((EventKind.SUBMIT, 1), (EventKind.SCHEDULE, 2), (EventKind.EVICT, 4))
    r = running_series([life])
    assert r.at(3) == 1
    assert r.at(4) == 0


def _series_matches_oracle(bundle):
    events = bundle.task_events
    lives = list(build_lifecycles(iter(events)))
    q = queue_series(lives)
    r = running_series(lives)
    pending_at, running_at = state_interval_counter(events)
    times = sorted({e.time for e in events})
    for t in times:
        assert q.at(t) == pending_at(t), f"queue mismatch at {t}"
        assert r.at(t) == running_at(t), f"running mismatch at {t}"
    counts = naive_cdf_counts(events)
    cdfs, totals = event_cdfs(lives)
    for name, cdf in cdfs.items():
        oracle_total = sum(counts[name].values())
        assert cdf.total == oracle_total
        for t in times:
            assert cdf.at(t) == pytest.approx(cdf_value_at(counts[name], t), abs=0)


def test_series_and_cdfs_match_bruteforce_recount():
    cfg = SynthConfig(task_count=250, duration_s=2400, seed=21, emit_usage=False,
                      pending_death_prob=0.1, bursts=(Burst(1000.0, 30, 2.0),))
    bundle, _ = generate_synthetic(cfg)
    _series_matches_oracle(bundle)


def test_weighted_endpoints_equal_count_ratios(small_lifecycles):
    cdfs, totals = event_cdfs(small_lifecycles)
    weighted = weighted_cdfs(cdfs, totals)
    for name, total in (
        ("completions", totals.completions),
        ("submissions", totals.submissions),
        ("schedules", totals.schedules),
    ):
        expected = total / totals.new_submissions
        assert weighted[name].fs[-1] == pytest.approx(expected, rel=1e-12)
    assert weighted["new_submissions"].fs[-1] == 1.0


def test_weighted_endpoint_reference_arithmetic():
    # endpoint of a weighted curve is total_kind / total_new: 18217975/25424731
    assert 18_217_975 / 25_424_731 == pytest.approx(0.7165, abs=5e-4)


def test_weighted_requires_new_submissions():
    cdfs, totals = event_cdfs([])
    with pytest.raises(UndefinedWeightError):
        weighted_cdfs(cdfs, totals)


def test_unweighted_cdfs_end_at_one(small_lifecycles):
    cdfs, _ = event_cdfs(small_lifecycles)
    for cdf in cdfs.values():
        if not cdf.empty:
            assert cdf.fs[-1] == 1.0
            assert np.all(np.diff(cdf.fs) >= 0)


def test_conservation(small_lifecycles):
    q = queue_series(small_lifecycles)
    r = running_series(small_lifecycles)
    submits = schedules = p_exits = r_exits = 0
    for life in small_lifecycles:
        for ce in life.classified:
            if ce.kind is EventKind.SUBMIT:
                submits += 1
            elif ce.kind is EventKind.SCHEDULE:
                schedules += 1
            if ce.terminal in PENDING_TERMINALS:
                p_exits += 1
            elif ce.terminal in RUNNING_TERMINALS:
                r_exits += 1
    assert q.values[-1] == submits - schedules - p_exits
    assert r.values[-1] == schedules - r_exits


def test_nonnegative_series_on_clean_trace(small_lifecycles):
    assert all(len(l.violations) == 0 for l in small_lifecycles)
    assert queue_series(small_lifecycles).values.min() >= 0
    assert running_series(small_lifecycles).values.min() >= 0


def test_moving_average_constant():
    ma = moving_average([10, 20, 30], [4.0, 4.0, 4.0], window=15)
    assert np.allclose(ma.values, 4.0)


def test_moving_average_arithmetic():
    ma = moving_average([10, 20], [2.0, 4.0], window=15)
    assert ma.at(20) == pytest.approx(3.0)


def test_moving_average_rejects_bad_window():
    with pytest.raises(ValueError):
        moving_average([1], [1.0], window=0)


@settings(max_examples=50)
@given(
    st.lists(
        st.tuples(st.integers(0, 1000), st.floats(0, 100, allow_nan=False)),
        min_size=1, max_size=40,
    ),
    st.integers(1, 500),
)
def test_moving_average_matches_naive(samples, window):
    samples.sort()
    times = [t for t, _ in samples]
    durs = [d for _, d in samples]
    ma = moving_average(times, durs, window)
    naive_t, naive_v = naive_windowed_mean(times, durs, window)
    # one point per distinct time; the full-window (last) value is retained
    expected = dict(zip(naive_t, naive_v))
    for t in ma.times:
        assert ma.at(t) == pytest.approx(expected[t])


def test_exec_time_cdf_single_span():
    life = life_of((EventKind.SUBMIT, 0), (EventKind.SCHEDULE, 10), (EventKind.FINISH, 85))
    cdf = exec_time_cdf(life.spans)
    assert list(cdf.xs) == [75]
    assert cdf.fs[-1] == 1.0


def test_exec_time_cdf_finished_only_empty():
    life = life_of((EventKind.SUBMIT, 0), (EventKind.SCHEDULE, 10), (EventKind.KILL, 85))
    cdf = exec_time_cdf(life.spans, finished_only=True)
    assert cdf.empty


def test_exec_time_mixture_fraction():
    cfg = SynthConfig(task_count=20_000, duration_s=40 * 3600, seed=2,
                      emit_usage=False, exec_short_fraction=0.8,
                      finish_prob=1.0, update_prob=0.0)
    bundle, _ = generate_synthetic(cfg)
    lives = list(build_lifecycles(iter(bundle.task_events)))
    spans = [s for l in lives for s in l.spans]
    cdf = exec_time_cdf(spans, finished_only=True)
    assert 0.78 <= cdf.at(30 * 60 * 1_000_000) <= 0.82


def test_no_resubmissions_means_no_lumps():
    cfg = SynthConfig(task_count=300, duration_s=3600, seed=9, emit_usage=False,
                      finish_prob=1.0, pending_death_prob=0.0)
    bundle, _ = generate_synthetic(cfg)
    lives = list(build_lifecycles(iter(bundle.task_events)))
    cdfs, totals = event_cdfs(lives)
    assert totals.submissions == totals.new_submissions
    assert detect_lumps(cdfs["submissions"], cdfs["new_submissions"]) == []


def test_constant_rate_r2():
    cfg = SynthConfig(task_count=500, duration_s=3600, seed=4, emit_usage=False)
    bundle, _ = generate_synthetic(cfg)
    lives = list(build_lifecycles(iter(bundle.task_events)))
    cdfs, _ = event_cdfs(lives)
    assert linear_fit_r2(cdfs["new_submissions"].xs, cdfs["new_submissions"].fs) >= 0.999


def test_observation_report_shape(small_lifecycles):
    cdfs, totals = event_cdfs(small_lifecycles)
    weighted = weighted_cdfs(cdfs, totals)
    q = queue_series(small_lifecycles)
    r = running_series(small_lifecycles)
    spans = [s for l in small_lifecycles for s in l.spans]
    exec_samples = sorted(
        (s.end_time, s.execution_time) for s in spans if s.execution_time is not None
    )
    ma = moving_average([t for t, _ in exec_samples], [d for _, d in exec_samples],
                        3600 * 1_000_000)
    report = observation_report(
        cdfs, weighted, totals, q, r, ma, ma, spans, distinct_tasks=len(small_lifecycles)
    )
    assert set(report) == {f"obs{i}" for i in range(1, 11)}
    assert report["obs10"]["distinct_tasks"] == len(small_lifecycles)
    assert report["obs3"]["lump_count"] == len(report["obs3"]["lumps"])
