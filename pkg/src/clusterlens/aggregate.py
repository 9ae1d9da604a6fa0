"""Observation-backing aggregates: event CDFs, queue/running series,
moving averages, execution-duration CDF and the observation report."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .lifecycle import Lifecycle, ScheduleSpan
from .model import (
    PENDING_TERMINALS,
    RUNNING_TERMINALS,
    EventKind,
    TerminalClassification,
)


class UndefinedWeightError(Exception):
    """Weighted CDFs are undefined without new submissions."""


@dataclass
class Cdf:
    """Right-continuous step curve: value fs[i] holds from xs[i] onward."""

    xs: np.ndarray
    fs: np.ndarray
    total: int

    @property
    def empty(self) -> bool:
        return self.total == 0

    def at(self, x: float) -> float:
        i = np.searchsorted(self.xs, x, side="right") - 1
        return 0.0 if i < 0 else float(self.fs[i])


@dataclass
class Series:
    times: np.ndarray
    values: np.ndarray

    def at(self, t: float) -> float:
        i = np.searchsorted(self.times, t, side="right") - 1
        return 0.0 if i < 0 else float(self.values[i])


@dataclass(frozen=True)
class EventTotals:
    new_submissions: int
    completions: int
    submissions: int
    schedules: int


def _cdf_from_counter(counts: Counter) -> Cdf:
    if not counts:
        return Cdf(np.array([]), np.array([]), 0)
    xs = np.array(sorted(counts), dtype=np.int64)
    cum = np.cumsum([counts[int(x)] for x in xs], dtype=np.int64)
    total = int(cum[-1])
    return Cdf(xs, cum / total, total)


def event_cdfs(lifecycles: Sequence[Lifecycle]) -> tuple[dict[str, Cdf], EventTotals]:
    """Per-microsecond CDFs of new submissions, completions, submissions and
    schedules, each normalized by its own total.

    Only legal (replayed) events count; the first legal submit of a key is
    its new submission.
    """
    new_c: Counter = Counter()
    sub_c: Counter = Counter()
    fin_c: Counter = Counter()
    sch_c: Counter = Counter()
    for life in lifecycles:
        first = True
        for ce in life.classified:
            if ce.kind is EventKind.SUBMIT:
                sub_c[ce.time] += 1
                if first:
                    new_c[ce.time] += 1
                    first = False
            elif ce.kind is EventKind.SCHEDULE:
                sch_c[ce.time] += 1
            elif ce.terminal is TerminalClassification.FINISH:
                fin_c[ce.time] += 1
    cdfs = {
        "new_submissions": _cdf_from_counter(new_c),
        "completions": _cdf_from_counter(fin_c),
        "submissions": _cdf_from_counter(sub_c),
        "schedules": _cdf_from_counter(sch_c),
    }
    totals = EventTotals(
        new_submissions=cdfs["new_submissions"].total,
        completions=cdfs["completions"].total,
        submissions=cdfs["submissions"].total,
        schedules=cdfs["schedules"].total,
    )
    return cdfs, totals


def weighted_cdfs(cdfs: dict[str, Cdf], totals: EventTotals) -> dict[str, Cdf]:
    """Scale each curve by total_kind / total_new_submissions; the
    new-submission CDF is the unscaled reference."""
    if totals.new_submissions == 0:
        raise UndefinedWeightError("no new submissions: weights undefined")
    out = {"new_submissions": cdfs["new_submissions"]}
    for name in ("completions", "submissions", "schedules"):
        c = cdfs[name]
        weight = c.total / totals.new_submissions
        out[name] = Cdf(c.xs.copy(), c.fs * weight, c.total)
    return out


def _delta_series(
    lifecycles: Sequence[Lifecycle],
    inc_kind: EventKind,
    dec_terminals: frozenset,
    dec_kind: Optional[EventKind] = None,
) -> Series:
    deltas: Counter = Counter()
    for life in lifecycles:
        for ce in life.classified:
            if ce.kind is inc_kind:
                deltas[ce.time] += 1
            if ce.kind is dec_kind or ce.terminal in dec_terminals:
                deltas[ce.time] -= 1
    times = np.array(sorted(deltas), dtype=np.int64)
    values = np.cumsum([deltas[int(t)] for t in times], dtype=np.int64)
    # drop zero-delta timestamps but keep endpoints explicit
    if len(times) > 1:
        keep = np.ones(len(times), dtype=bool)
        keep[1:-1] = np.diff(values)[:-1] != 0
        times, values = times[keep], values[keep]
    return Series(times, values)


def queue_series(lifecycles: Sequence[Lifecycle]) -> Series:
    """Pending-task count over time: prefix sum of submits minus
    (schedules + pFail + pKill + pLost + evict-from-pending), from zero."""
    return _delta_series(
        lifecycles, EventKind.SUBMIT, PENDING_TERMINALS, EventKind.SCHEDULE
    )


def running_series(lifecycles: Sequence[Lifecycle]) -> Series:
    """Running-task count over time: prefix sum of schedules minus
    (finish + evict-from-running + rFail + rKill + rLost), from zero."""
    return _delta_series(lifecycles, EventKind.SCHEDULE, RUNNING_TERMINALS)


def moving_average(
    times: Sequence[int], durations: Sequence[float], window: int
) -> Series:
    """Mean of samples in (t - window, t] at each sample time t."""
    if window <= 0:
        raise ValueError("window must be positive")
    t = np.asarray(times, dtype=np.int64)
    d = np.asarray(durations, dtype=np.float64)
    if len(t) == 0:
        return Series(np.array([], dtype=np.int64), np.array([]))
    order = np.argsort(t, kind="stable")
    t, d = t[order], d[order]
    csum = np.concatenate([[0.0], np.cumsum(d)])
    lo = np.searchsorted(t, t - window, side="right")
    hi = np.arange(1, len(t) + 1)
    means = (csum[hi] - csum[lo]) / (hi - lo)
    # one point per distinct time (last occurrence wins: it sees the full window)
    keep = np.concatenate([t[1:] != t[:-1], [True]])
    return Series(t[keep], means[keep])


def exec_time_cdf(spans: Iterable[ScheduleSpan], finished_only: bool = False) -> Cdf:
    durations = [
        s.execution_time
        for s in spans
        if s.execution_time is not None
        and (not finished_only or s.terminal is TerminalClassification.FINISH)
    ]
    return _cdf_from_counter(Counter(durations))


def linear_fit_r2(xs: np.ndarray, ys: np.ndarray) -> float:
    if len(xs) < 3:
        return 1.0
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return 1.0
    return 1.0 - float(np.sum(resid**2)) / ss_tot


@dataclass(frozen=True)
class Lump:
    start: int
    peak: int
    end: int
    max_excess: float


def detect_lumps(
    submissions: Cdf, new_submissions: Cdf, threshold: float = 0.02
) -> list[Lump]:
    """Contiguous regions where the submission CDF exceeds the new-submission
    CDF by more than `threshold` after endpoint alignment (both end at 1)."""
    if submissions.empty or new_submissions.empty:
        return []
    grid = np.union1d(submissions.xs, new_submissions.xs)
    f_sub = _step_eval(submissions, grid)
    f_new = _step_eval(new_submissions, grid)
    excess = f_sub - f_new
    lumps: list[Lump] = []
    in_lump = False
    start = peak_i = 0
    for i, e in enumerate(excess):
        if not in_lump and e > threshold:
            in_lump, start, peak_i = True, i, i
        elif in_lump:
            if e > excess[peak_i]:
                peak_i = i
            if e <= threshold:
                lumps.append(
                    Lump(int(grid[start]), int(grid[peak_i]), int(grid[i]),
                         float(excess[peak_i]))
                )
                in_lump = False
    if in_lump:
        lumps.append(
            Lump(int(grid[start]), int(grid[peak_i]), int(grid[-1]),
                 float(excess[peak_i]))
        )
    return lumps


def _step_eval(cdf: Cdf, grid: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(cdf.xs, grid, side="right") - 1
    out = np.where(idx >= 0, cdf.fs[np.clip(idx, 0, None)], 0.0)
    return out


def _terminal_slope(series: Series, tail_fraction: float = 0.25) -> float:
    if len(series.times) < 3:
        return 0.0
    t0 = series.times[-1] - tail_fraction * (series.times[-1] - series.times[0])
    mask = series.times >= t0
    if mask.sum() < 3:
        mask = np.ones(len(series.times), dtype=bool)
    coef = np.polyfit(series.times[mask].astype(float), series.values[mask].astype(float), 1)
    return float(coef[0])


def observation_report(
    cdfs: dict[str, Cdf],
    weighted: dict[str, Cdf],
    totals: EventTotals,
    queue: Series,
    running: Series,
    exec_ma: Series,
    sched_ma: Series,
    spans: Sequence[ScheduleSpan],
    distinct_tasks: int,
    lump_threshold: float = 0.02,
) -> dict:
    """Per-observation checkable statistics, keyed obs1..obs10."""
    exec_times = np.array(
        [s.execution_time for s in spans if s.execution_time is not None
         and s.terminal is TerminalClassification.FINISH],
        dtype=np.int64,
    )
    lumps = detect_lumps(cdfs["submissions"], cdfs["new_submissions"], lump_threshold)
    max_gap_unweighted = _max_gap(cdfs["submissions"], cdfs["schedules"])
    max_gap_weighted = _max_gap(weighted["submissions"], weighted["schedules"])
    return {
        "obs1": {"new_submission_r2": linear_fit_r2(
            cdfs["new_submissions"].xs, cdfs["new_submissions"].fs)},
        "obs2": {"completion_r2": linear_fit_r2(
            cdfs["completions"].xs, cdfs["completions"].fs)},
        "obs3": {
            "lump_count": len(lumps),
            "lumps": [
                {"start": l.start, "peak": l.peak, "end": l.end,
                 "max_excess": l.max_excess}
                for l in lumps
            ],
        },
        "obs4": {"max_submission_scheduling_gap": max_gap_unweighted},
        "obs5": {"completion_deficit": totals.new_submissions - totals.completions},
        "obs6": {"max_weighted_submission_scheduling_gap": max_gap_weighted},
        "obs7": {"queue_terminal_slope_per_us": _terminal_slope(queue),
                 "queue_final": int(queue.values[-1]) if len(queue.values) else 0},
        "obs8": {"running_terminal_slope_per_us": _terminal_slope(running),
                 "running_final": int(running.values[-1]) if len(running.values) else 0},
        "obs9": {
            "exec_ma_variance": float(np.var(exec_ma.values)) if len(exec_ma.values) else 0.0,
            "sched_ma_variance": float(np.var(sched_ma.values)) if len(sched_ma.values) else 0.0,
        },
        "obs10": {
            "distinct_tasks": distinct_tasks,
            "first_submit_count": totals.new_submissions,
            "completed_tasks": int(len(exec_times)),
            "min_execution_us": int(exec_times.min()) if len(exec_times) else None,
            "max_execution_us": int(exec_times.max()) if len(exec_times) else None,
            "sub_second_completions": int((exec_times < 1_000_000).sum()),
            "fraction_under_30min": (
                float((exec_times < 30 * 60 * 1_000_000).mean()) if len(exec_times) else None
            ),
        },
    }


def _max_gap(a: Cdf, b: Cdf) -> float:
    if a.empty or b.empty:
        return 0.0
    grid = np.union1d(a.xs, b.xs)
    return float(np.max(np.abs(_step_eval(a, grid) - _step_eval(b, grid))))
