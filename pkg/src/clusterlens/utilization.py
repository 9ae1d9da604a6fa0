"""Cluster/tier utilization series, consecutive-period change distributions
and period resampling."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .ingest import UsageSample
from .model import PriorityTier, TaskKey, tier_of

US_PER_S = 1_000_000
CHANGE_EPSILON = 1e-6  # capacity units; guards idle-machine denominators


class ResolutionError(Exception):
    """Requested period finer than the underlying sample resolution."""


class InsufficientDataError(Exception):
    """Fewer than two periods: no consecutive change is defined."""


@dataclass
class UtilSeries:
    period_s: int
    resource: str  # "cpu" | "mem"
    scope: str
    times: np.ndarray  # period start, microseconds
    values: np.ndarray
    capacity: Optional[float] = None


@dataclass
class ChangeDistribution:
    resource: str
    period_s: int
    samples: np.ndarray  # sorted relative change magnitudes

    def quantile(self, q: float) -> float:
        if len(self.samples) == 0:
            raise InsufficientDataError("no change samples")
        if not 0.0 <= q <= 1.0:
            raise ValueError("quantile level outside [0, 1]")
        if q == 0.0:
            return float(self.samples[0])
        i = min(len(self.samples) - 1, math.ceil(q * len(self.samples)) - 1)
        return float(self.samples[i])

    def cdf_points(self) -> tuple[np.ndarray, np.ndarray]:
        xs, counts = np.unique(self.samples, return_counts=True)
        return xs, np.cumsum(counts) / len(self.samples)


def _usage_value(s: UsageSample, resource: str) -> float:
    return s.cpu_usage if resource == "cpu" else s.mem_usage


def sample_granularity(samples: Sequence[UsageSample]) -> int:
    """Finest sample window in the stream, microseconds."""
    return min(s.window_end - s.window_start for s in samples)


def bucket_usage(
    samples: Iterable[UsageSample],
    period_s: int,
    resource: str,
    key_filter=None,
) -> dict[int, float]:
    """Per-period total usage, time-weighted by window overlap with the period."""
    period_us = period_s * US_PER_S
    buckets: dict[int, float] = defaultdict(float)
    for s in samples:
        if key_filter is not None and not key_filter(s.key):
            continue
        value = _usage_value(s, resource)
        p = s.window_start // period_us
        last = (s.window_end - 1) // period_us if s.window_end > s.window_start else p
        while p <= last:
            lo = max(s.window_start, p * period_us)
            hi = min(s.window_end, (p + 1) * period_us)
            buckets[p] += value * (hi - lo) / period_us
            p += 1
    return dict(buckets)


def util_series(
    samples: Sequence[UsageSample],
    resource: str = "cpu",
    period_s: int = 300,
    scope: str = "cluster",
    tier: Optional[PriorityTier] = None,
    priority_of: Optional[Mapping[TaskKey, int]] = None,
    gratis_max: int = 1,
    capacity: Optional[float] = None,
) -> UtilSeries:
    """Sum of in-scope mean usage per sampling period."""
    if samples and period_s * US_PER_S < sample_granularity(samples):
        raise ResolutionError(
            f"period {period_s}s is finer than the sample windows"
        )
    key_filter = None
    if scope == "tier":
        if tier is None or priority_of is None:
            raise ValueError("tier scope needs a tier and a priority map")
        key_filter = lambda k: tier_of(priority_of[k], gratis_max) is tier
    buckets = bucket_usage(samples, period_s, resource, key_filter)
    times = np.array(sorted(buckets), dtype=np.int64)
    values = np.array([buckets[int(t)] for t in times])
    return UtilSeries(period_s, resource, scope, times * period_s * US_PER_S,
                      values, capacity)


def machine_series(
    samples: Sequence[UsageSample], resource: str, period_s: int
) -> dict[int, dict[int, float]]:
    """machine id -> {period index -> total usage}."""
    by_machine: dict[int, list[UsageSample]] = defaultdict(list)
    for s in samples:
        by_machine[s.machine_id].append(s)
    return {
        m: bucket_usage(evs, period_s, resource) for m, evs in sorted(by_machine.items())
    }


def change_distribution(
    samples: Sequence[UsageSample],
    resource: str = "cpu",
    period_s: int = 300,
    exclude_churn: bool = False,
    relative: bool = True,
) -> ChangeDistribution:
    """Pooled per-machine distribution of utilization changes between
    consecutive sampling periods.

    relative=True divides |u2 - u1| by max(u1, epsilon); exclude_churn drops
    period pairs whose resident task sets differ.
    """
    per_machine = machine_series(samples, resource, period_s)
    tasks_per_period: dict[tuple[int, int], set] = defaultdict(set)
    if exclude_churn:
        period_us = period_s * US_PER_S
        for s in samples:
            p = s.window_start // period_us
            last = (s.window_end - 1) // period_us if s.window_end > s.window_start else p
            while p <= last:
                tasks_per_period[(s.machine_id, p)].add(s.key)
                p += 1
    changes: list[float] = []
    enough = False
    for m, buckets in per_machine.items():
        if not buckets:
            continue
        lo, hi = min(buckets), max(buckets)
        if hi > lo:
            enough = True
        for p in range(lo, hi):
            u1 = buckets.get(p, 0.0)
            u2 = buckets.get(p + 1, 0.0)
            if exclude_churn and tasks_per_period[(m, p)] != tasks_per_period[(m, p + 1)]:
                continue
            delta = abs(u2 - u1)
            if relative:
                if u1 <= CHANGE_EPSILON and u2 <= CHANGE_EPSILON:
                    changes.append(0.0)  # idle-to-idle
                else:
                    changes.append(delta / max(u1, CHANGE_EPSILON))
            else:
                changes.append(delta)
    if not enough:
        raise InsufficientDataError("need at least 2 periods per machine")
    return ChangeDistribution(resource, period_s, np.sort(np.array(changes)))


def resample(
    samples: Sequence[UsageSample],
    period_s: int,
    resource: str = "cpu",
    warn_below_s: int = 8,
) -> UtilSeries:
    """Cluster-scope series at the requested period; errors rather than
    interpolating when the data lacks sub-period resolution."""
    if samples:
        native_us = sample_granularity(samples)
        if period_s * US_PER_S < native_us:
            raise ResolutionError(
                f"cannot resample to {period_s}s: native resolution is "
                f"{native_us / US_PER_S:g}s"
            )
    if period_s < warn_below_s:
        import warnings

        warnings.warn(
            f"sampling period {period_s}s is below the {warn_below_s}s "
            "minimum meaningful task duration",
            stacklevel=2,
        )
    return util_series(samples, resource=resource, period_s=period_s)
