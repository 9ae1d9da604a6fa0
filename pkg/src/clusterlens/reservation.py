"""Trace-driven reservation-policy simulation: static requests, a decaying
Borg-style estimator, and change-quantile margins, with per-period violation
and eviction accounting."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .ingest import TraceBundle, UsageSample
from .model import EventKind, PriorityTier, TaskKey, tier_of
from .utilization import (
    CHANGE_EPSILON,
    US_PER_S,
    ChangeDistribution,
    InsufficientDataError,
    ResolutionError,
    sample_granularity,
)

VIOLATION_EPS = 1e-12


class PolicyError(Exception):
    """Reservation basis undefined (e.g. missing resource request)."""


@dataclass(frozen=True)
class RequestStatic:
    name: str = "request-static"


@dataclass(frozen=True)
class BorgDecay:
    decay_rate: float = 0.1  # per period, toward usage*(1+margin)
    margin_fraction: float = 0.15
    name: str = "borg-decay"


@dataclass(frozen=True)
class ChangeQuantileMargin:
    q: float
    distribution: ChangeDistribution
    floor_fraction: float = 0.0
    name: str = "change-quantile-margin"

    @property
    def margin(self) -> float:
        return self.distribution.quantile(self.q)


Policy = Union[RequestStatic, BorgDecay, ChangeQuantileMargin]


def reserve(
    policy: Policy,
    request: Optional[float],
    usage: Optional[float] = None,
    prev_reservation: Optional[float] = None,
) -> float:
    """Reservation for one task at one decision point.

    `usage` is the last observed usage; None means cold start, which reserves
    the full request under every variant.
    """
    if request is None:
        raise PolicyError("task has no resource request")
    if isinstance(policy, RequestStatic) or usage is None:
        return request
    if isinstance(policy, BorgDecay):
        target = usage * (1.0 + policy.margin_fraction)
        prev = request if prev_reservation is None else prev_reservation
        decayed = prev - policy.decay_rate * (prev - target)
        return min(request, max(target, decayed, usage))
    if isinstance(policy, ChangeQuantileMargin):
        margin = max(policy.margin, policy.floor_fraction)
        return min(request, usage * (1.0 + margin))
    raise PolicyError(f"unknown policy {policy!r}")


def _reserve_array(
    policy: Policy,
    request: np.ndarray,
    usage: np.ndarray,  # last observed usage; NaN = cold start
    prev_res: np.ndarray,
) -> np.ndarray:
    cold = np.isnan(usage)
    if isinstance(policy, RequestStatic):
        return request.copy()
    if isinstance(policy, BorgDecay):
        target = usage * (1.0 + policy.margin_fraction)
        decayed = prev_res - policy.decay_rate * (prev_res - target)
        res = np.minimum(request, np.maximum.reduce([target, decayed, usage]))
    elif isinstance(policy, ChangeQuantileMargin):
        margin = max(policy.margin, policy.floor_fraction)
        res = np.minimum(request, usage * (1.0 + margin))
    else:
        raise PolicyError(f"unknown policy {policy!r}")
    return np.where(cold, request, res)


@dataclass
class TierStats:
    reclaimed: float = 0.0
    violations: int = 0
    evictions: int = 0
    periods: int = 0


@dataclass
class SimReport:
    policy: str
    resource: str
    period_s: int
    params: dict
    reclaimed: float = 0.0  # request-unit * seconds
    violation_count: int = 0
    violation_rate: float = 0.0
    evictions_triggered: int = 0
    unresolved_overflow_periods: int = 0
    task_periods: int = 0
    per_tier: dict[str, TierStats] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "resource": self.resource,
            "period_s": self.period_s,
            "params": self.params,
            "reclaimed": self.reclaimed,
            "violation_count": self.violation_count,
            "violation_rate": self.violation_rate,
            "evictions_triggered": self.evictions_triggered,
            "unresolved_overflow_periods": self.unresolved_overflow_periods,
            "task_periods": self.task_periods,
            "per_tier": {
                t: {"reclaimed": s.reclaimed, "violations": s.violations,
                    "evictions": s.evictions, "periods": s.periods}
                for t, s in sorted(self.per_tier.items())
            },
        }


def _policy_params(policy: Policy) -> dict:
    if isinstance(policy, RequestStatic):
        return {}
    if isinstance(policy, BorgDecay):
        return {"decay_rate": policy.decay_rate, "margin_fraction": policy.margin_fraction}
    return {"q": policy.q, "margin": policy.margin, "floor_fraction": policy.floor_fraction}


@dataclass
class _ReplayTable:
    keys: list[TaskKey]
    request: np.ndarray  # N
    priority: np.ndarray  # N
    machine: np.ndarray  # N
    usage: np.ndarray  # N x P, NaN where absent
    period_s: int


def build_replay_table(
    usage: Sequence[UsageSample],
    requests: Mapping[TaskKey, float],
    priorities: Mapping[TaskKey, int],
    period_s: int,
    resource: str = "cpu",
) -> _ReplayTable:
    if not usage:
        raise InsufficientDataError("no usage samples")
    if period_s * US_PER_S < sample_granularity(usage):
        raise ResolutionError(
            f"simulation period {period_s}s finer than usage sample windows"
        )
    period_us = period_s * US_PER_S
    keys = sorted({s.key for s in usage})
    index = {k: i for i, k in enumerate(keys)}
    n_periods = max((s.window_end - 1) // period_us for s in usage) + 1
    mat = np.zeros((len(keys), n_periods))
    present = np.zeros((len(keys), n_periods), dtype=bool)
    machine = np.full(len(keys), -1, dtype=np.int64)
    for s in usage:
        i = index[s.key]
        if machine[i] < 0:
            machine[i] = s.machine_id
        value = s.cpu_usage if resource == "cpu" else s.mem_usage
        p = s.window_start // period_us
        last = (s.window_end - 1) // period_us if s.window_end > s.window_start else p
        while p <= last:
            lo = max(s.window_start, p * period_us)
            hi = min(s.window_end, (p + 1) * period_us)
            mat[i, p] += value * (hi - lo) / period_us
            present[i, p] = True
            p += 1
    mat[~present] = np.nan
    for k in keys:
        if k not in requests or requests[k] is None:
            raise PolicyError(f"task {k} has no resource request")
    request = np.array([requests[k] for k in keys])
    priority = np.array([priorities.get(k, 0) for k in keys], dtype=np.int64)
    return _ReplayTable(keys, request, priority, machine, mat, period_s)


def requests_from_events(
    events: Iterable, resource: str = "cpu"
) -> tuple[dict[TaskKey, float], dict[TaskKey, int]]:
    """Per-task request and priority, taken from the first submit carrying them."""
    requests: dict[TaskKey, float] = {}
    priorities: dict[TaskKey, int] = {}
    for ev in events:
        if ev.kind is not EventKind.SUBMIT:
            continue
        req = ev.cpu_request if resource == "cpu" else ev.mem_request
        if ev.key not in requests and req is not None:
            requests[ev.key] = req
        priorities.setdefault(ev.key, ev.priority)
    return requests, priorities


def simulate(
    table: _ReplayTable,
    policy: Policy,
    machine_capacity: Optional[Mapping[int, float]] = None,
    gratis_max: int = 1,
    resource: str = "cpu",
) -> SimReport:
    """Period-by-period replay with per-(task, period) violation accounting
    and capacity-driven eviction of non-production tasks."""
    n, n_periods = table.usage.shape
    report = SimReport(
        policy=getattr(policy, "name", "policy"),
        resource=resource,
        period_s=table.period_s,
        params=_policy_params(policy),
    )
    tiers = np.array([tier_of(int(p), gratis_max).value for p in table.priority])
    for t in sorted(set(tiers.tolist())):
        report.per_tier[t] = TierStats()
    production = tiers == PriorityTier.PRODUCTION.value

    last_usage = np.full(n, np.nan)
    prev_res = table.request.copy()
    # eviction ordering: gratis before middle, then ascending priority
    tier_rank = np.where(tiers == PriorityTier.GRATIS.value, 0,
                         np.where(tiers == PriorityTier.MIDDLE.value, 1, 2))

    for p in range(n_periods):
        u = table.usage[:, p]
        present = ~np.isnan(u)
        if not present.any():
            continue
        res = _reserve_array(policy, table.request, last_usage, prev_res)
        res = np.where(present, res, prev_res)
        violated = present & (u > res + VIOLATION_EPS)
        reclaim = np.where(present, np.clip(table.request - res, 0.0, None), 0.0)

        report.violation_count += int(violated.sum())
        report.task_periods += int(present.sum())
        report.reclaimed += float(reclaim.sum()) * table.period_s
        for t, stats in report.per_tier.items():
            mask = present & (tiers == t)
            stats.violations += int((violated & mask).sum())
            stats.reclaimed += float(reclaim[mask].sum()) * table.period_s
            stats.periods += int(mask.sum())

        if machine_capacity is not None:
            need = np.where(present, np.maximum(res, u), 0.0)
            for m in np.unique(table.machine[present]):
                cap = machine_capacity.get(int(m))
                if cap is None:
                    continue
                on_m = present & (table.machine == m)
                total = float(need[on_m].sum())
                if total <= cap:
                    continue
                cand = np.flatnonzero(on_m & ~production)
                order = sorted(
                    cand,
                    key=lambda i: (tier_rank[i], table.priority[i], -need[i]),
                )
                for i in order:
                    if total <= cap:
                        break
                    total -= need[i]
                    report.evictions_triggered += 1
                    report.per_tier[str(tiers[i])].evictions += 1
                if total > cap:
                    report.unresolved_overflow_periods += 1

        last_usage = np.where(present, u, last_usage)
        prev_res = np.where(present, res, prev_res)

    if report.task_periods:
        report.violation_rate = report.violation_count / report.task_periods
    return report


def compare_policies(
    table: _ReplayTable,
    policies: Sequence[Policy],
    machine_capacity: Optional[Mapping[int, float]] = None,
    gratis_max: int = 1,
    resource: str = "cpu",
) -> list[SimReport]:
    if not policies:
        raise PolicyError("need at least one policy")
    reports = [
        simulate(table, pol, machine_capacity, gratis_max, resource) for pol in policies
    ]
    return sorted(reports, key=lambda r: -r.reclaimed)


def task_change_distribution(
    usage: Sequence[UsageSample],
    resource: str = "cpu",
    period_s: int = 300,
    keys: Optional[set[TaskKey]] = None,
) -> Optional[ChangeDistribution]:
    """Per-task consecutive-period relative change magnitudes, pooled.

    Returns None when no task has two consecutive present periods.
    """
    period_us = period_s * US_PER_S
    per_task: dict[TaskKey, dict[int, float]] = defaultdict(lambda: defaultdict(float))
    for s in usage:
        if keys is not None and s.key not in keys:
            continue
        value = s.cpu_usage if resource == "cpu" else s.mem_usage
        p = s.window_start // period_us
        last = (s.window_end - 1) // period_us if s.window_end > s.window_start else p
        while p <= last:
            lo = max(s.window_start, p * period_us)
            hi = min(s.window_end, (p + 1) * period_us)
            per_task[s.key][p] += value * (hi - lo) / period_us
            p += 1
    changes: list[float] = []
    for buckets in per_task.values():
        for p in sorted(buckets):
            if p + 1 in buckets:
                u1, u2 = buckets[p], buckets[p + 1]
                changes.append(abs(u2 - u1) / max(u1, CHANGE_EPSILON))
    if not changes:
        return None
    return ChangeDistribution(resource, period_s, np.sort(np.array(changes)))


def per_class_distributions(
    usage: Sequence[UsageSample],
    execution_us: Mapping[TaskKey, int],
    threshold_s: int = 300,
    resource: str = "cpu",
    period_s: int = 300,
) -> dict[str, Optional[ChangeDistribution]]:
    """Change distributions for long-running vs short-lived tasks, split by
    total executed duration against the threshold."""
    threshold_us = threshold_s * US_PER_S
    long_keys = {k for k, d in execution_us.items() if d >= threshold_us}
    usage_keys = {s.key for s in usage}
    short_keys = (usage_keys - long_keys) | (
        {k for k in execution_us if k not in long_keys} & usage_keys
    )
    short_keys -= long_keys
    return {
        "long": task_change_distribution(usage, resource, period_s, long_keys & usage_keys),
        "short": task_change_distribution(usage, resource, period_s, short_keys),
    }
