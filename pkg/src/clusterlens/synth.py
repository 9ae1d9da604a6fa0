"""Seeded synthetic trace generator for desk-scale testing.

Produces bundles that are legal by construction: stratified first submissions
(constant rate), a configurable execution-time mixture, optional resubmission
bursts, and per-period usage with either i.i.d. or random-walk noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .ingest import TraceBundle, UsageSample, sort_events
from .model import EventKind, TaskEvent, TaskKey

US_PER_S = 1_000_000


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Burst:
    center_s: float
    count: int
    width_s: float = 1.0


@dataclass
class SynthConfig:
    task_count: int = 1000
    duration_s: int = 3600
    seed: int = 0
    job_id_base: int = 100_000

    submit_at_start: bool = False  # stationary mode: everything arrives early
    sched_delay_s: tuple[float, float] = (1.0, 10.0)

    exec_short_fraction: float = 0.8
    exec_short_range_s: tuple[float, float] = (30.0, 1800.0)
    exec_long_range_s: tuple[float, float] = (1800.0, 21600.0)

    finish_prob: float = 0.85
    nonfinish_kinds: tuple = (EventKind.KILL, EventKind.FAIL, EventKind.EVICT, EventKind.LOST)
    nonfinish_weights: tuple = (0.5, 0.3, 0.15, 0.05)
    pending_death_prob: float = 0.0  # die before ever being scheduled
    update_prob: float = 0.1

    bursts: tuple[Burst, ...] = ()

    production_fraction: float = 0.06
    gratis_fraction: float = 0.2
    production_request: tuple[float, float] = (0.4, 0.6)
    other_request: tuple[float, float] = (0.005, 0.01)

    emit_usage: bool = True
    usage_base_period_s: int = 60
    usage_level: float = 0.5  # mean usage as fraction of request
    usage_change_mode: str = "iid"  # "iid" | "walk"
    usage_change_bound: float = 0.2

    machine_count: int = 20
    machine_cpu_cap: float = 10.0
    machine_mem_cap: float = 10.0

    def validate(self) -> None:
        if self.task_count < 0 or self.duration_s <= 0:
            raise ConfigError("task_count must be >= 0 and duration_s > 0")
        if not 0.0 <= self.exec_short_fraction <= 1.0:
            raise ConfigError("exec_short_fraction outside [0, 1]")
        if not 0.0 <= self.finish_prob <= 1.0:
            raise ConfigError("finish_prob outside [0, 1]")
        if self.usage_change_mode not in ("iid", "walk"):
            raise ConfigError(f"unknown usage_change_mode {self.usage_change_mode!r}")
        if self.usage_change_bound < 0:
            raise ConfigError("usage_change_bound must be >= 0")
        for b in self.bursts:
            if not 0 < b.center_s < self.duration_s:
                raise ConfigError(f"burst center {b.center_s}s outside trace duration")
            if b.count < 0 or b.width_s < 0:
                raise ConfigError("burst count and width must be >= 0")


@dataclass
class TaskTruth:
    key: TaskKey
    priority: int
    cpu_request: float
    mem_request: float
    machine: int
    spans: list[tuple[int, Optional[int], Optional[int], Optional[EventKind]]] = field(
        default_factory=list
    )  # (submit, schedule, end, terminal kind); end None = live


@dataclass
class SynthTruth:
    tasks: dict[TaskKey, TaskTruth] = field(default_factory=dict)

    @property
    def completion_count(self) -> int:
        return sum(
            1
            for t in self.tasks.values()
            for s in t.spans
            if s[3] is EventKind.FINISH
        )

    def execution_us(self) -> dict[TaskKey, int]:
        out = {}
        for k, t in self.tasks.items():
            total = sum(
                s[2] - s[1] for s in t.spans if s[1] is not None and s[2] is not None
            )
            out[k] = total
        return out


def _exec_duration_us(cfg: SynthConfig, rng: np.random.Generator) -> int:
    if rng.random() < cfg.exec_short_fraction:
        lo, hi = cfg.exec_short_range_s
    else:
        lo, hi = cfg.exec_long_range_s
    return int(rng.uniform(lo, hi) * US_PER_S)


def _terminal_kind(cfg: SynthConfig, rng: np.random.Generator) -> EventKind:
    if rng.random() < cfg.finish_prob:
        return EventKind.FINISH
    return cfg.nonfinish_kinds[
        rng.choice(len(cfg.nonfinish_kinds), p=np.array(cfg.nonfinish_weights) /
                   sum(cfg.nonfinish_weights))
    ]


def generate_synthetic(cfg: SynthConfig) -> tuple[TraceBundle, SynthTruth]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    duration = cfg.duration_s * US_PER_S
    truth = SynthTruth()
    events: list[TaskEvent] = []

    machines = {
        m: (cfg.machine_cpu_cap, cfg.machine_mem_cap) for m in range(cfg.machine_count)
    }
    if cfg.task_count == 0:
        return TraceBundle([], [], machines), truth

    slot = duration / cfg.task_count
    for i in range(cfg.task_count):
        key = TaskKey(cfg.job_id_base + i, 0)
        if cfg.submit_at_start:
            t0 = int(rng.uniform(0, min(duration * 0.01, 60 * US_PER_S)))
        else:
            t0 = min(int((i + rng.random()) * slot), duration - 1)
        r = rng.random()
        if r < cfg.production_fraction:
            priority = int(rng.integers(9, 12))
            req_lo, req_hi = cfg.production_request
        elif r < cfg.production_fraction + cfg.gratis_fraction:
            priority = int(rng.integers(0, 2))
            req_lo, req_hi = cfg.other_request
        else:
            priority = int(rng.integers(2, 9))
            req_lo, req_hi = cfg.other_request
        cpu_req = float(rng.uniform(req_lo, req_hi))
        mem_req = float(rng.uniform(req_lo, req_hi))
        machine = int(rng.integers(0, cfg.machine_count))
        task = TaskTruth(key, priority, cpu_req, mem_req, machine)
        truth.tasks[key] = task
        _emit_attempt(cfg, rng, events, task, t0, duration, allow_pending_death=True)

    # Resubmission bursts: revive tasks that died before the burst center.
    for burst in cfg.bursts:
        center = int(burst.center_s * US_PER_S)
        eligible = [
            t for t in truth.tasks.values()
            if t.spans and t.spans[-1][2] is not None and t.spans[-1][2] < center
        ]
        eligible.sort(key=lambda t: t.key)
        if not eligible:
            continue
        picked_idx = rng.choice(
            len(eligible), size=min(burst.count, len(eligible)), replace=False
        )
        for idx in sorted(picked_idx):
            task = eligible[idx]
            jitter = rng.uniform(-burst.width_s / 2, burst.width_s / 2)
            t0 = int(center + jitter * US_PER_S)
            t0 = max(t0, task.spans[-1][2] + 1)
            if t0 >= duration:
                continue
            _emit_attempt(cfg, rng, events, task, t0, duration, allow_pending_death=False)

    events = list(sort_events(events))

    usage: list[UsageSample] = []
    if cfg.emit_usage:
        base = cfg.usage_base_period_s * US_PER_S
        for key in sorted(truth.tasks):
            task = truth.tasks[key]
            for submit_t, sched_t, end_t, _terminal in task.spans:
                if sched_t is None:
                    continue
                stop = duration if end_t is None else end_t
                usage.extend(_emit_usage(cfg, rng, task, sched_t, stop, base))
        usage.sort(key=lambda s: (s.window_start, s.key))

    return TraceBundle(events, usage, machines), truth


def _emit_attempt(
    cfg: SynthConfig,
    rng: np.random.Generator,
    events: list[TaskEvent],
    task: TaskTruth,
    t0: int,
    duration: int,
    allow_pending_death: bool,
) -> None:
    def ev(time: int, kind: EventKind, with_req: bool = False) -> TaskEvent:
        return TaskEvent(
            time=time,
            key=task.key,
            kind=kind,
            machine_id=task.machine if kind is not EventKind.SUBMIT else None,
            priority=task.priority,
            scheduling_class=int(task.priority > 8),
            cpu_request=task.cpu_request if with_req else None,
            mem_request=task.mem_request if with_req else None,
        )

    events.append(ev(t0, EventKind.SUBMIT, with_req=True))
    if allow_pending_death and rng.random() < cfg.pending_death_prob:
        death_t = t0 + int(rng.uniform(1, 30) * US_PER_S)
        if death_t < duration:
            kind = _terminal_kind(cfg, rng)
            if kind is EventKind.FINISH:  # finish needs a schedule first
                kind = EventKind.KILL
            events.append(ev(death_t, kind))
            task.spans.append((t0, None, death_t, kind))
            return
        task.spans.append((t0, None, None, None))
        return

    delay = int(rng.uniform(*cfg.sched_delay_s) * US_PER_S)
    sched_t = t0 + max(delay, 1)
    if sched_t >= duration:
        task.spans.append((t0, None, None, None))
        return
    if rng.random() < cfg.update_prob and sched_t - t0 > 2:
        events.append(ev(t0 + (sched_t - t0) // 2, EventKind.UPDATE_PENDING))
    events.append(ev(sched_t, EventKind.SCHEDULE))

    end_t = sched_t + max(_exec_duration_us(cfg, rng), 1)
    if end_t >= duration:
        task.spans.append((t0, sched_t, None, None))
        return
    if rng.random() < cfg.update_prob and end_t - sched_t > 2:
        events.append(ev(sched_t + (end_t - sched_t) // 2, EventKind.UPDATE_RUNNING))
    kind = _terminal_kind(cfg, rng)
    events.append(ev(end_t, kind))
    task.spans.append((t0, sched_t, end_t, kind))


def _emit_usage(
    cfg: SynthConfig,
    rng: np.random.Generator,
    task: TaskTruth,
    start: int,
    stop: int,
    base: int,
) -> list[UsageSample]:
    out: list[UsageSample] = []
    bound = cfg.usage_change_bound
    cpu = cfg.usage_level * task.cpu_request
    mem = cfg.usage_level * task.mem_request
    p = start // base
    while p * base < stop:
        lo = max(start, p * base)
        hi = min(stop, (p + 1) * base)
        if hi <= lo:
            p += 1
            continue
        if cfg.usage_change_mode == "iid":
            cpu_u = cfg.usage_level * task.cpu_request * (1 + rng.uniform(-bound, bound))
            mem_u = cfg.usage_level * task.mem_request * (1 + rng.uniform(-bound, bound))
        else:  # random walk, reflected at the clamp edges
            cpu = float(np.clip(cpu * (1 + rng.uniform(-bound, bound)),
                                0.05 * task.cpu_request, 0.95 * task.cpu_request))
            mem = float(np.clip(mem * (1 + rng.uniform(-bound, bound)),
                                0.05 * task.mem_request, 0.95 * task.mem_request))
            cpu_u, mem_u = cpu, mem
        out.append(
            UsageSample(
                window_start=lo,
                window_end=hi,
                key=task.key,
                machine_id=task.machine,
                cpu_usage=min(cpu_u, task.cpu_request),
                mem_usage=min(mem_u, task.mem_request),
            )
        )
        p += 1
    return out


def stationary_config(task_count: int, duration_s: int, seed: int, **overrides) -> SynthConfig:
    """Long-running tasks arriving at the start, i.i.d. bounded usage noise."""
    cfg = SynthConfig(
        task_count=task_count,
        duration_s=duration_s,
        seed=seed,
        submit_at_start=True,
        exec_short_fraction=0.0,
        exec_long_range_s=(duration_s * 2.0, duration_s * 3.0),  # live at trace end
        update_prob=0.0,
    )
    return replace(cfg, **overrides)
