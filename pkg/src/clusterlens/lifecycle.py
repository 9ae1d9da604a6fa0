"""Per-task lifecycle reconstruction, validation and span extraction."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional

from .ingest import group_by_key
from .model import (
    INITIAL_STATE,
    TERMINAL_KINDS,
    UPDATE_KINDS,
    EventKind,
    TaskEvent,
    TaskKey,
    TaskState,
    TerminalClassification,
    classify_terminal,
    legal_transition,
)


@dataclass(frozen=True, slots=True)
class Violation:
    index: int
    time: int
    from_state: TaskState
    kind: EventKind


@dataclass(frozen=True, slots=True)
class ScheduleSpan:
    submit_time: int
    schedule_time: Optional[int] = None
    end_time: Optional[int] = None
    terminal: Optional[TerminalClassification] = None
    live: bool = False

    @property
    def scheduling_time(self) -> Optional[int]:
        if self.schedule_time is None:
            return None
        return self.schedule_time - self.submit_time

    @property
    def execution_time(self) -> Optional[int]:
        if self.schedule_time is None or self.end_time is None:
            return None
        return self.end_time - self.schedule_time


@dataclass(frozen=True, slots=True)
class ClassifiedEvent:
    """One legal collapsed event with its pre-state and terminal class."""

    time: int
    kind: EventKind
    state_before: TaskState
    terminal: Optional[TerminalClassification]


@dataclass
class Lifecycle:
    key: TaskKey
    events: list[TaskEvent]
    collapsed: list[TaskEvent] = field(default_factory=list)
    violations: list[Violation] = field(default_factory=list)
    spans: list[ScheduleSpan] = field(default_factory=list)
    classified: list[ClassifiedEvent] = field(default_factory=list)
    snapshot_seeded: bool = False


def collapse_updates(events: list[TaskEvent]) -> list[TaskEvent]:
    return [ev for ev in events if ev.kind not in UPDATE_KINDS]


def replay(
    events: Iterable[TaskEvent], initial_state: TaskState = INITIAL_STATE
) -> tuple[list[ClassifiedEvent], list[Violation]]:
    """Replay events through the corrected state machine.

    Illegal events are recorded as violations and skipped: they do not
    advance the state and never contribute a classification.
    """
    state = initial_state
    classified: list[ClassifiedEvent] = []
    violations: list[Violation] = []
    for i, ev in enumerate(events):
        nxt = legal_transition(state, ev.kind)
        if nxt is None:
            violations.append(Violation(i, ev.time, state, ev.kind))
            continue
        classified.append(
            ClassifiedEvent(ev.time, ev.kind, state, classify_terminal(state, ev.kind))
        )
        state = nxt
    return classified, violations


def classify_terminals(life: Lifecycle) -> list[TerminalClassification]:
    """Terminal class of each dead-making event, by collapsed predecessor."""
    return [ce.terminal for ce in life.classified if ce.terminal is not None]


def extract_spans(
    classified: list[ClassifiedEvent], trace_end: Optional[int] = None
) -> list[ScheduleSpan]:
    spans: list[ScheduleSpan] = []
    submit_t: Optional[int] = None
    schedule_t: Optional[int] = None
    for ce in classified:
        if ce.kind is EventKind.SUBMIT:
            submit_t, schedule_t = ce.time, None
        elif ce.kind is EventKind.SCHEDULE:
            schedule_t = ce.time
        elif ce.kind in TERMINAL_KINDS and submit_t is not None:
            spans.append(ScheduleSpan(submit_t, schedule_t, ce.time, ce.terminal))
            submit_t, schedule_t = None, None
    if submit_t is not None:
        spans.append(ScheduleSpan(submit_t, schedule_t, None, None, live=True))
    return spans


def _snapshot_initial_state(events: list[TaskEvent]) -> TaskState:
    """Initial state implied by a snapshot-flagged opening record."""
    first = events[0].kind
    if legal_transition(TaskState.PENDING, first) is not None:
        return TaskState.PENDING
    if legal_transition(TaskState.RUNNING, first) is not None:
        return TaskState.RUNNING
    return INITIAL_STATE


def build_lifecycle(
    key: TaskKey,
    events: list[TaskEvent],
    trace_end: Optional[int] = None,
    seed_from_snapshot: bool = False,
) -> Lifecycle:
    life = Lifecycle(key=key, events=events)
    initial = INITIAL_STATE
    if (
        seed_from_snapshot
        and events
        and events[0].missing_info is not None
        and events[0].kind is not EventKind.SUBMIT
    ):
        initial = _snapshot_initial_state(events)
        life.snapshot_seeded = initial is not INITIAL_STATE
    _, life.violations = replay(events, initial)  # raw: update self-loops validated too
    life.collapsed = collapse_updates(events)
    life.classified, _ = replay(life.collapsed, initial)
    life.spans = extract_spans(life.classified, trace_end)
    return life


def build_lifecycles(
    events: Iterable[TaskEvent],
    trace_end: Optional[int] = None,
    max_keys_in_memory: int = 5_000_000,
    seed_from_snapshot: bool = False,
) -> Iterator[Lifecycle]:
    """One Lifecycle per distinct key from a time-sorted event stream."""
    for key, evs in group_by_key(events, max_keys_in_memory=max_keys_in_memory):
        yield build_lifecycle(key, evs, trace_end, seed_from_snapshot)


def write_violations_csv(lifecycles: Iterable[Lifecycle], fh: IO) -> int:
    writer = csv.writer(fh)
    writer.writerow(["job_id", "task_index", "event_index", "time", "from_state", "kind"])
    n = 0
    for life in lifecycles:
        for v in life.violations:
            writer.writerow(
                [life.key.job_id, life.key.task_index, v.index, v.time,
                 v.from_state.value, v.kind.name.lower()]
            )
            n += 1
    return n


def write_spans_csv(lifecycles: Iterable[Lifecycle], fh: IO) -> int:
    writer = csv.writer(fh)
    writer.writerow(
        ["job_id", "task_index", "submit_time", "schedule_time", "end_time", "terminal", "live"]
    )
    n = 0
    for life in lifecycles:
        for s in life.spans:
            writer.writerow(
                [
                    life.key.job_id,
                    life.key.task_index,
                    s.submit_time,
                    "" if s.schedule_time is None else s.schedule_time,
                    "" if s.end_time is None else s.end_time,
                    "" if s.terminal is None else s.terminal.value,
                    int(s.live),
                ]
            )
            n += 1
    return n
