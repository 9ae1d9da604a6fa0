"""Domain types and the corrected task state machine.

Everything here is an immutable value; the transition relation is a plain
dict so both validation and collapsing can be expressed against it.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import NamedTuple, Optional


class EventKind(IntEnum):
    """Task event kinds, carrying the public clusterdata numeric codes."""

    SUBMIT = 0
    SCHEDULE = 1
    EVICT = 2
    FAIL = 3
    FINISH = 4
    KILL = 5
    LOST = 6
    UPDATE_PENDING = 7
    UPDATE_RUNNING = 8


UPDATE_KINDS = frozenset({EventKind.UPDATE_PENDING, EventKind.UPDATE_RUNNING})

TERMINAL_KINDS = frozenset(
    {EventKind.EVICT, EventKind.FAIL, EventKind.FINISH, EventKind.KILL, EventKind.LOST}
)


class TaskState(Enum):
    PENDING = "pending"
    RUNNING = "running"
    DEAD = "dead"


class PriorityTier(Enum):
    PRODUCTION = "production"
    MIDDLE = "middle"
    GRATIS = "gratis"


class TerminalClassification(Enum):
    P_FAIL = "pFail"
    P_KILL = "pKill"
    P_LOST = "pLost"
    R_FAIL = "rFail"
    R_KILL = "rKill"
    R_LOST = "rLost"
    FINISH = "finish"
    EVICT_FROM_PENDING = "evictFromPending"
    EVICT_FROM_RUNNING = "evictFromRunning"


# Terminals that end a pending (never-scheduled) span.
PENDING_TERMINALS = frozenset(
    {
        TerminalClassification.P_FAIL,
        TerminalClassification.P_KILL,
        TerminalClassification.P_LOST,
        TerminalClassification.EVICT_FROM_PENDING,
    }
)

# Terminals that end a running span.
RUNNING_TERMINALS = frozenset(
    {
        TerminalClassification.R_FAIL,
        TerminalClassification.R_KILL,
        TerminalClassification.R_LOST,
        TerminalClassification.FINISH,
        TerminalClassification.EVICT_FROM_RUNNING,
    }
)


class TaskKey(NamedTuple):
    job_id: int
    task_index: int


@dataclass(frozen=True, slots=True)
class TaskEvent:
    time: int  # microseconds since trace start
    key: TaskKey
    kind: EventKind
    machine_id: Optional[int] = None
    priority: int = 0
    scheduling_class: int = 0
    cpu_request: Optional[float] = None
    mem_request: Optional[float] = None
    missing_info: Optional[int] = None


# Corrected transition graph: a task is evictable straight from pending, and
# submit-after-submit is illegal.  A task not yet seen is treated as DEAD so
# that fresh entry and resubmission share the single DEAD -> PENDING edge.
_TRANSITIONS: dict[tuple[TaskState, EventKind], TaskState] = {
    (TaskState.DEAD, EventKind.SUBMIT): TaskState.PENDING,
    (TaskState.PENDING, EventKind.SCHEDULE): TaskState.RUNNING,
    (TaskState.PENDING, EventKind.EVICT): TaskState.DEAD,
    (TaskState.PENDING, EventKind.FAIL): TaskState.DEAD,
    (TaskState.PENDING, EventKind.KILL): TaskState.DEAD,
    (TaskState.PENDING, EventKind.LOST): TaskState.DEAD,
    (TaskState.PENDING, EventKind.UPDATE_PENDING): TaskState.PENDING,
    (TaskState.RUNNING, EventKind.FINISH): TaskState.DEAD,
    (TaskState.RUNNING, EventKind.EVICT): TaskState.DEAD,
    (TaskState.RUNNING, EventKind.FAIL): TaskState.DEAD,
    (TaskState.RUNNING, EventKind.KILL): TaskState.DEAD,
    (TaskState.RUNNING, EventKind.LOST): TaskState.DEAD,
    (TaskState.RUNNING, EventKind.UPDATE_RUNNING): TaskState.RUNNING,
}

INITIAL_STATE = TaskState.DEAD


def legal_transition(state: TaskState, kind: EventKind) -> Optional[TaskState]:
    """Successor state for (state, kind), or None when the edge is illegal."""
    return _TRANSITIONS.get((state, kind))


DEFAULT_GRATIS_MAX = 1  # priorities 0..1 are the free tier by trace convention
PRODUCTION_MIN = 9
PRIORITY_MAX = 11


def tier_of(priority: int, gratis_max: int = DEFAULT_GRATIS_MAX) -> PriorityTier:
    if not 0 <= priority <= PRIORITY_MAX:
        raise ValueError(f"priority {priority} outside 0..{PRIORITY_MAX}")
    if priority >= PRODUCTION_MIN:
        return PriorityTier.PRODUCTION
    if priority <= gratis_max:
        return PriorityTier.GRATIS
    return PriorityTier.MIDDLE


def classify_terminal(
    state_before: TaskState, kind: EventKind
) -> Optional[TerminalClassification]:
    """Classification of a dead-making event by the state it fires from.

    Equivalent to classifying by the collapsed predecessor: PENDING means the
    predecessor was a submit, RUNNING means it was a schedule.
    """
    if kind not in TERMINAL_KINDS:
        return None
    if state_before is TaskState.PENDING:
        return {
            EventKind.FAIL: TerminalClassification.P_FAIL,
            EventKind.KILL: TerminalClassification.P_KILL,
            EventKind.LOST: TerminalClassification.P_LOST,
            EventKind.EVICT: TerminalClassification.EVICT_FROM_PENDING,
        }.get(kind)
    if state_before is TaskState.RUNNING:
        return {
            EventKind.FAIL: TerminalClassification.R_FAIL,
            EventKind.KILL: TerminalClassification.R_KILL,
            EventKind.LOST: TerminalClassification.R_LOST,
            EventKind.EVICT: TerminalClassification.EVICT_FROM_RUNNING,
            EventKind.FINISH: TerminalClassification.FINISH,
        }.get(kind)
    return None
