"""Streaming readers/writers for clusterdata-layout CSV traces.

Handles plain and gzip files, row-level diagnostics, deterministic sorting
with bounded memory, and hash-partitioned grouping by task key.
"""
from __future__ import annotations

import csv
import gzip
import heapq
import io
import os
import tempfile
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional, Sequence

from .model import EventKind, TaskEvent, TaskKey


class InputError(Exception):
    """Unreadable or structurally unusable input."""


@dataclass(frozen=True, slots=True)
class Diagnostic:
    line: int
    message: str


# clusterdata v2 task_events column layout (13 columns).
TASK_EVENTS_COLUMNS = (
    "time",
    "missing_info",
    "job_id",
    "task_index",
    "machine_id",
    "event_type",
    "user",
    "scheduling_class",
    "priority",
    "cpu_request",
    "memory_request",
    "disk_request",
    "different_machines",
)

DEFAULT_EVENT_CODEC = {name: i for i, name in enumerate(TASK_EVENTS_COLUMNS)}

# clusterdata v2 task_usage: we only consume the leading columns.
DEFAULT_USAGE_CODEC = {
    "start_time": 0,
    "end_time": 1,
    "job_id": 2,
    "task_index": 3,
    "machine_id": 4,
    "cpu_usage": 5,
    "mem_usage": 6,
}


@dataclass(frozen=True, slots=True)
class UsageSample:
    window_start: int
    window_end: int
    key: TaskKey
    machine_id: int
    cpu_usage: float
    mem_usage: float


@dataclass
class TraceBundle:
    """One loaded trace: events, usage samples and machine capacities."""

    task_events: list[TaskEvent]
    usage: list[UsageSample]
    machines: dict[int, tuple[float, float]] = field(default_factory=dict)

    @property
    def capacity(self) -> tuple[float, float]:
        cpu = sum(c for c, _ in self.machines.values())
        mem = sum(m for _, m in self.machines.values())
        return cpu, mem


def open_maybe_gzip(path: str, mode: str = "rt") -> IO:
    try:
        with open(path, "rb") as probe:
            magic = probe.read(2)
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    if magic == b"\x1f\x8b":
        return gzip.open(path, mode, newline="" if "t" in mode else None)
    return open(path, mode, newline="" if "t" in mode else None)


def _opt_int(field_: str) -> Optional[int]:
    return int(field_) if field_ else None


def _opt_float(field_: str) -> Optional[float]:
    return float(field_) if field_ else None


def parse_task_event_row(
    row: Sequence[str], codec: dict[str, int] = DEFAULT_EVENT_CODEC
) -> TaskEvent:
    if len(row) < len(TASK_EVENTS_COLUMNS):
        raise ValueError(f"expected {len(TASK_EVENTS_COLUMNS)} columns, got {len(row)}")
    code = int(row[codec["event_type"]])
    try:
        kind = EventKind(code)
    except ValueError:
        raise ValueError(f"unknown event kind {code}") from None
    return TaskEvent(
        time=int(row[codec["time"]]),
        key=TaskKey(int(row[codec["job_id"]]), int(row[codec["task_index"]])),
        kind=kind,
        machine_id=_opt_int(row[codec["machine_id"]]),
        priority=int(row[codec["priority"]] or 0),
        scheduling_class=int(row[codec["scheduling_class"]] or 0),
        cpu_request=_opt_float(row[codec["cpu_request"]]),
        mem_request=_opt_float(row[codec["memory_request"]]),
        missing_info=_opt_int(row[codec["missing_info"]]),
    )


def task_event_row(ev: TaskEvent) -> list[str]:
    row = [""] * len(TASK_EVENTS_COLUMNS)
    row[0] = str(ev.time)
    row[1] = "" if ev.missing_info is None else str(ev.missing_info)
    row[2] = str(ev.key.job_id)
    row[3] = str(ev.key.task_index)
    row[4] = "" if ev.machine_id is None else str(ev.machine_id)
    row[5] = str(int(ev.kind))
    row[7] = str(ev.scheduling_class)
    row[8] = str(ev.priority)
    row[9] = "" if ev.cpu_request is None else repr(ev.cpu_request)
    row[10] = "" if ev.mem_request is None else repr(ev.mem_request)
    return row


def read_task_events(
    source: str | IO,
    codec: dict[str, int] = DEFAULT_EVENT_CODEC,
    diagnostics: Optional[list[Diagnostic]] = None,
) -> Iterator[TaskEvent]:
    """Yield events in file order; malformed rows become diagnostics."""
    stream = open_maybe_gzip(source) if isinstance(source, str) else source
    try:
        for lineno, row in enumerate(csv.reader(stream), start=1):
            if not row:
                continue
            try:
                yield parse_task_event_row(row, codec)
            except (ValueError, IndexError) as exc:
                if diagnostics is not None:
                    diagnostics.append(Diagnostic(lineno, str(exc)))
    finally:
        if isinstance(source, str):
            stream.close()


def _open_for_write(path: str) -> IO:
    # fixed mtime keeps gzip output byte-identical across runs
    if path.endswith(".gz"):
        raw = gzip.GzipFile(path, "wb", mtime=0)
        return io.TextIOWrapper(raw, newline="")
    return open(path, "wt", newline="")


def write_task_events(events: Iterable[TaskEvent], path: str) -> None:
    with _open_for_write(path) as fh:
        writer = csv.writer(fh)
        for ev in events:
            writer.writerow(task_event_row(ev))


def read_usage(
    source: str | IO,
    codec: dict[str, int] = DEFAULT_USAGE_CODEC,
    diagnostics: Optional[list[Diagnostic]] = None,
) -> Iterator[UsageSample]:
    stream = open_maybe_gzip(source) if isinstance(source, str) else source
    try:
        for lineno, row in enumerate(csv.reader(stream), start=1):
            if not row:
                continue
            try:
                yield UsageSample(
                    window_start=int(row[codec["start_time"]]),
                    window_end=int(row[codec["end_time"]]),
                    key=TaskKey(int(row[codec["job_id"]]), int(row[codec["task_index"]])),
                    machine_id=int(row[codec["machine_id"]]),
                    cpu_usage=float(row[codec["cpu_usage"]]),
                    mem_usage=float(row[codec["mem_usage"]]),
                )
            except (ValueError, IndexError) as exc:
                if diagnostics is not None:
                    diagnostics.append(Diagnostic(lineno, str(exc)))
    finally:
        if isinstance(source, str):
            stream.close()


def write_usage(samples: Iterable[UsageSample], path: str) -> None:
    with _open_for_write(path) as fh:
        writer = csv.writer(fh)
        for s in samples:
            writer.writerow(
                [s.window_start, s.window_end, s.key.job_id, s.key.task_index,
                 s.machine_id, repr(s.cpu_usage), repr(s.mem_usage)]
            )


# Same-timestamp tie-break: submit before schedule before terminals, so that
# legal lifecycles stay legal after sorting same-microsecond pairs.
_KIND_RANK = {
    EventKind.SUBMIT: 0,
    EventKind.SCHEDULE: 1,
    EventKind.UPDATE_PENDING: 2,
    EventKind.UPDATE_RUNNING: 3,
    EventKind.EVICT: 4,
    EventKind.FAIL: 5,
    EventKind.FINISH: 6,
    EventKind.KILL: 7,
    EventKind.LOST: 8,
}


def sort_key(ev: TaskEvent) -> tuple:
    return (ev.time, ev.key, _KIND_RANK[ev.kind])


def sort_events(
    events: Iterable[TaskEvent], chunk_size: int = 2_000_000
) -> Iterator[TaskEvent]:
    """Deterministic time sort; spills sorted chunks to disk past chunk_size."""
    chunks: list[str] = []
    buf: list[TaskEvent] = []
    for ev in events:
        buf.append(ev)
        if len(buf) >= chunk_size:
            buf.sort(key=sort_key)
            fd, path = tempfile.mkstemp(suffix=".csv", prefix="clsort")
            os.close(fd)
            write_task_events(buf, path)
            chunks.append(path)
            buf = []
    buf.sort(key=sort_key)
    if not chunks:
        yield from buf
        return
    streams = [read_task_events(p) for p in chunks] + [iter(buf)]
    try:
        yield from heapq.merge(*streams, key=sort_key)
    finally:
        for p in chunks:
            os.unlink(p)


def group_by_key(
    events: Iterable[TaskEvent], max_keys_in_memory: int = 5_000_000, partitions: int = 16
) -> Iterator[tuple[TaskKey, list[TaskEvent]]]:
    """Group a time-sorted stream by task key, preserving per-key order.

    Groups are yielded in ascending key order.  When the key map outgrows the
    budget, events are hash-partitioned to temporary files and each partition
    is grouped separately (still globally key-ordered within a partition; the
    partition pass re-sorts keys so overall output order stays deterministic
    per partition, iterated in partition order).
    """
    table: dict[TaskKey, list[TaskEvent]] = {}
    spilled: list[TaskEvent] | None = None
    for ev in events:
        table.setdefault(ev.key, []).append(ev)
        if len(table) > max_keys_in_memory:
            spilled = [e for evs in table.values() for e in evs]
            table = {}
            break
    if spilled is None:
        for key in sorted(table):
            yield key, table[key]
        return

    # Spill path: partition everything (already-read plus the rest) by key hash.
    paths = []
    writers = []
    files = []
    for i in range(partitions):
        fd, path = tempfile.mkstemp(suffix=".csv", prefix=f"clpart{i}")
        os.close(fd)
        fh = open(path, "wt", newline="")
        paths.append(path)
        files.append(fh)
        writers.append(csv.writer(fh))

    def emit(ev: TaskEvent) -> None:
        writers[hash(ev.key) % partitions].writerow(task_event_row(ev))

    try:
        for ev in spilled:
            emit(ev)
        for ev in events:
            emit(ev)
        for fh in files:
            fh.close()
        for path in paths:
            part: dict[TaskKey, list[TaskEvent]] = {}
            with open(path, newline="") as fh:
                for row in csv.reader(fh):
                    ev = parse_task_event_row(row)
                    part.setdefault(ev.key, []).append(ev)
            for key in sorted(part):
                part[key].sort(key=sort_key)
                yield key, part[key]
    finally:
        for fh in files:
            if not fh.closed:
                fh.close()
        for path in paths:
            if os.path.exists(path):
                os.unlink(path)
