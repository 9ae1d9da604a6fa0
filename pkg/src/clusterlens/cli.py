"""Command-line entry point wiring ingest -> lifecycle -> aggregates,
utilization and the reservation simulator into plot-ready CSV/JSON artifacts.

Every run writes a manifest.json recording effective parameters and output
digests; outputs are invariant to --workers.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .aggregate import (
    Cdf,
    Series,
    event_cdfs,
    exec_time_cdf,
    moving_average,
    observation_report,
    queue_series,
    running_series,
    weighted_cdfs,
)
from .config import load_kv, load_policy_config, load_synth_config
from .ingest import (
    Diagnostic,
    InputError,
    TraceBundle,
    group_by_key,
    read_task_events,
    read_usage,
    sort_events,
    write_task_events,
    write_usage,
)
from .lifecycle import (
    Lifecycle,
    build_lifecycle,
    write_spans_csv,
    write_violations_csv,
)
from .model import PriorityTier, TerminalClassification
from .reservation import (
    BorgDecay,
    ChangeQuantileMargin,
    PolicyError,
    RequestStatic,
    build_replay_table,
    compare_policies,
    requests_from_events,
    simulate,
    task_change_distribution,
)
from .synth import ConfigError, generate_synthetic
from .utilization import (
    InsufficientDataError,
    ResolutionError,
    change_distribution,
    util_series,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2


def _build_shard(shard: list, trace_end: Optional[int]) -> list[Lifecycle]:
    return [build_lifecycle(k, evs, trace_end) for k, evs in shard]


def load_lifecycles(
    events_path: str,
    workers: int = 1,
    diagnostics: Optional[list[Diagnostic]] = None,
) -> tuple[list[Lifecycle], Optional[int]]:
    events = list(sort_events(read_task_events(events_path, diagnostics=diagnostics)))
    trace_end = events[-1].time if events else None
    groups = list(group_by_key(iter(events)))
    if workers > 1 and len(groups) > workers:
        shards = [groups[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_build_shard, shards, [trace_end] * workers))
        lifecycles = [life for part in parts for life in part]
        lifecycles.sort(key=lambda l: l.key)
    else:
        lifecycles = [build_lifecycle(k, evs, trace_end) for k, evs in groups]
    return lifecycles, trace_end


def _params(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "subcommand")}


class Run:
    """One output directory plus its manifest."""

    def __init__(self, out_dir: str, subcommand: str, params: dict, inputs: list[str]):
        self.out_dir = out_dir
        self.manifest = {
            "tool": "clusterlens",
            "version": __version__,
            "subcommand": subcommand,
            "params": params,
            "inputs": inputs,
            "outputs": {},
        }
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def register(self, name: str) -> None:
        digest = hashlib.sha256()
        with open(self.path(name), "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                digest.update(chunk)
        self.manifest["outputs"][name] = digest.hexdigest()

    def write_json(self, name: str, payload) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.register(name)

    def write_curve(self, name: str, xs, ys, header: tuple[str, str]) -> None:
        with open(self.path(name), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for x, y in zip(xs, ys):
                writer.writerow([int(x) if float(x).is_integer() else repr(float(x)),
                                 repr(float(y))])
        self.register(name)

    def finish(self, summary: str) -> None:
        with open(self.path("manifest.json"), "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(summary)


def _write_cdf(run: Run, name: str, cdf: Cdf) -> None:
    run.write_curve(name, cdf.xs, cdf.fs, ("x", "value"))


def _write_series(run: Run, name: str, series: Series, densify_step_us: int = 0) -> None:
    times, values = series.times, series.values
    if densify_step_us and len(times):
        grid = np.arange(times[0], times[-1] + densify_step_us, densify_step_us)
        idx = np.searchsorted(times, grid, side="right") - 1
        values = np.where(idx >= 0, values[np.clip(idx, 0, None)], 0)
        times = grid
    run.write_curve(name, times, values, ("time", "value"))


def cmd_synth(args) -> int:
    cfg = load_synth_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    run = Run(args.out, "synth", {**_params(args), "seed": cfg.seed}, [args.config])
    bundle, truth = generate_synthetic(cfg)
    write_task_events(bundle.task_events, run.path("task_events.csv.gz"))
    run.register("task_events.csv.gz")
    write_usage(bundle.usage, run.path("task_usage.csv.gz"))
    run.register("task_usage.csv.gz")
    with open(run.path("machines.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["machine_id", "cpu_capacity", "mem_capacity"])
        for m in sorted(bundle.machines):
            cpu, mem = bundle.machines[m]
            writer.writerow([m, repr(cpu), repr(mem)])
    run.register("machines.csv")
    run.write_json(
        "meta.json",
        {
            "tasks": len(truth.tasks),
            "events": len(bundle.task_events),
            "usage_samples": len(bundle.usage),
            "completions": truth.completion_count,
            "capacity": list(bundle.capacity),
        },
    )
    run.finish(
        f"synth: {len(truth.tasks)} tasks, {len(bundle.task_events)} events -> {args.out}"
    )
    return EXIT_OK


def cmd_validate(args) -> int:
    diags: list[Diagnostic] = []
    lifecycles, _ = load_lifecycles(args.events, args.workers, diags)
    run = Run(args.out, "validate", _params(args), [args.events])
    sink = args.diagnostics or run.path("diagnostics.csv")
    with open(sink, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["line", "message"])
        for d in diags:
            writer.writerow([d.line, d.message])
    if sink == run.path("diagnostics.csv"):
        run.register("diagnostics.csv")
    else:
        for d in diags:
            print(f"line {d.line}: {d.message}", file=sys.stderr)
    with open(run.path("violations.csv"), "w", newline="") as fh:
        n_viol = write_violations_csv(lifecycles, fh)
    run.register("violations.csv")
    seeded = sum(life.snapshot_seeded for life in lifecycles)
    run.manifest["params"]["snapshot_seeded_tasks"] = seeded
    run.finish(
        f"validate: {len(lifecycles)} tasks, {n_viol} violations, "
        f"{len(diags)} parse diagnostics"
    )
    return EXIT_OK


def cmd_lifecycle(args) -> int:
    lifecycles, _ = load_lifecycles(args.events, args.workers)
    run = Run(args.out, "lifecycle", _params(args), [args.events])
    with open(run.path("spans.csv"), "w", newline="") as fh:
        n_spans = write_spans_csv(lifecycles, fh)
    run.register("spans.csv")
    with open(run.path("violations.csv"), "w", newline="") as fh:
        n_viol = write_violations_csv(lifecycles, fh)
    run.register("violations.csv")
    run.finish(f"lifecycle: {len(lifecycles)} tasks, {n_spans} spans, {n_viol} violations")
    return EXIT_OK


def _moving_averages(lifecycles: Sequence[Lifecycle], window_us: int) -> tuple[Series, Series]:
    exec_samples = []
    sched_samples = []
    for life in lifecycles:
        for s in life.spans:
            if s.execution_time is not None:
                exec_samples.append((s.end_time, s.execution_time))
            if s.scheduling_time is not None:
                sched_samples.append((s.schedule_time, s.scheduling_time))
    exec_samples.sort()
    sched_samples.sort()
    exec_ma = moving_average(
        [t for t, _ in exec_samples], [d for _, d in exec_samples], window_us
    )
    sched_ma = moving_average(
        [t for t, _ in sched_samples], [d for _, d in sched_samples], window_us
    )
    return exec_ma, sched_ma


def cmd_aggregate(args) -> int:
    lifecycles, _ = load_lifecycles(args.events, args.workers)
    run = Run(args.out, "aggregate", _params(args), [args.events])
    cdfs, totals = event_cdfs(lifecycles)
    weighted = weighted_cdfs(cdfs, totals) if totals.new_submissions else {}
    for name, cdf in cdfs.items():
        _write_cdf(run, f"{name}_cdf.csv", cdf)
    for name, cdf in weighted.items():
        _write_cdf(run, f"weighted_{name}_cdf.csv", cdf)
    dens = args.densify_step_s * 1_000_000
    _write_series(run, "queue_series.csv", queue_series(lifecycles), dens)
    _write_series(run, "running_series.csv", running_series(lifecycles), dens)
    window_us = args.window_s * 1_000_000
    exec_ma, sched_ma = _moving_averages(lifecycles, window_us)
    _write_series(run, "exec_time_ma.csv", exec_ma)
    _write_series(run, "sched_time_ma.csv", sched_ma)
    spans = [s for life in lifecycles for s in life.spans]
    _write_cdf(run, "exec_time_cdf.csv", exec_time_cdf(spans, finished_only=True))
    run.write_json(
        "metadata.json",
        {
            "totals": vars(totals),
            "weights": {
                k: cdfs[k].total / totals.new_submissions
                for k in ("completions", "submissions", "schedules")
            }
            if totals.new_submissions
            else {},
            "moving_average_window_s": args.window_s,
        },
    )
    run.finish(f"aggregate: totals {vars(totals)}")
    return EXIT_OK


def cmd_utilization(args) -> int:
    events = list(sort_events(read_task_events(args.events)))
    usage = list(read_usage(args.usage))
    run = Run(args.out, "utilization", _params(args), [args.events, args.usage])
    priority_of = {}
    for ev in events:
        priority_of.setdefault(ev.key, ev.priority)
    quantiles = {}
    for resource in ("cpu", "mem"):
        cluster = util_series(usage, resource=resource, period_s=args.period_s)
        _write_series(run, f"util_{resource}_cluster.csv",
                      Series(cluster.times, cluster.values))
        for tier in PriorityTier:
            ts = util_series(
                usage, resource=resource, period_s=args.period_s, scope="tier",
                tier=tier, priority_of=priority_of,
            )
            _write_series(run, f"util_{resource}_{tier.value}.csv",
                          Series(ts.times, ts.values))
        try:
            dist = change_distribution(
                usage, resource=resource, period_s=args.period_s,
                exclude_churn=args.exclude_churn, relative=not args.absolute_changes,
            )
        except InsufficientDataError:
            continue
        xs, fs = dist.cdf_points()
        run.write_curve(f"change_cdf_{resource}.csv", xs, fs, ("change", "value"))
        quantiles[resource] = {
            str(q): dist.quantile(q) for q in (0.5, 0.9, 0.95, 0.99)
        }
    run.write_json("change_quantiles.json", quantiles)
    run.finish(f"utilization: {len(usage)} samples at {args.period_s}s")
    return EXIT_OK


def _load_machines(path: Optional[str]) -> Optional[dict[int, float]]:
    if not path:
        return None
    caps = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            caps[int(row[0])] = float(row[1])
    return caps


def _build_policy(spec: dict, usage, period_s: int, resource: str):
    variant = spec["variant"]
    if variant == "request-static":
        return RequestStatic()
    if variant == "borg-decay":
        return BorgDecay(
            decay_rate=spec.get("decay_rate", 0.1),
            margin_fraction=spec.get("margin_fraction", 0.15),
        )
    dist = task_change_distribution(usage, resource=resource, period_s=period_s)
    if dist is None:
        raise InsufficientDataError("trace too short to measure a change distribution")
    return ChangeQuantileMargin(
        q=spec.get("q", 0.9),
        distribution=dist,
        floor_fraction=spec.get("floor_fraction", 0.0),
    )


def cmd_simulate(args) -> int:
    events = list(sort_events(read_task_events(args.events)))
    usage = list(read_usage(args.usage))
    spec = load_policy_config(args.policy)
    period_s = args.period_s or spec.get("sampling_period_s", 300)
    resource = args.resource
    run = Run(args.out, "simulate", _params(args), [args.events, args.usage, args.policy])
    requests, priorities = requests_from_events(events, resource)
    table = build_replay_table(usage, requests, priorities, period_s, resource)
    machines = _load_machines(args.machines)
    policy = _build_policy(spec, usage, period_s, resource)
    report = simulate(table, policy, machines, resource=resource)
    run.write_json("simreport.json", report.to_dict())
    # cluster reserved/used/requested series for plotting
    _write_reserved_series(run, table, policy)
    run.finish(
        f"simulate: {report.policy} reclaimed={report.reclaimed:.3f} "
        f"violations={report.violation_count} evictions={report.evictions_triggered}"
    )
    return EXIT_OK


def _write_reserved_series(run: Run, table, policy) -> None:
    from .reservation import _reserve_array

    n, n_periods = table.usage.shape
    last_usage = np.full(n, np.nan)
    prev_res = table.request.copy()
    rows = []
    for p in range(n_periods):
        u = table.usage[:, p]
        present = ~np.isnan(u)
        res = _reserve_array(policy, table.request, last_usage, prev_res)
        res = np.where(present, res, prev_res)
        rows.append(
            (
                p * table.period_s,
                float(np.where(present, res, 0.0).sum()),
                float(np.where(present, u, 0.0).sum()),
                float(table.request[present].sum()),
            )
        )
        last_usage = np.where(present, u, last_usage)
        prev_res = np.where(present, res, prev_res)
    with open(run.path("cluster_series.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "reserved", "used", "requested"])
        for row in rows:
            writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
    run.register("cluster_series.csv")


def cmd_report(args) -> int:
    lifecycles, _ = load_lifecycles(args.events, args.workers)
    run = Run(args.out, "report", _params(args), [args.events])
    cdfs, totals = event_cdfs(lifecycles)
    weighted = weighted_cdfs(cdfs, totals) if totals.new_submissions else cdfs
    queue = queue_series(lifecycles)
    running = running_series(lifecycles)
    exec_ma, sched_ma = _moving_averages(lifecycles, args.window_s * 1_000_000)
    spans = [s for life in lifecycles for s in life.spans]
    report = observation_report(
        cdfs, weighted, totals, queue, running, exec_ma, sched_ma, spans,
        distinct_tasks=len(lifecycles), lump_threshold=args.lump_threshold,
    )
    run.write_json("observations.json", report)
    run.finish(f"report: {len(lifecycles)} tasks, obs1 r2="
               f"{report['obs1']['new_submission_r2']:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clusterlens",
        description="Cluster-trace lifecycle analytics and reservation-policy simulation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, usage_input=False):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("synth", help="generate a synthetic trace bundle")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="parse diagnostics and transition violations")
    p.add_argument("--events", required=True)
    p.add_argument("--diagnostics", default=None)
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("lifecycle", help="spans and violations CSV")
    p.add_argument("--events", required=True)
    common(p)
    p.set_defaults(func=cmd_lifecycle)

    p = sub.add_parser("aggregate", help="event CDFs, queue/running series, moving averages")
    p.add_argument("--events", required=True)
    p.add_argument("--window-s", type=int, default=3600)
    p.add_argument("--densify-step-s", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("utilization", help="utilization series and change distribution")
    p.add_argument("--events", required=True)
    p.add_argument("--usage", required=True)
    p.add_argument("--period-s", type=int, default=300)
    p.add_argument("--exclude-churn", action="store_true")
    p.add_argument("--absolute-changes", action="store_true")
    common(p)
    p.set_defaults(func=cmd_utilization)

    p = sub.add_parser("simulate", help="trace-driven reservation-policy simulation")
    p.add_argument("--events", required=True)
    p.add_argument("--usage", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--machines", default=None)
    p.add_argument("--period-s", type=int, default=None)
    p.add_argument("--resource", choices=("cpu", "mem"), default="cpu")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="observation report JSON")
    p.add_argument("--events", required=True)
    p.add_argument("--window-s", type=int, default=3600)
    p.add_argument("--lump-threshold", type=float, default=0.02)
    common(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, InsufficientDataError, ResolutionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, PolicyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
