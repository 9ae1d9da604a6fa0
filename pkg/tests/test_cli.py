import csv
import json
from pathlib import Path

import pytest

from clusterlens.cli import main
from oracles import brute_force_simulate

SAMPLE = Path(__file__).parent.parent / "data" / "sample"


def run(args):
    return main([str(a) for a in args])


def test_synth_determinism(tmp_path):
    cfg = tmp_path / "synth.toml"
    cfg.write_text("task_count = 30\nduration_s = 600\nseed = 42\n")
    assert run(["synth", "--config", cfg, "--out", tmp_path / "a"]) == 0
    assert run(["synth", "--config", cfg, "--out", tmp_path / "b"]) == 0
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())["outputs"]
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())["outputs"]
    assert a == b


def test_aggregate_three_event_trace(tmp_path):
    events = tmp_path / "events.csv"
    rows = [
        "10,,1,0,,0,u,0,2,0.5,0.5,,",
        "20,,1,0,5,1,u,0,2,,,,",
        "30,,1,0,5,4,u,0,2,,,,",
    ]
    events.write_text("\n".join(rows) + "\n")
    out = tmp_path / "out"
    assert run(["aggregate", "--events", events, "--out", out]) == 0
    with open(out / "new_submissions_cdf.csv") as fh:
        data = list(csv.reader(fh))
    assert data[0] == ["x", "value"]
    assert data[1] == ["10", "1.0"]
    with open(out / "queue_series.csv") as fh:
        series = list(csv.reader(fh))[1:]
    assert [(r[0], r[1]) for r in series] == [("10", "1.0"), ("20", "0.0")]
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["totals"] == {
        "new_submissions": 1, "completions": 1, "submissions": 1, "schedules": 1
    }


def test_validate_flags_bad_rows_and_violations(tmp_path):
    events = tmp_path / "events.csv"
    rows = [
        "10,,1,0,,0,u,0,2,,,,",
        "20,,1,0,,0,u,0,2,,,,",  # submit-after-submit
        "bad,row",
    ]
    events.write_text("\n".join(rows) + "\n")
    out = tmp_path / "out"
    assert run(["validate", "--events", events, "--out", out]) == 0
    with open(out / "violations.csv") as fh:
        viol = list(csv.reader(fh))[1:]
    assert len(viol) == 1
    assert viol[0][4:6] == ["pending", "submit"]
    with open(out / "diagnostics.csv") as fh:
        diags = list(csv.reader(fh))[1:]
    assert len(diags) == 1


def test_lifecycle_outputs(tmp_path):
    out = tmp_path / "out"
    assert run(["lifecycle", "--events", SAMPLE / "task_events.csv.gz", "--out", out]) == 0
    with open(out / "spans.csv") as fh:
        spans = list(csv.reader(fh))
    assert spans[0][0] == "job_id"
    assert len(spans) > 400


def test_simulate_matches_golden(tmp_path):
    out = tmp_path / "out"
    assert run([
        "simulate",
        "--events", SAMPLE / "task_events.csv.gz",
        "--usage", SAMPLE / "task_usage.csv.gz",
        "--policy", SAMPLE / "margin.toml",
        "--machines", SAMPLE / "machines.csv",
        "--out", out,
    ]) == 0
    got = json.loads((out / "simreport.json").read_text())
    golden = json.loads((SAMPLE / "golden_simreport.json").read_text())
    assert got == golden


def test_golden_crosschecked_against_bruteforce():
    from clusterlens.ingest import read_task_events, read_usage, sort_events
    from clusterlens.reservation import (
        ChangeQuantileMargin,
        build_replay_table,
        requests_from_events,
        task_change_distribution,
    )

    events = list(sort_events(read_task_events(str(SAMPLE / "task_events.csv.gz"))))
    usage = list(read_usage(str(SAMPLE / "task_usage.csv.gz")))
    requests, priorities = requests_from_events(events)
    table = build_replay_table(usage, requests, priorities, period_s=60)
    dist = task_change_distribution(usage, period_s=60)
    policy = ChangeQuantileMargin(q=0.9, distribution=dist)
    violations, reclaimed, _ = brute_force_simulate(table, policy)
    golden = json.loads((SAMPLE / "golden_simreport.json").read_text())
    assert golden["violation_count"] == violations
    assert golden["reclaimed"] == pytest.approx(reclaimed, rel=1e-9)


def test_report_observations(tmp_path):
    out = tmp_path / "out"
    assert run(["report", "--events", SAMPLE / "task_events.csv.gz", "--out", out]) == 0
    report = json.loads((out / "observations.json").read_text())
    assert report["obs1"]["new_submission_r2"] > 0.99
    assert report["obs3"]["lump_count"] >= 1


def test_utilization_outputs(tmp_path):
    out = tmp_path / "out"
    assert run([
        "utilization",
        "--events", SAMPLE / "task_events.csv.gz",
        "--usage", SAMPLE / "task_usage.csv.gz",
        "--period-s", 300, "--out", out,
    ]) == 0
    q = json.loads((out / "change_quantiles.json").read_text())
    assert set(q) == {"cpu", "mem"}
    assert q["cpu"]["0.9"] <= q["cpu"]["0.99"]


def test_workers_do_not_change_artifacts(tmp_path):
    outs = {}
    for n in (1, 4):
        out = tmp_path / f"w{n}"
        assert run(["aggregate", "--events", SAMPLE / "task_events.csv.gz",
                    "--out", out, "--workers", n]) == 0
        outs[n] = json.loads((out / "manifest.json").read_text())["outputs"]
    assert outs[1] == outs[4]


def test_missing_input_exit_1(tmp_path):
    assert run(["aggregate", "--events", tmp_path / "nope.csv",
                "--out", tmp_path / "out"]) == 1


def test_bad_config_exit_2(tmp_path):
    cfg = tmp_path / "synth.toml"
    cfg.write_text("task_cnt = 10\n")
    assert run(["synth", "--config", cfg, "--out", tmp_path / "out"]) == 2


def test_unknown_subcommand_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_manifest_lists_every_artifact(tmp_path):
    out = tmp_path / "out"
    run(["lifecycle", "--events", SAMPLE / "task_events.csv.gz", "--out", out])
    manifest = json.loads((out / "manifest.json").read_text())
    files = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert set(manifest["outputs"]) == files
