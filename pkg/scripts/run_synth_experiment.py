#!/usr/bin/env python3
"""End-to-end pipeline demo on a synthetic trace.

Generates a trace, validates it, builds the aggregate curves and the
observation report, and runs a reservation-policy comparison. All artifacts
land under --out (default: ./synth_experiment).
"""
import argparse
import json
from pathlib import Path

from clusterlens.cli import main as cli


def run(argv):
    code = cli([str(a) for a in argv])
    if code != 0:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=None,
                    help="synth config file (defaults to data/sample/synth.toml)")
    ap.add_argument("--policy", default=None,
                    help="policy config file (defaults to data/sample/margin.toml)")
    ap.add_argument("--out", default="synth_experiment")
    args = ap.parse_args()

    sample = Path(__file__).parent.parent / "data" / "sample"
    config = args.config or sample / "synth.toml"
    policy = args.policy or sample / "margin.toml"
    out = Path(args.out)

    run(["synth", "--config", config, "--out", out / "trace"])
    events = out / "trace" / "task_events.csv.gz"
    usage = out / "trace" / "task_usage.csv.gz"
    machines = out / "trace" / "machines.csv"

    run(["validate", "--events", events, "--out", out / "validate"])
    run(["aggregate", "--events", events, "--out", out / "aggregate"])
    run(["report", "--events", events, "--out", out / "report"])
    run(["utilization", "--events", events, "--usage", usage,
         "--out", out / "utilization"])
    run(["simulate", "--events", events, "--usage", usage, "--policy", policy,
         "--machines", machines, "--out", out / "simulate"])

    report = json.loads((out / "report" / "observations.json").read_text())
    sim = json.loads((out / "simulate" / "simreport.json").read_text())
    print("\n--- summary ---")
    print(f"new-submission linearity r2: {report['obs1']['new_submission_r2']:.6f}")
    print(f"resubmission lumps: {report['obs3']['lump_count']}")
    print(f"policy {sim['policy']}: reclaimed={sim['reclaimed']:.1f} "
          f"request-unit-seconds, violation_rate={sim['violation_rate']:.4f}")
    print(f"artifacts under {out}/")


if __name__ == "__main__":
    main()
