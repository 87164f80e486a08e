"""Command-line runner: run one scenario, sweep a parameter, or replay.

``run`` executes a scenario for each configured seed and writes metrics.csv
plus a manifest that pins (scenario, seed) for later replay. ``sweep``
varies one parameter across a list of values and writes one aggregated CSV
row per point. ``replay`` re-executes a previous run directory and fails
unless the regenerated CSV is byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .metrics import CSV_COLUMNS, MetricsReport, aggregate, render_csv
from .model import min_quorum
from .scenario import Scenario
from .sim import InvariantViolation, Simulation
from .workload import WorkloadConfig

SWEEP_PARAMS = ("hotspot", "clients", "n", "rate")


def run_one(scenario: Scenario, seed: int, check_invariants: bool = False,
            trace: bool = False, sweep_param: str = "",
            sweep_value: str = ""):
    sim = Simulation(scenario, seed, check_invariants=check_invariants,
                     trace=trace)
    sim.run()
    report = aggregate(sim.recorder, sim.correct_ids, scenario.name, seed,
                       allow_nonterminal=True, sweep_param=sweep_param,
                       sweep_value=sweep_value)
    return sim, report


def _write_trace(path, sim):
    with open(path, "w") as handle:
        for fire_at, kind, digest in sim.trace:
            handle.write(f"{fire_at}\t{kind}\t{digest}\n")


def _apply_sweep(scenario: Scenario, param: str, value: float) -> Scenario:
    updated = dataclasses.replace(scenario)
    workload = scenario.workload or WorkloadConfig()
    if param == "hotspot":
        updated.workload = dataclasses.replace(
            workload, hotspot_probability=float(value))
        updated.name = f"{scenario.name}-hotspot-{value}"
    elif param == "clients":
        updated.workload = dataclasses.replace(
            workload, num_clients=int(value))
        updated.name = f"{scenario.name}-clients-{int(value)}"
    elif param == "rate":
        updated.workload = dataclasses.replace(
            workload, rate_per_client=float(value))
        updated.name = f"{scenario.name}-rate-{value}"
    elif param == "n":
        n = int(value)
        f = (n - 1) // 3
        updated.n = n
        updated.f = f
        updated.omega = max((2 * n) // 3 + 1, min_quorum(n, f))
        updated.name = f"{scenario.name}-n-{n}"
    else:
        raise ValueError(f"unsupported sweep parameter {param!r}")
    return updated


def _pooled_report(reports, scenario_name, param, value) -> MetricsReport:
    """Aggregate a sweep point over its seeds (counts pooled, times averaged)."""
    total = MetricsReport(scenario=scenario_name, seed=0, sweep_param=param,
                          sweep_value=str(value))
    count = len(reports)
    for r in reports:
        total.submitted += r.submitted
        total.committed += r.committed
        total.dropped += r.dropped
        total.nonterminal += r.nonterminal
        total.rollbacks += r.rollbacks
        total.applications += r.applications
        total.checkpoints += r.checkpoints
        total.suspected_byzantine_events += r.suspected_byzantine_events
        total.mean_commit_latency_us += r.mean_commit_latency_us
        total.median_commit_latency_us += r.median_commit_latency_us
        total.p95_commit_latency_us += r.p95_commit_latency_us
        total.mean_applied_latency_us += r.mean_applied_latency_us
        total.throughput_commits_per_s += r.throughput_commits_per_s
        total.longest_condition_path = max(total.longest_condition_path,
                                           r.longest_condition_path)
        total.max_applicability_eval_steps = max(
            total.max_applicability_eval_steps,
            r.max_applicability_eval_steps)
        total.truncated = total.truncated or r.truncated
    terminal = total.committed + total.dropped
    total.drop_rate = total.dropped / terminal if terminal else 0.0
    total.commit_rate = total.committed / terminal if terminal else 0.0
    if count:
        total.mean_commit_latency_us //= count
        total.median_commit_latency_us //= count
        total.p95_commit_latency_us //= count
        total.mean_applied_latency_us //= count
        total.throughput_commits_per_s /= count
    total.rollback_ratio = (total.rollbacks / total.applications
                            if total.applications else 0.0)
    return total


def cmd_run(args) -> int:
    scenario = Scenario.load(args.scenario)
    seeds = [args.seed] if args.seed is not None else list(scenario.seeds)
    os.makedirs(args.out, exist_ok=True)
    reports = []
    for seed in seeds:
        try:
            sim, report = run_one(scenario, seed,
                                  check_invariants=args.check_invariants,
                                  trace=args.trace)
        except InvariantViolation as violation:
            trace_path = os.path.join(args.out, f"violation-{seed}.log")
            with open(trace_path, "w") as handle:
                for entry in violation.trace:
                    handle.write(f"{entry[0]}\t{entry[1]}\t{entry[2]}\n")
            print(f"invariant violation (seed {seed}): {violation}",
                  file=sys.stderr)
            print(f"event trace written to {trace_path}", file=sys.stderr)
            return 1
        reports.append(report)
        if args.trace:
            _write_trace(os.path.join(args.out, f"trace-{seed}.log"), sim)
    csv_path = os.path.join(args.out, "metrics.csv")
    with open(csv_path, "w") as handle:
        handle.write(render_csv(reports))
    manifest = {
        "scenario": json.loads(scenario.to_json()),
        "seeds": seeds,
        "check_invariants": bool(args.check_invariants),
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as handle:
        json.dump(manifest, handle, sort_keys=True, indent=2)
        handle.write("\n")
    print(f"wrote {csv_path} ({len(reports)} runs)")
    return 0


def cmd_sweep(args) -> int:
    scenario = Scenario.load(args.scenario)
    param, _, raw_values = args.sweep.partition("=")
    if param not in SWEEP_PARAMS or not raw_values:
        print(f"--sweep expects <param>=<v1,v2,...> with param in "
              f"{SWEEP_PARAMS}", file=sys.stderr)
        return 2
    values = [float(v) for v in raw_values.split(",") if v]
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for value in values:
        point = _apply_sweep(scenario, param, value)
        point_reports = []
        for seed in scenario.seeds:
            try:
                _, report = run_one(point, seed,
                                    check_invariants=args.check_invariants,
                                    sweep_param=param,
                                    sweep_value=str(value))
            except InvariantViolation as violation:
                print(f"invariant violation at {param}={value}, seed {seed}:"
                      f" {violation}", file=sys.stderr)
                return 1
            point_reports.append(report)
        rows.append(_pooled_report(point_reports, scenario.name, param,
                                   value))
    csv_path = os.path.join(args.out, "sweep.csv")
    with open(csv_path, "w") as handle:
        handle.write(render_csv(rows))
    print(f"wrote {csv_path} ({len(rows)} points x {len(scenario.seeds)} "
          f"seeds)")
    return 0


def cmd_replay(args) -> int:
    manifest_path = os.path.join(args.out, "manifest.json")
    csv_path = os.path.join(args.out, "metrics.csv")
    with open(manifest_path) as handle:
        manifest = json.load(handle)
    scenario = Scenario.from_json(json.dumps(manifest["scenario"]))
    reports = []
    for seed in manifest["seeds"]:
        _, report = run_one(scenario, seed,
                            check_invariants=manifest.get(
                                "check_invariants", False))
        reports.append(report)
    regenerated = render_csv(reports)
    with open(csv_path) as handle:
        original = handle.read()
    if regenerated != original:
        print("replay mismatch: regenerated CSV differs from original",
              file=sys.stderr)
        return 1
    print("replay ok: metrics.csv reproduced byte-identically")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quorumkv",
        description="Replicated-datastore protocol simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="execute one scenario")
    runp.add_argument("--scenario", required=True)
    runp.add_argument("--seed", type=int, default=None)
    runp.add_argument("--out", default="out")
    runp.add_argument("--trace", action="store_true")
    runp.add_argument("--check-invariants", action="store_true")
    runp.set_defaults(func=cmd_run)

    sweepp = sub.add_parser("sweep", help="vary one parameter")
    sweepp.add_argument("--scenario", required=True)
    sweepp.add_argument("--sweep", required=True,
                        help="<param>=<v1,v2,...>")
    sweepp.add_argument("--out", default="out")
    sweepp.add_argument("--check-invariants", action="store_true")
    sweepp.set_defaults(func=cmd_sweep)

    replayp = sub.add_parser("replay",
                             help="re-run a logged run and compare CSVs")
    replayp.add_argument("--out", default="out")
    replayp.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
