"""Run instrumentation and report aggregation.

The recorder collects raw per-transaction transition times during a run;
``aggregate`` folds them into a MetricsReport. Commit latency of a
transaction is measured from submission until the last correct node
committed it. Counters are integers or ratios of integers and latencies
are integer microseconds, so a replayed run serializes to byte-identical
CSV. (Wall-clock evaluation timing is tracked separately and never enters
the CSV.)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

from .model import TxStatus

CSV_COLUMNS = [
    "scenario", "seed", "sweep_param", "sweep_value",
    "submitted", "committed", "dropped", "nonterminal",
    "drop_rate", "commit_rate",
    "mean_commit_latency_ms", "median_commit_latency_ms",
    "p95_commit_latency_ms", "mean_applied_latency_ms",
    "throughput_commits_per_s",
    "rollbacks", "applications", "rollback_ratio",
    "checkpoints", "longest_condition_path",
    "max_applicability_eval_steps", "suspected_byzantine_events",
    "truncated",
]


class Recorder:
    """Collects raw events from one simulation run."""

    def __init__(self):
        self.submit_times: dict = {}        # tx_id -> time
        self.committed_times: dict = {}     # tx_id -> {node: time}
        self.dropped_times: dict = {}       # tx_id -> {node: time}
        self.applied_times: dict = {}       # tx_id -> {node: first applied}
        self.rollbacks = 0
        self.applications = 0
        self.suspected_count = 0
        self.max_eval_steps = 0
        self.decided_rounds: dict = {}      # proposal id -> decision
        self.condition_edges: dict = {}     # tx_id -> set of condition ids
        self.final_statuses: dict = {}      # node -> {tx_id: status}
        self.truncated = False

    def submit(self, tx, now):
        self.submit_times[tx.id] = now

    def status_change(self, node_id, tx_id, old, new, now):
        if new == TxStatus.COMMITTED:
            self.committed_times.setdefault(tx_id, {})[node_id] = now
        elif new == TxStatus.DROPPED:
            self.dropped_times.setdefault(tx_id, {})[node_id] = now
        elif new == TxStatus.APPLIED:
            self.applied_times.setdefault(tx_id, {}).setdefault(node_id, now)

    def application(self, node_id, tx_id, now):
        self.applications += 1
        self.applied_times.setdefault(tx_id, {}).setdefault(node_id, now)

    def rollback(self, node_id, tx_id, now):
        self.rollbacks += 1

    def suspected(self, node_id, source, reason, now):
        self.suspected_count += 1

    def decision(self, node_id, round_, now):
        self.decided_rounds.setdefault(round_.proposal.id, round_.decision)

    def eval_steps(self, steps):
        if steps > self.max_eval_steps:
            self.max_eval_steps = steps

    def finish(self, sim):
        self.truncated = sim.truncated
        for node_id in sorted(sim.correct_ids):
            node = sim.nodes[node_id]
            self.final_statuses[node_id] = dict(node.status)
            for tx_id in sorted(node.endorsements):
                edges = self.condition_edges.setdefault(tx_id, set())
                for e in node.endorsements[tx_id].values():
                    edges.update(e.conditions)


@dataclass(slots=True)
class MetricsReport:
    scenario: str
    seed: int
    sweep_param: str = ""
    sweep_value: str = ""
    submitted: int = 0
    committed: int = 0
    dropped: int = 0
    nonterminal: int = 0
    drop_rate: float = 0.0
    commit_rate: float = 0.0
    mean_commit_latency_us: int = 0
    median_commit_latency_us: int = 0
    p95_commit_latency_us: int = 0
    mean_applied_latency_us: int = 0
    throughput_commits_per_s: float = 0.0
    rollbacks: int = 0
    applications: int = 0
    rollback_ratio: float = 0.0
    checkpoints: int = 0
    longest_condition_path: int = 0
    max_applicability_eval_steps: int = 0
    suspected_byzantine_events: int = 0
    truncated: bool = False

    def csv_row(self) -> list:
        return [
            self.scenario, str(self.seed), self.sweep_param,
            self.sweep_value,
            str(self.submitted), str(self.committed), str(self.dropped),
            str(self.nonterminal),
            f"{self.drop_rate:.6f}", f"{self.commit_rate:.6f}",
            f"{self.mean_commit_latency_us / 1000:.3f}",
            f"{self.median_commit_latency_us / 1000:.3f}",
            f"{self.p95_commit_latency_us / 1000:.3f}",
            f"{self.mean_applied_latency_us / 1000:.3f}",
            f"{self.throughput_commits_per_s:.4f}",
            str(self.rollbacks), str(self.applications),
            f"{self.rollback_ratio:.6f}",
            str(self.checkpoints), str(self.longest_condition_path),
            str(self.max_applicability_eval_steps),
            str(self.suspected_byzantine_events),
            "1" if self.truncated else "0",
        ]


def _percentile_sorted(values: list, fraction: float) -> int:
    if not values:
        return 0
    index = max(0, int(-(-fraction * len(values) // 1)) - 1)  # ceil - 1
    return values[min(index, len(values) - 1)]


def longest_condition_path(edges: dict) -> int:
    """Longest chain in the transaction-level condition DAG (node count)."""
    memo: dict = {}

    def depth(tx_id):
        cached = memo.get(tx_id)
        if cached is not None:
            return cached
        memo[tx_id] = 1  # cycle guard; filters make cycles impossible
        best = 0
        for cond in edges.get(tx_id, ()):
            d = depth(cond)
            if d > best:
                best = d
        memo[tx_id] = 1 + best
        return memo[tx_id]

    best = 0
    for tx_id in sorted(edges):
        best = max(best, depth(tx_id))
    return best


def aggregate(recorder: Recorder, correct_ids, scenario_name: str,
              seed: int, allow_nonterminal: bool = False,
              sweep_param: str = "", sweep_value: str = "") -> MetricsReport:
    """Fold one run's raw records into a report.

    Raises if transactions are still in flight unless the run was
    explicitly horizon-truncated (``allow_nonterminal``).
    """
    endorser_correct = sorted(correct_ids)
    submitted = len(recorder.submit_times)
    committed_all: dict = {}
    for tx_id, times in recorder.committed_times.items():
        if all(node in times for node in endorser_correct):
            committed_all[tx_id] = max(times[node]
                                       for node in endorser_correct)
    dropped_all = {
        tx_id
        for tx_id, times in recorder.dropped_times.items()
        if all(node in times for node in endorser_correct)
    }
    committed = len(committed_all)
    dropped = len(dropped_all)
    nonterminal = submitted - committed - dropped
    if nonterminal and not (allow_nonterminal or recorder.truncated):
        raise ValueError(
            f"{nonterminal} transactions never reached a terminal state; "
            "pass allow_nonterminal for horizon-truncated runs")

    commit_latencies = sorted(
        committed_all[tx_id] - recorder.submit_times[tx_id]
        for tx_id in committed_all if tx_id in recorder.submit_times)
    applied_latencies = []
    for tx_id in committed_all:
        times = recorder.applied_times.get(tx_id)
        if times and tx_id in recorder.submit_times \
                and all(node in times for node in endorser_correct):
            applied_latencies.append(
                max(times[node] for node in endorser_correct)
                - recorder.submit_times[tx_id])

    terminal = committed + dropped
    drop_rate = dropped / terminal if terminal else 0.0
    commit_rate = committed / terminal if terminal else 0.0
    mean_commit = (sum(commit_latencies) // len(commit_latencies)
                   if commit_latencies else 0)
    median_commit = (commit_latencies[(len(commit_latencies) - 1) // 2]
                     if commit_latencies else 0)
    p95_commit = _percentile_sorted(commit_latencies, 0.95)
    mean_applied = (sum(applied_latencies) // len(applied_latencies)
                    if applied_latencies else 0)

    throughput = 0.0
    if committed_all and recorder.submit_times:
        first = min(recorder.submit_times.values())
        last = max(committed_all.values())
        if last > first:
            throughput = committed * 1_000_000 / (last - first)

    rollback_ratio = (recorder.rollbacks / recorder.applications
                      if recorder.applications else 0.0)

    return MetricsReport(
        scenario=scenario_name,
        seed=seed,
        sweep_param=sweep_param,
        sweep_value=sweep_value,
        submitted=submitted,
        committed=committed,
        dropped=dropped,
        nonterminal=nonterminal,
        drop_rate=drop_rate,
        commit_rate=commit_rate,
        mean_commit_latency_us=mean_commit,
        median_commit_latency_us=median_commit,
        p95_commit_latency_us=p95_commit,
        mean_applied_latency_us=mean_applied,
        throughput_commits_per_s=throughput,
        rollbacks=recorder.rollbacks,
        applications=recorder.applications,
        rollback_ratio=rollback_ratio,
        checkpoints=len(recorder.decided_rounds),
        longest_condition_path=longest_condition_path(
            recorder.condition_edges),
        max_applicability_eval_steps=recorder.max_eval_steps,
        suspected_byzantine_events=recorder.suspected_count,
        truncated=recorder.truncated,
    )


def write_csv(path, reports) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for report in reports:
            writer.writerow(report.csv_row())


def render_csv(reports) -> str:
    import io

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for report in reports:
        writer.writerow(report.csv_row())
    return buffer.getvalue()
