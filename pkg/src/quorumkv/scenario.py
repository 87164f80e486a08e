"""Scenario configuration: what one simulated deployment looks like.

A scenario can be built in code or loaded from a JSON file. It bundles the
protocol parameters, network model, adversary script, workload, and any
scripted submissions or crashes used by replayable tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .engine import (ApproveAll, ApproveProbability, EndorsementPolicy,
                     KNOWN_BEHAVIORS)
from .model import (SECOND, SystemConfig, Transaction, millis, min_quorum,
                    put, seconds)
from .workload import WorkloadConfig, generate_workload


@dataclass(frozen=True, slots=True)
class CrashPlan:
    node: int
    at: int
    down_for: int


@dataclass(slots=True)
class Scenario:
    name: str = "default"
    n: int = 10
    f: int = 3
    omega: Optional[int] = None
    seeds: tuple = (1,)
    mean_link_latency: int = 20_000            # 20 ms
    skew_range: int = 5 * SECOND
    tau_hat: int = 10 * SECOND
    old_delay: int = 2 * SECOND
    pool_window: int = 5 * SECOND
    speculative: bool = True
    observers: int = 0
    gossip_mode: str = "direct"
    gossip_fanout: int = 4
    stabilization_time: int = 0
    fixed_latency: Optional[int] = None
    recovery_quorum: Optional[int] = None
    horizon: Optional[int] = None

    workload: Optional[WorkloadConfig] = None
    scripted_transactions: list = field(default_factory=list)
    crashes: list = field(default_factory=list)
    node_skews: Optional[dict] = None          # node -> skew override
    node_policies: dict = field(default_factory=dict)

    adversary_count: int = 0
    adversary_nodes: Optional[tuple] = None
    adversary_behaviors: tuple = ()
    adversary_params: dict = field(default_factory=dict)
    adversary_flood_rate: float = 0.0
    adversary_flood_count: int = 0

    approval_probability: Optional[float] = None

    def __post_init__(self):
        for behavior in self.adversary_behaviors:
            if behavior not in KNOWN_BEHAVIORS:
                raise ValueError(f"unknown adversary behavior {behavior!r}")

    # -- derived pieces ----------------------------------------------------

    def system(self) -> SystemConfig:
        omega = self.omega if self.omega is not None \
            else min_quorum(self.n, self.f)
        return SystemConfig(
            n=self.n, f=self.f, omega=omega,
            old_delay=self.old_delay,
            checkpoint_pool_window=self.pool_window,
            speculative_default=self.speculative,
        )

    def adversary_ids(self) -> frozenset:
        if self.adversary_nodes is not None:
            ids = frozenset(self.adversary_nodes)
        else:
            ids = frozenset(range(self.adversary_count))
        if len(ids) > self.f:
            raise ValueError("adversary set larger than f")
        return ids

    def policy_for(self, node_id: int, seed: int) -> EndorsementPolicy:
        override = self.node_policies.get(node_id)
        if override is not None:
            return override
        if self.approval_probability is not None:
            node_seed = f"{seed}/policy/{node_id}".encode()
            return ApproveProbability(self.approval_probability, node_seed)
        return ApproveAll()

    def submissions(self, seed: int) -> list:
        items = []
        if self.workload is not None:
            items.extend(generate_workload(self.workload, seed))
        for entry in self.scripted_transactions:
            items.append((entry.submit_time, entry))
        items.extend(self._flood_submissions(seed))
        items.sort(key=lambda pair: (pair[0], pair[1].id))
        return items

    def _flood_submissions(self, seed: int) -> list:
        if self.adversary_flood_count <= 0 or self.adversary_flood_rate <= 0:
            return []
        import random as _random

        adversaries = sorted(self.adversary_ids())
        if not adversaries:
            return []
        rng = _random.Random(f"{seed}/flood")
        offset = self.workload.deadline_offset if self.workload \
            else 5 * SECOND
        out = []
        at = 0.0
        for i in range(self.adversary_flood_count):
            at += rng.expovariate(self.adversary_flood_rate) * SECOND
            submit = max(1, int(at))
            tx = Transaction(
                id=rng.getrandbits(128).to_bytes(16, "big"),
                deadline=submit + offset,
                preconditions=(),
                ops=(put("hot-0", rng.getrandbits(64).to_bytes(8, "big")),),
                submitter=adversaries[i % len(adversaries)],
                submit_time=submit,
            )
            out.append((submit, tx))
        return out

    def effective_horizon(self, seed: int) -> int:
        if self.horizon is not None:
            return self.horizon
        last_submit = 0
        deadline_offset = 5 * SECOND
        if self.workload is not None:
            last_submit = self.workload.duration
            deadline_offset = self.workload.deadline_offset
        for entry in self.scripted_transactions:
            last_submit = max(last_submit, entry.submit_time)
            deadline_offset = max(deadline_offset,
                                  entry.deadline - entry.submit_time)
        for crash in self.crashes:
            last_submit = max(last_submit, crash.at + crash.down_for)
        settle_margin = (self.old_delay + self.pool_window
                         + 4 * self.skew_range + 3 * self.tau_hat)
        return last_submit + deadline_offset + settle_margin + 5 * SECOND

    # -- JSON round-trip -----------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "name": self.name,
            "n": self.n,
            "f": self.f,
            "omega": self.omega,
            "seeds": list(self.seeds),
            "mean_link_latency_ms": self.mean_link_latency / 1000,
            "skew_range_s": self.skew_range / SECOND,
            "tau_hat_s": self.tau_hat / SECOND,
            "old_delay_s": self.old_delay / SECOND,
            "pool_window_s": self.pool_window / SECOND,
            "speculative": self.speculative,
            "observers": self.observers,
            "gossip": {"mode": self.gossip_mode,
                       "fanout": self.gossip_fanout},
            "stabilization_time_s": self.stabilization_time / SECOND,
            "recovery_quorum": self.recovery_quorum,
            "horizon_s": (self.horizon / SECOND
                          if self.horizon is not None else None),
            "approval_probability": self.approval_probability,
            "adversary": {
                "count": self.adversary_count,
                "nodes": (list(self.adversary_nodes)
                          if self.adversary_nodes is not None else None),
                "behaviors": list(self.adversary_behaviors),
                "delay_s": self.adversary_params.get("delay", 0) / SECOND,
                "flood_rate": self.adversary_flood_rate,
                "flood_count": self.adversary_flood_count,
            },
            "workload": None if self.workload is None else {
                "clients": self.workload.num_clients,
                "rate_per_client": self.workload.rate_per_client,
                "keyspace": self.workload.keyspace_size,
                "hotspot_probability": self.workload.hotspot_probability,
                "hotspot_keys": self.workload.hotspot_keys,
                "total_transactions": self.workload.total_transactions,
                "deadline_offset_s": (self.workload.deadline_offset
                                      / SECOND),
            },
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        raw = json.loads(text)
        gossip = raw.get("gossip", {})
        adversary = raw.get("adversary", {})
        wl = raw.get("workload")
        workload = None
        if wl is not None:
            workload = WorkloadConfig(
                num_clients=wl.get("clients", 10),
                rate_per_client=wl.get("rate_per_client", 2.0),
                keyspace_size=wl.get("keyspace", 100),
                hotspot_probability=wl.get("hotspot_probability", 0.0),
                hotspot_keys=wl.get("hotspot_keys", 1),
                total_transactions=wl.get("total_transactions", 1000),
                deadline_offset=seconds(wl.get("deadline_offset_s", 5.0)),
            )
        params = {}
        if adversary.get("delay_s"):
            params["delay"] = seconds(adversary["delay_s"])
        horizon = raw.get("horizon_s")
        return cls(
            name=raw.get("name", "scenario"),
            n=raw.get("n", 10),
            f=raw.get("f", 3),
            omega=raw.get("omega"),
            seeds=tuple(raw.get("seeds", [1])),
            mean_link_latency=millis(raw.get("mean_link_latency_ms", 20.0)),
            skew_range=seconds(raw.get("skew_range_s", 5.0)),
            tau_hat=seconds(raw.get("tau_hat_s", 10.0)),
            old_delay=seconds(raw.get("old_delay_s", 2.0)),
            pool_window=seconds(raw.get("pool_window_s", 5.0)),
            speculative=raw.get("speculative", True),
            observers=raw.get("observers", 0),
            gossip_mode=gossip.get("mode", "direct"),
            gossip_fanout=gossip.get("fanout", 4),
            stabilization_time=seconds(raw.get("stabilization_time_s", 0.0)),
            recovery_quorum=raw.get("recovery_quorum"),
            horizon=seconds(horizon) if horizon is not None else None,
            workload=workload,
            adversary_count=adversary.get("count", 0),
            adversary_nodes=(tuple(adversary["nodes"])
                             if adversary.get("nodes") is not None else None),
            adversary_behaviors=tuple(adversary.get("behaviors", ())),
            adversary_params=params,
            adversary_flood_rate=adversary.get("flood_rate", 0.0),
            adversary_flood_count=adversary.get("flood_count", 0),
            approval_probability=raw.get("approval_probability"),
        )

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as handle:
            return cls.from_json(handle.read())
