"""Deterministic discrete-event network simulator.

Events are processed in (fire time, insertion sequence) order, so a
(scenario, seed) pair fully determines the trace. The simulated network
implements the reliable-broadcast contract: every message broadcast by any
node is delivered exactly once to every node, including nodes that were
down at delivery time (their messages queue and flush on recovery). Link
latencies are exponential per recipient, clipped at a bound derived from
the synchrony estimator so that the checkpoint rounds' timing arguments
hold by construction.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
from dataclasses import dataclass
from typing import Optional

from .checkpoint import CheckpointProposal, SynchronyEstimator, VetoMessage
from .engine import (BEHAVIOR_FORGE_SNAPSHOT, Node, NodeConfig, NodeServices,
                     RejectAll)
from .metrics import Recorder
from .model import Endorsement, Transaction, TxStatus, is_terminal
from .store import KVStore

DELIVER = 0
TIMER = 1
SUBMIT = 2
CRASH = 3
RECOVER = 4
RESUME = 5

_KIND_NAMES = {DELIVER: "deliver", TIMER: "timer", SUBMIT: "submit",
               CRASH: "crash", RECOVER: "recover", RESUME: "resume"}


class InvariantViolation(AssertionError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True, slots=True)
class SnapshotRequest:
    requester: int
    nonce: int
    sent_time: int


@dataclass(frozen=True, slots=True)
class SnapshotResponse:
    responder: int
    requester: int
    nonce: int
    payload: bytes
    sent_time: int


class LatencyModel:
    """Per-recipient delivery delay: exponential, optionally multi-hop."""

    def __init__(self, mean: int, seed: str, cap: int, mode: str = "direct",
                 fanout: int = 4, n: int = 10, fixed: Optional[int] = None,
                 stabilization_time: int = 0):
        self.mean = mean
        self.cap = cap
        self.rng = random.Random(seed)
        self.fixed = fixed
        self.stabilization_time = stabilization_time
        if mode == "multihop":
            self.hops = max(1, math.ceil(math.log(max(n, 2), max(fanout, 2))))
        else:
            self.hops = 1

    def sample(self, now: int) -> int:
        if self.fixed is not None:
            return max(1, self.fixed)
        total = 0.0
        for _ in range(self.hops):
            total += self.rng.expovariate(1.0 / self.mean)
        value = max(1, int(total))
        if now >= self.stabilization_time:
            value = min(value, self.cap)
        return value


class _Services(NodeServices):
    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.estimator = sim.estimator

    def broadcast(self, sender, message):
        self.sim.broadcast(sender, message)

    def set_timer(self, node_id, fire_at, token):
        self.sim.schedule(max(fire_at, self.sim.now + 1), TIMER,
                          (node_id, token))

    def now(self):
        return self.sim.now

    def on_status_change(self, node_id, tx_id, old, new, now):
        self.sim.recorder.status_change(node_id, tx_id, old, new, now)
        if self.sim.checker is not None:
            self.sim.checker.status_change(node_id, tx_id, old, new, now)

    def on_applicability_change(self, node_id, tx_id, value, now):
        if self.sim.checker is not None:
            self.sim.checker.applicability_change(node_id, tx_id, value, now)

    def pre_rollback(self, node_id, tx):
        if self.sim.checker is not None:
            return self.sim.checker.pre_rollback(node_id, tx)
        return None

    def on_rollback(self, node_id, tx_id, guard, now):
        self.sim.recorder.rollback(node_id, tx_id, now)
        if self.sim.checker is not None:
            self.sim.checker.post_rollback(node_id, tx_id, guard)

    def on_application(self, node_id, tx_id, now):
        self.sim.recorder.application(node_id, tx_id, now)

    def on_suspected(self, node_id, source, reason, now):
        self.sim.recorder.suspected(node_id, source, reason, now)

    def on_decision(self, node_id, round_, now):
        self.sim.recorder.decision(node_id, round_, now)
        if self.sim.checker is not None:
            self.sim.checker.decision(node_id, round_, now)

    def on_eval_steps(self, steps):
        self.sim.recorder.eval_steps(steps)


class InvariantChecker:
    """Online safety checks evaluated as transitions happen.

    Any violation raises InvariantViolation with the recent event trace
    attached, so a failing seed is immediately reproducible.
    """

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.committed_at: dict = {}  # tx_id -> {node: time}
        self.dropped_at: dict = {}
        self.applicable: dict = {}    # node -> {tx_id: True}
        self.key_index: dict = {}     # node -> {key: {tx_id: commutative}}
        self.choices: dict = {}       # (pid, node) -> (choice, had_committed)
        self.decisions: dict = {}     # pid -> decision

    def _fail(self, message):
        raise InvariantViolation(message, self.sim.recent_events())

    def _is_correct(self, node_id):
        return node_id in self.sim.correct_ids

    def status_change(self, node_id, tx_id, old, new, now):
        if is_terminal(old):
            self._fail(f"node {node_id} left terminal state {old.name}")
        if not self._is_correct(node_id):
            return
        if new == TxStatus.COMMITTED:
            self.committed_at.setdefault(tx_id, {})[node_id] = now
            if tx_id in self.dropped_at:
                self._fail(
                    f"durability: {tx_id.hex()} committed at node {node_id} "
                    f"but dropped at {sorted(self.dropped_at[tx_id])}")
        elif new == TxStatus.DROPPED:
            self.dropped_at.setdefault(tx_id, {})[node_id] = now
            if tx_id in self.committed_at:
                self._fail(
                    f"durability: {tx_id.hex()} dropped at node {node_id} "
                    f"but committed at {sorted(self.committed_at[tx_id])}")

    def applicability_change(self, node_id, tx_id, value, now):
        if not self._is_correct(node_id):
            return
        node = self.sim.nodes[node_id]
        live = self.applicable.setdefault(node_id, {})
        index = self.key_index.setdefault(node_id, {})
        profile = node.profiles[tx_id]
        if not value:
            live.pop(tx_id, None)
            for key in profile:
                bucket = index.get(key)
                if bucket:
                    bucket.pop(tx_id, None)
            return
        # Local safety: two conflicting transactions must never race to a
        # quorum together. Once one of them has committed at some correct
        # node the other is its sequential successor on the key (endorsers
        # legitimately vote for it again), so such pairs are exempt.
        for key, commutative in profile.items():
            bucket = index.get(key)
            if bucket:
                for other, other_comm in bucket.items():
                    if other == tx_id or (commutative and other_comm):
                        continue
                    if (tx_id in self.committed_at
                            or other in self.committed_at):
                        continue
                    self._fail(
                        f"local safety: {tx_id.hex()} and {other.hex()} "
                        f"both applicable at node {node_id} (key {key})")
        live[tx_id] = True
        for key, commutative in profile.items():
            index.setdefault(key, {})[tx_id] = commutative

    def pre_rollback(self, node_id, tx):
        # Committed effects must survive every rollback: capture the
        # committed view of the touched keys before the store unwinds.
        node = self.sim.nodes[node_id]
        view = node.store.committed_view()
        return {key: view.get(key) for key in node.profiles[tx.id]}

    def post_rollback(self, node_id, tx_id, guard):
        node = self.sim.nodes[node_id]
        view = node.store.committed_view()
        for key, before in guard.items():
            after = view.get(key)
            same = (before is None and after is None) or (
                before is not None and after is not None
                and before[0] == after[0] and before[1] == after[1])
            if not same:
                self._fail(
                    f"rollback of {tx_id.hex()} at node {node_id} altered "
                    f"committed key {key!r}")

    def decision(self, node_id, round_, now):
        pid = round_.proposal.id
        if self._is_correct(node_id):
            node = self.sim.nodes[node_id]
            had_committed = any(node.store.is_committed(m)
                                for m in round_.proposal.members)
            self.choices[(pid, node_id)] = (round_.choice, had_committed)
            if now > round_.settle_at:
                self._fail(
                    f"termination: round {pid.hex()} decided late at node "
                    f"{node_id} ({now} > {round_.settle_at})")
            previous = self.decisions.get(pid)
            if previous is None:
                self.decisions[pid] = round_.decision
            elif previous != round_.decision:
                self._fail(
                    f"agreement: round {pid.hex()} decided {round_.decision} "
                    f"at node {node_id} but {previous} elsewhere")
            if round_.decision == 1:
                for member in sorted(round_.proposal.members):
                    holders = self.committed_at.get(member)
                    if holders:
                        self._fail(
                            f"validity: drop decision pruned {member.hex()} "
                            f"already committed at {sorted(holders)}")

    def end_of_run(self, quiesced: bool):
        if not quiesced:
            return
        snapshots = {}
        committed_sets = {}
        for node_id in sorted(self.sim.correct_ids):
            node = self.sim.nodes[node_id]
            snapshots[node_id] = node.store.snapshot()
            committed_sets[node_id] = frozenset(node.store.committed)
        values = list(committed_sets.values())
        if values and any(v != values[0] for v in values):
            self._fail("eventual consistency: committed sets diverge")
        blobs = list(snapshots.values())
        if blobs and any(b != blobs[0] for b in blobs):
            self._fail("eventual consistency: committed snapshots diverge")


class Simulation:
    """One deterministic run of a scenario under a single seed."""

    def __init__(self, scenario, seed: int, check_invariants: bool = False,
                 trace: bool = False):
        self.scenario = scenario
        self.seed = seed
        self.now = 0
        self._seq = 0
        self.queue: list = []
        self.trace_enabled = trace
        self.trace: list = []
        self._recent: list = []

        system = scenario.system()
        self.system = system
        self.estimator = SynchronyEstimator(
            broadcast_bound=scenario.tau_hat,
            skew_envelope=scenario.skew_range)
        self.recorder = Recorder()
        self.checker = InvariantChecker(self) if check_invariants else None

        self.latency = LatencyModel(
            mean=scenario.mean_link_latency,
            seed=f"{seed}/latency",
            cap=self.estimator.latency_cap,
            mode=scenario.gossip_mode,
            fanout=scenario.gossip_fanout,
            n=system.n,
            fixed=scenario.fixed_latency,
            stabilization_time=scenario.stabilization_time,
        )
        skew_rng = random.Random(f"{seed}/skew")
        adversary_ids = scenario.adversary_ids()
        behaviors = frozenset(scenario.adversary_behaviors)

        self.nodes: dict = {}
        self.services = _Services(self)
        total_nodes = system.n + scenario.observers
        for node_id in range(total_nodes):
            is_endorser = node_id < system.n
            if scenario.node_skews is not None:
                skew = scenario.node_skews.get(node_id, 0)
            elif scenario.skew_range > 0:
                skew = skew_rng.randint(-scenario.skew_range,
                                        scenario.skew_range)
            else:
                skew = 0
            policy = scenario.policy_for(node_id, seed)
            if not is_endorser:
                policy = RejectAll()
            node_behaviors = behaviors if node_id in adversary_ids \
                else frozenset()
            config = NodeConfig(
                node_id=node_id,
                is_endorser=is_endorser,
                speculative=scenario.speculative,
                policy=policy,
                clock_skew=skew,
                behaviors=node_behaviors,
                behavior_params=dict(scenario.adversary_params),
            )
            self.nodes[node_id] = Node(config, system, self.services)
        self.adversary_ids = adversary_ids
        self.correct_ids = frozenset(
            i for i in range(total_nodes) if i not in adversary_ids)
        self.down: set = set()
        self.queued_for_down: dict = {i: [] for i in self.nodes}
        self.recovery_quorum = scenario.recovery_quorum or (system.f + 1)
        self._sync_state: dict = {}
        self._delivered_guard: set = set() if check_invariants else None

        for submission in scenario.submissions(seed):
            self.schedule(submission[0], SUBMIT, submission[1])
        for crash in scenario.crashes:
            self.schedule(crash.at, CRASH, (crash.node, crash.down_for))
        self.horizon = scenario.effective_horizon(seed)
        self.truncated = False

    # -- scheduling ------------------------------------------------------

    def schedule(self, fire_at: int, kind: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self.queue, (fire_at, self._seq, kind, payload))

    def broadcast(self, sender: int, message) -> None:
        for node_id in self.nodes:
            delay = self.latency.sample(self.now)
            self.deliver_to(node_id, message, self.now + delay)

    def deliver_to(self, node_id: int, message, fire_at: int) -> None:
        self.schedule(fire_at, DELIVER, (node_id, message))

    # -- event dispatch ---------------------------------------------------

    def _record_event(self, fire_at, kind, payload):
        entry = (fire_at, _KIND_NAMES[kind], _digest(payload))
        self._recent.append(entry)
        if len(self._recent) > 200:
            del self._recent[:100]
        if self.trace_enabled:
            self.trace.append(entry)

    def recent_events(self):
        return list(self._recent)

    def step(self) -> bool:
        if not self.queue:
            return False
        fire_at, _, kind, payload = heapq.heappop(self.queue)
        if fire_at > self.horizon:
            self.truncated = True
            self.queue.clear()
            return False
        self.now = fire_at
        self._record_event(fire_at, kind, payload)
        if kind == DELIVER:
            node_id, message = payload
            self._dispatch_delivery(node_id, message)
        elif kind == TIMER:
            node_id, token = payload
            node = self.nodes[node_id]
            if not node.down:
                node.handle_timer(token, self.now)
        elif kind == SUBMIT:
            self.recorder.submit(payload, self.now)
            self.broadcast(payload.submitter, payload)
        elif kind == CRASH:
            node_id, down_for = payload
            self._crash(node_id, down_for)
        elif kind == RECOVER:
            self._start_recovery(payload)
        elif kind == RESUME:
            node = self.nodes[payload]
            if not node.down:
                node.resume(self.now)
        return True

    def _dispatch_delivery(self, node_id: int, message) -> None:
        node = self.nodes[node_id]
        if node.down:
            self.queued_for_down[node_id].append(message)
            return
        if self._delivered_guard is not None:
            key = (node_id, id(message))
            if key in self._delivered_guard:
                raise InvariantViolation(
                    f"message delivered twice to node {node_id}",
                    self.recent_events())
            self._delivered_guard.add(key)
        if isinstance(message, Endorsement):
            node.handle_endorsement(message, self.now)
        elif isinstance(message, Transaction):
            node.handle_transaction(message, self.now)
        elif isinstance(message, CheckpointProposal):
            node.handle_checkpoint(message, self.now)
        elif isinstance(message, VetoMessage):
            node.handle_veto(message, self.now)
        elif isinstance(message, SnapshotRequest):
            self._answer_snapshot_request(node_id, message)
        elif isinstance(message, SnapshotResponse):
            self._collect_snapshot(node_id, message)
        else:
            raise TypeError(f"unknown message type {type(message)!r}")

    # -- crash / recovery ----------------------------------------------------

    def _crash(self, node_id: int, down_for: int) -> None:
        node = self.nodes[node_id]
        if node.down:
            return
        node.down = True
        self.schedule(self.now + down_for, RECOVER, node_id)

    def _start_recovery(self, node_id: int) -> None:
        node = self.nodes[node_id]
        if not node.down:
            return  # already recovered on an earlier attempt
        node.syncing = True
        nonce = self._seq
        self._sync_state[node_id] = {"nonce": nonce, "responses": {}}
        for peer in self.nodes:
            if peer == node_id:
                continue
            delay = self.latency.sample(self.now)
            self.deliver_to(peer, SnapshotRequest(node_id, nonce, self.now),
                            self.now + delay)
        # Re-request until an identical quorum of snapshots shows up.
        self.schedule(self.now + 2 * self.estimator.broadcast_bound,
                      RECOVER, node_id)

    def _answer_snapshot_request(self, node_id: int,
                                 request: SnapshotRequest) -> None:
        node = self.nodes[node_id]
        payload = node.store.snapshot()
        if BEHAVIOR_FORGE_SNAPSHOT in node.config.behaviors:
            payload = hashlib.sha256(payload + b"forged").digest()
        delay = self.latency.sample(self.now)
        self.deliver_to(request.requester,
                        SnapshotResponse(node_id, request.requester,
                                         request.nonce, payload, self.now),
                        self.now + delay)

    def _collect_snapshot(self, node_id: int,
                          response: SnapshotResponse) -> None:
        state = self._sync_state.get(node_id)
        if state is None or state["nonce"] != response.nonce:
            return
        node = self.nodes[node_id]
        if not node.syncing:
            return
        state["responses"][response.responder] = response.payload
        counts: dict = {}
        for payload in state["responses"].values():
            counts[payload] = counts.get(payload, 0) + 1
        winner = None
        for payload, count in counts.items():
            if count >= self.recovery_quorum:
                winner = payload
                break
        if winner is None:
            return  # keep collecting; the RECOVER retry timer re-requests
        try:
            adopted = KVStore.restore(winner)
        except Exception:
            return
        del self._sync_state[node_id]
        node.adopt_snapshot(adopted, self.now)
        node.down = False
        node.syncing = False
        # Flush everything missed while down, then re-arm timers once the
        # last flushed message has been processed.
        resume_at = self.now + 1
        pending = self.queued_for_down[node_id]
        self.queued_for_down[node_id] = []
        for message in pending:
            delay = self.latency.sample(self.now)
            fire = self.now + delay
            resume_at = max(resume_at, fire + 1)
            self.deliver_to(node_id, message, fire)
        self.schedule(resume_at, RESUME, node_id)

    # -- run loop ----------------------------------------------------------------

    def run(self):
        while self.step():
            pass
        quiesced = not self.truncated
        self.recorder.finish(self)
        if self.checker is not None:
            self.checker.end_of_run(quiesced)
        return self


def _digest(payload) -> str:
    return hashlib.sha256(repr(payload).encode()).hexdigest()[:12]
