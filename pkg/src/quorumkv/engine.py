"""Per-node protocol logic.

Each node is a single-threaded state machine driven by delivered messages
and timers. The original blocking endorse loop is rendered event-driven:
when endorsement must wait for a conflicting deadline to pass, the node
arms a retry timer instead of spinning.

Applicability is the mutually recursive quorum predicate: a transaction is
applicable when at least omega of its endorsements are valid, and an
endorsement is valid while none of its condition transactions is
applicable. Condition edges always point at strictly earlier deadlines, so
evaluation in ascending deadline order is loop-free; the node keeps a
per-transaction cache and re-evaluates only the transactions whose answer
can actually change after an event.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

from .checkpoint import (CheckpointPool, CheckpointProposal, VetoMessage,
                         VetoRound, proposal_id)
from .model import (Endorsement, SystemConfig, Transaction, TxStatus,
                    filter_endorsement, is_terminal, profiles_conflict,
                    transition_allowed, write_profile)
from .store import KVStore

ABORT_TIMEOUT = "timeout"
ABORT_CONSISTENCY = "consistency"
ABORT_POLICY = "policy"

# Adversary behaviors a scripted faulty node may exhibit.
BEHAVIOR_SILENT = "silent"
BEHAVIOR_DELAY = "delay_endorsements"
BEHAVIOR_EQUIVOCATE = "equivocate"
BEHAVIOR_FLOOD = "flood_conflicts"
BEHAVIOR_LATE_CONDITION = "late_condition_violation"
BEHAVIOR_POST_DEADLINE = "post_deadline_endorse"
BEHAVIOR_FORGE_SNAPSHOT = "forge_snapshot"

KNOWN_BEHAVIORS = (
    BEHAVIOR_SILENT, BEHAVIOR_DELAY, BEHAVIOR_EQUIVOCATE, BEHAVIOR_FLOOD,
    BEHAVIOR_LATE_CONDITION, BEHAVIOR_POST_DEADLINE, BEHAVIOR_FORGE_SNAPSHOT,
)


class EndorsementPolicy:
    """Application-level vote: approve or reject a previewed transaction."""

    def decide(self, tx: Transaction, preview: dict) -> bool:
        raise NotImplementedError

    def describe(self) -> str:
        return type(self).__name__


class ApproveAll(EndorsementPolicy):
    def decide(self, tx, preview):
        return True


class RejectAll(EndorsementPolicy):
    """Observer-style policy: replicate state but never vote."""

    def decide(self, tx, preview):
        return False


class DenyKeys(EndorsementPolicy):
    def __init__(self, keys):
        self.keys = frozenset(keys)

    def decide(self, tx, preview):
        return not any(op.key in self.keys for op in tx.ops)


class RejectIds(EndorsementPolicy):
    """Scripted per-transaction rejection, for scenario tests."""

    def __init__(self, tx_ids):
        self.tx_ids = frozenset(tx_ids)

    def decide(self, tx, preview):
        return tx.id not in self.tx_ids


class ApproveProbability(EndorsementPolicy):
    """Approves a seeded pseudo-random fraction of transactions.

    The draw depends only on (node seed, transaction id) so replays make
    identical decisions.
    """

    def __init__(self, probability: float, node_seed: bytes):
        if not 0.0 <= probability <= 1.0:
            raise ValueError("probability must be in [0, 1]")
        self.probability = probability
        self.node_seed = node_seed

    def decide(self, tx, preview):
        digest = hashlib.sha256(self.node_seed + tx.id).digest()
        draw = int.from_bytes(digest[:8], "big") / float(1 << 64)
        return draw < self.probability


@dataclass(slots=True)
class NodeConfig:
    node_id: int
    is_endorser: bool = True
    speculative: bool = True
    policy: EndorsementPolicy = field(default_factory=ApproveAll)
    clock_skew: int = 0
    behaviors: frozenset = frozenset()
    behavior_params: dict = field(default_factory=dict)


class NodeServices:
    """Hooks a node uses to reach the outside world (wired by the harness)."""

    estimator = None  # SynchronyEstimator, set by the harness

    def broadcast(self, sender: int, message) -> None:
        raise NotImplementedError

    def set_timer(self, node_id: int, fire_at: int, token) -> None:
        raise NotImplementedError

    def now(self) -> int:
        raise NotImplementedError

    # Observation hooks; default to no-ops so the engine is usable bare.
    def on_status_change(self, node_id, tx_id, old, new, now):
        pass

    def on_applicability_change(self, node_id, tx_id, value, now):
        pass

    def pre_rollback(self, node_id, tx):
        return None

    def on_rollback(self, node_id, tx_id, guard, now):
        pass

    def on_application(self, node_id, tx_id, now):
        pass

    def on_suspected(self, node_id, source, reason, now):
        pass

    def on_decision(self, node_id, round_, now):
        pass

    def on_eval_steps(self, steps: int):
        pass


class Node:
    """One endorser or observer, driven by delivered events."""

    def __init__(self, config: NodeConfig, system: SystemConfig,
                 services: NodeServices):
        self.config = config
        self.system = system
        self.services = services
        self.node_id = config.node_id
        self.down = False

        self.store = KVStore()
        self.known: dict = {}            # tx_id -> Transaction
        self.status: dict = {}           # tx_id -> TxStatus
        self.endorsed: dict = {}         # tx_ids this node voted for (set-like)
        self.endorsements: dict = {}     # tx_id -> {endorser -> Endorsement}
        self.uncond: dict = {}           # tx_id -> count of unconditional votes
        self.profiles: dict = {}         # tx_id -> write profile
        self.rev: dict = {}              # tx_id -> {ids endorsed under that condition}
        self.applicable_cache: dict = {} # tx_id -> bool

        self.buffered: dict = {}         # missing tx_id -> [(endorsement, receipt)]
        self.buffered_since: dict = {}   # endorsement key -> receipt time
        self.pending_proposals: dict = {}  # missing tx_id -> [(proposal, receipt)]

        self.pool = CheckpointPool(system.checkpoint_pool_window)
        self.rounds: dict = {}           # proposal id -> VetoRound
        self.covered: dict = {}          # member id -> in-flight proposal id
        self.retry_at: dict = {}         # tx_id -> armed retry time
        self.syncing = False

    # -- small helpers ---------------------------------------------------

    def local_now(self) -> int:
        return self.services.now() + self.config.clock_skew

    def to_global(self, local_time: int) -> int:
        return local_time - self.config.clock_skew

    def has(self, behavior: str) -> bool:
        return behavior in self.config.behaviors

    def get_status(self, tx_id: bytes) -> TxStatus:
        return self.status.get(tx_id, TxStatus.PENDING)

    def set_status(self, tx_id: bytes, new: TxStatus, now: int) -> None:
        old = self.status.get(tx_id, TxStatus.PENDING)
        if old == new:
            return
        if not transition_allowed(old, new):
            raise AssertionError(
                f"illegal status transition {old.name} -> {new.name} "
                f"for {tx_id.hex()} at node {self.node_id}")
        self.status[tx_id] = new
        self.services.on_status_change(self.node_id, tx_id, old, new, now)

    def force_status(self, tx_id: bytes, new: TxStatus, now: int) -> None:
        # State-transfer shortcut: snapshot adoption may move a transaction
        # straight into COMMITTED without walking the message automaton.
        old = self.status.get(tx_id, TxStatus.PENDING)
        if old == new:
            return
        if is_terminal(old):
            raise AssertionError("cannot leave a terminal status")
        self.status[tx_id] = new
        self.services.on_status_change(self.node_id, tx_id, old, new, now)

    def send_bound(self, tx: Transaction) -> int:
        # Latest instant a correct endorser could have sent a vote for tx:
        # its local clock is within the skew envelope of the reference.
        return tx.deadline + self._estimator_skew()

    def _estimator_skew(self) -> int:
        return self.services.estimator.skew_envelope

    # -- transaction arrival ----------------------------------------------

    def handle_transaction(self, tx: Transaction, now: int) -> None:
        if tx.id in self.known:
            return
        self.known[tx.id] = tx
        self.profiles[tx.id] = write_profile(tx.ops)
        self.status.setdefault(tx.id, TxStatus.PENDING)
        self.applicable_cache.setdefault(tx.id, False)
        if self.store.is_committed(tx.id):
            # Value arrived after a snapshot resync already committed it.
            self.force_status(tx.id, TxStatus.COMMITTED, now)
        # Staleness check once the deadline is comfortably past.
        stale_at = self.to_global(tx.deadline + self.system.old_delay) + 1
        self.services.set_timer(self.node_id, max(stale_at, now + 1),
                                ("stale", tx.id))
        if self.config.is_endorser and not is_terminal(self.get_status(tx.id)):
            self.try_endorse(tx.id, now)
        self._admit_buffered(tx.id, now)
        self._admit_pending_proposals(tx.id, now)

    def try_endorse(self, tx_id: bytes, now: int) -> None:
        self.retry_at.pop(tx_id, None)
        if tx_id in self.endorsed or is_terminal(self.get_status(tx_id)):
            return
        tx = self.known[tx_id]
        if self.has(BEHAVIOR_SILENT):
            return
        if self.has(BEHAVIOR_POST_DEADLINE):
            # Vote long after the deadline; correct nodes must discard it.
            late = self.to_global(tx.deadline) + 2 * self._estimator_skew()
            self.services.set_timer(self.node_id, max(late, now + 1),
                                    ("byz_late", tx_id))
            return
        verdict = self.can_endorse(tx)
        if verdict is not None:
            return
        profile = self.profiles[tx_id]
        conflicting = [
            c for c in self.endorsed
            if profiles_conflict(self.profiles[c], profile)
        ]
        local = self.local_now()
        if not conflicting:
            self._endorse(tx, frozenset(), now)
            return
        live = [c for c in conflicting if self.known[c].deadline > local]
        if not live:
            self._endorse(tx, frozenset(conflicting), now)
            return
        # Wait for the earliest live conflicting deadline, then re-check.
        wake_local = min(self.known[c].deadline for c in live)
        fire = max(self.to_global(wake_local), now + 1)
        if self.retry_at.get(tx_id) != fire:
            self.retry_at[tx_id] = fire
            self.services.set_timer(self.node_id, fire, ("retry", tx_id))

    def can_endorse(self, tx: Transaction) -> Optional[str]:
        if tx.deadline <= self.local_now():
            return ABORT_TIMEOUT
        if not self.store.check_preconditions(tx):
            return ABORT_CONSISTENCY
        if not self.config.policy.decide(tx, self.store.preview(tx)):
            return ABORT_POLICY
        return None

    def _endorse(self, tx: Transaction, conditions: frozenset,
                 now: int) -> None:
        self.endorsed[tx.id] = True
        if self.has(BEHAVIOR_LATE_CONDITION):
            bogus = self._pick_later_deadline_tx(tx)
            if bogus is not None:
                conditions = conditions | {bogus}
        message = Endorsement(tx.id, self.node_id, conditions, now)
        if self.has(BEHAVIOR_DELAY):
            delay = self.config.behavior_params.get("delay", 0)
            self.services.set_timer(self.node_id, now + delay,
                                    ("byz_send", message))
        else:
            self.services.broadcast(self.node_id, message)
        if self.has(BEHAVIOR_EQUIVOCATE):
            twin_conditions = frozenset()
            if not conditions:
                earlier = [i for i, t in self.known.items()
                           if t.deadline < tx.deadline]
                if not earlier:
                    return
                twin_conditions = frozenset({min(earlier)})
            twin = Endorsement(tx.id, self.node_id, twin_conditions, now)
            self.services.broadcast(self.node_id, twin)

    def _pick_later_deadline_tx(self, tx: Transaction) -> Optional[bytes]:
        candidates = [
            i for i, t in self.known.items()
            if t.deadline >= tx.deadline and i != tx.id
        ]
        if not candidates:
            return None
        return min(candidates)

    # -- endorsement arrival ----------------------------------------------

    def handle_endorsement(self, e: Endorsement, now: int) -> None:
        target = self.known.get(e.tx_id)
        missing = None
        if target is None:
            missing = e.tx_id
        else:
            for cond in e.conditions:
                if cond not in self.known:
                    missing = cond
                    break
        if missing is not None:
            self.buffered.setdefault(missing, []).append(e)
            key = (e.tx_id, e.endorser, e.canonical_key())
            self.buffered_since.setdefault(key, now)
            self.services.set_timer(
                self.node_id,
                now + 2 * self.services.estimator.broadcast_bound,
                ("buffer_check", key))
            return
        self._admit_endorsement(e, now)

    def _admit_endorsement(self, e: Endorsement, now: int) -> None:
        target = self.known[e.tx_id]
        reason = filter_endorsement(e, self.known)
        if reason is not None:
            self.services.on_suspected(self.node_id, e.endorser, reason, now)
            return
        if e.sent_time > self.send_bound(target):
            self.services.on_suspected(self.node_id, e.endorser,
                                       "post-deadline-endorsement", now)
            return
        status = self.get_status(e.tx_id)
        if status == TxStatus.DROPPED:
            return
        votes = self.endorsements.setdefault(e.tx_id, {})
        held = votes.get(e.endorser)
        if held is not None:
            if held.conditions == e.conditions:
                return
            # Equivocation: keep the canonical payload so every correct
            # replica converges on the same vote.
            self.services.on_suspected(self.node_id, e.endorser,
                                       "equivocation", now)
            if e.canonical_key() >= held.canonical_key():
                return
            self._unindex(held)
            votes[e.endorser] = e
            self._index(e)
        else:
            votes[e.endorser] = e
            self._index(e)
        self.check_state_all({e.tx_id}, now)

    def _index(self, e: Endorsement) -> None:
        if not e.conditions:
            self.uncond[e.tx_id] = self.uncond.get(e.tx_id, 0) + 1
        for cond in e.conditions:
            self.rev.setdefault(cond, {})[e.tx_id] = True

    def _unindex(self, e: Endorsement) -> None:
        if not e.conditions:
            self.uncond[e.tx_id] = self.uncond.get(e.tx_id, 1) - 1
        for cond in e.conditions:
            deps = self.rev.get(cond)
            if deps is not None:
                deps.pop(e.tx_id, None)

    def _admit_buffered(self, tx_id: bytes, now: int) -> None:
        queue = self.buffered.pop(tx_id, None)
        if not queue:
            return
        for e in queue:
            key = (e.tx_id, e.endorser, e.canonical_key())
            self.buffered_since.pop(key, None)
            self.handle_endorsement(e, now)

    # -- applicability -----------------------------------------------------

    def applicable(self, tx_id: bytes) -> bool:
        return self.applicable_cache.get(tx_id, False)

    def endorsement_valid(self, e: Endorsement) -> bool:
        return all(not self.applicable_cache.get(c, False)
                   for c in e.conditions)

    def evaluate_applicable(self, tx_id: bytes) -> bool:
        """Reference evaluation by direct mutual recursion (test oracle)."""
        depth = [0]
        limit = len(self.known) + 1

        def app(i):
            depth[0] += 1
            if depth[0] > limit * limit:
                raise AssertionError("applicability recursion runaway")
            votes = self.endorsements.get(i, {})
            good = sum(1 for e in votes.values() if val(e))
            return good >= self.system.omega

        def val(e):
            return all(not app(c) for c in e.conditions)

        return app(tx_id)

    def _dirty_closure(self, seeds) -> list:
        dirty = {}
        stack = list(seeds)
        while stack:
            i = stack.pop()
            if i in dirty:
                continue
            dirty[i] = True
            deps = self.rev.get(i)
            if deps:
                stack.extend(deps)
        order = sorted(dirty, key=lambda i: (self.known[i].deadline, i))
        return order

    def _refresh_applicability(self, order, now: int) -> list:
        """Recompute cached applicability in ascending deadline order.

        Conditions always carry strictly earlier deadlines, so by the time a
        transaction is evaluated every condition answer is already final.
        Returns ids whose answer flipped.
        """
        cache = self.applicable_cache
        omega = self.system.omega
        steps = 0
        flipped = []
        for i in order:
            votes = self.endorsements.get(i)
            if not votes:
                value = False
            else:
                good = 0
                for e in votes.values():
                    steps += 1
                    for c in e.conditions:
                        if cache.get(c, False):
                            break
                    else:
                        good += 1
                value = good >= omega
            if cache.get(i, False) != value:
                cache[i] = value
                flipped.append(i)
                self.services.on_applicability_change(self.node_id, i,
                                                      value, now)
        self.services.on_eval_steps(steps)
        return flipped

    # -- state checking ------------------------------------------------------

    def check_state_all(self, seeds, now: int) -> None:
        order = self._dirty_closure(seeds)
        self._refresh_applicability(order, now)
        # Roll back first: a transaction that lost applicability must be
        # unwound before anything newly applicable lands on its keys.
        for i in order:
            if not self.applicable_cache[i] and self.store.is_applied(i):
                self._do_rollback(self.known[i], now)
                self.set_status(i, TxStatus.PENDING, now)
                self._note_if_stale(i, now)
            elif (not self.applicable_cache[i]
                  and self.get_status(i) == TxStatus.APPLICABLE):
                self.set_status(i, TxStatus.PENDING, now)
                self._note_if_stale(i, now)
        for i in order:
            self._advance(i, now)

    def _do_rollback(self, tx: Transaction, now: int) -> None:
        guard = self.services.pre_rollback(self.node_id, tx)
        self.store.rollback(tx)
        self.services.on_rollback(self.node_id, tx.id, guard, now)

    def _advance(self, tx_id: bytes, now: int) -> None:
        if not self.applicable_cache.get(tx_id, False):
            return
        status = self.get_status(tx_id)
        if is_terminal(status):
            return
        tx = self.known[tx_id]
        if status == TxStatus.PENDING:
            self.set_status(tx_id, TxStatus.APPLICABLE, now)
            status = TxStatus.APPLICABLE
        if (status == TxStatus.APPLICABLE and self.config.speculative
                and not self.store.is_applied(tx_id)):
            self.store.apply(tx)
            self.services.on_application(self.node_id, tx_id, now)
            self.set_status(tx_id, TxStatus.APPLIED, now)
        if self.uncond.get(tx_id, 0) >= self.system.omega:
            if not self.store.is_applied(tx_id):
                self.store.apply(tx)
                self.services.on_application(self.node_id, tx_id, now)
            self.store.commit(tx)
            self.set_status(tx_id, TxStatus.COMMITTED, now)
            self.endorsed.pop(tx_id, None)

    # -- staleness & checkpoints ----------------------------------------------

    def is_stale(self, tx_id: bytes) -> bool:
        tx = self.known.get(tx_id)
        if tx is None:
            return False
        if self.applicable_cache.get(tx_id, False):
            return False
        return tx.deadline < self.local_now() - self.system.old_delay

    def _note_if_stale(self, tx_id: bytes, now: int) -> None:
        if is_terminal(self.get_status(tx_id)):
            return
        if tx_id in self.covered or not self.is_stale(tx_id):
            return
        arm = self.pool.add(tx_id, now)
        if arm:
            self.services.set_timer(self.node_id, self.pool.deadline,
                                    ("pool",))

    def handle_stale_timer(self, tx_id: bytes, now: int) -> None:
        self._note_if_stale(tx_id, now)

    def flush_pool(self, now: int) -> None:
        members = [
            i for i in self.pool.drain()
            if i not in self.covered and self.is_stale(i)
            and not is_terminal(self.get_status(i))
        ]
        if not members or not self.config.is_endorser:
            return
        pid = proposal_id(members, self.node_id)
        if pid in self.rounds:
            return
        proposal = CheckpointProposal(pid, frozenset(members), self.node_id,
                                      now, now)
        self.services.broadcast(self.node_id, proposal)

    # -- checkpoint rounds ------------------------------------------------------

    def handle_checkpoint(self, proposal: CheckpointProposal,
                          now: int) -> None:
        if proposal.id in self.rounds:
            return
        missing = [m for m in sorted(proposal.members)
                   if m not in self.known]
        if missing:
            self.pending_proposals.setdefault(missing[0], []).append(proposal)
            self.services.set_timer(
                self.node_id,
                now + 2 * self.services.estimator.broadcast_bound,
                ("proposal_check", proposal.id))
            return
        self._start_round(proposal, now)

    def _admit_pending_proposals(self, tx_id: bytes, now: int) -> None:
        queue = self.pending_proposals.pop(tx_id, None)
        if not queue:
            return
        for proposal in queue:
            self.handle_checkpoint(proposal, now)

    def _start_round(self, proposal: CheckpointProposal, now: int) -> None:
        estimator = self.services.estimator
        members = sorted(proposal.members)
        max_deadline = max(self.known[m].deadline for m in members)
        cutoff = max_deadline + estimator.pairwise_skew_bound
        # Timeout: past the shared cutoff on the local clock, and at least
        # one broadcast bound after this node joined the round, so any veto
        # raised at proposal receipt is guaranteed to have arrived.
        settle = max(
            self.to_global(cutoff + estimator.broadcast_bound),
            now + estimator.broadcast_bound,
        ) + 1
        live = [m for m in members
                if self.applicable_cache.get(m, False)
                or self.store.is_committed(m)]
        round_ = VetoRound(proposal=proposal, choice=0 if live else 1,
                           cutoff=cutoff, settle_at=settle, started_at=now)
        self.rounds[proposal.id] = round_
        for m in members:
            self.covered.setdefault(m, proposal.id)
        if round_.choice == 0:
            self._decide(round_, 0, now)
            evidence = []
            for m in live:
                evidence.extend(self.endorsements.get(m, {}).values())
            if not self.has(BEHAVIOR_SILENT):
                self.services.broadcast(
                    self.node_id,
                    VetoMessage(proposal.id, self.node_id, tuple(evidence),
                                now))
        else:
            self.services.set_timer(self.node_id, settle,
                                    ("settle", proposal.id))

    def handle_veto(self, veto: VetoMessage, now: int) -> None:
        # Evidence endorsements re-enter through the ordinary filters, which
        # is what actually restores the quorum at nodes that missed them.
        for e in veto.evidence:
            self.handle_endorsement(e, now)
        round_ = self.rounds.get(veto.proposal_id)
        if round_ is None or round_.decided:
            return
        if self._veto_justified(veto, round_):
            self._decide(round_, 0, now)
        else:
            self.services.on_suspected(self.node_id, veto.voter,
                                       "unjustified-veto", now)

    def _veto_justified(self, veto: VetoMessage, round_: VetoRound) -> bool:
        by_member: dict = {}
        for e in veto.evidence:
            if e.tx_id not in round_.proposal.members:
                continue
            target = self.known.get(e.tx_id)
            if target is None:
                continue
            if filter_endorsement(e, self.known) is not None:
                continue
            if e.sent_time > self.send_bound(target):
                continue
            by_member.setdefault(e.tx_id, set()).add(e.endorser)
        return any(len(v) >= self.system.omega for v in by_member.values())

    def handle_settle(self, pid: bytes, now: int) -> None:
        round_ = self.rounds.get(pid)
        if round_ is None or round_.decided:
            return
        live = any(
            self.applicable_cache.get(m, False) or self.store.is_committed(m)
            for m in sorted(round_.proposal.members))
        self._decide(round_, 0 if live else 1, now)

    def _decide(self, round_: VetoRound, decision: int, now: int) -> None:
        round_.decision = decision
        round_.decided_at = now
        members = sorted(round_.proposal.members)
        for m in members:
            if self.covered.get(m) == round_.proposal.id:
                del self.covered[m]
        if decision == 0:
            self.services.on_decision(self.node_id, round_, now)
            self.check_state_all(set(members), now)
            return
        # Prune: forget the dropped transactions' endorsements, strip them
        # from every remaining condition set, then let state checking chase
        # the knock-on effects.
        dirty = set(members)
        for m in members:
            votes = self.endorsements.pop(m, None)
            if votes:
                for e in votes.values():
                    self._unindex(e)
            self.uncond.pop(m, None)
            deps = self.rev.pop(m, None)
            if deps:
                for parent in deps:
                    dirty.add(parent)
                    replacements = {}
                    for endorser, e in self.endorsements.get(parent,
                                                             {}).items():
                        if m in e.conditions:
                            replacements[endorser] = Endorsement(
                                e.tx_id, e.endorser,
                                e.conditions - {m}, e.sent_time)
                    for endorser, stripped in replacements.items():
                        old = self.endorsements[parent][endorser]
                        self._unindex(old)
                        self.endorsements[parent][endorser] = stripped
                        self._index(stripped)
        order = self._dirty_closure(dirty)
        self._refresh_applicability(order, now)
        for m in members:
            if self.store.is_applied(m):
                self._do_rollback(self.known[m], now)
                self.set_status(m, TxStatus.PENDING, now)
            elif self.get_status(m) == TxStatus.APPLICABLE:
                self.set_status(m, TxStatus.PENDING, now)
            self.endorsed.pop(m, None)
            self.pool.pending.pop(m, None)
            self.set_status(m, TxStatus.DROPPED, now)
        self.services.on_decision(self.node_id, round_, now)
        self.check_state_all(dirty, now)

    # -- timers ------------------------------------------------------------------

    def handle_timer(self, token, now: int) -> None:
        kind = token[0]
        if kind == "retry":
            if token[1] in self.known:
                self.try_endorse(token[1], now)
        elif kind == "stale":
            self.handle_stale_timer(token[1], now)
        elif kind == "pool":
            if self.pool.pending and self.pool.deadline is not None:
                if now >= self.pool.deadline:
                    self.flush_pool(now)
        elif kind == "settle":
            self.handle_settle(token[1], now)
        elif kind == "buffer_check":
            key = token[1]
            since = self.buffered_since.get(key)
            if since is not None:
                self.services.on_suspected(self.node_id, key[1],
                                           "unresolved-buffered-endorsement",
                                           now)
                self.buffered_since.pop(key, None)
        elif kind == "proposal_check":
            pid = token[1]
            if pid not in self.rounds:
                for queue in self.pending_proposals.values():
                    for proposal in list(queue):
                        if proposal.id == pid:
                            queue.remove(proposal)
                            self.services.on_suspected(
                                self.node_id, proposal.proposer,
                                "unresolved-checkpoint-member", now)
        elif kind == "byz_send":
            message = token[1]
            self.services.broadcast(self.node_id, message)
        elif kind == "byz_late":
            tx = self.known.get(token[1])
            if tx is not None and token[1] not in self.endorsed:
                self.endorsed[token[1]] = True
                self.services.broadcast(
                    self.node_id,
                    Endorsement(tx.id, self.node_id, frozenset(), now))

    # -- recovery ------------------------------------------------------------------

    def adopt_snapshot(self, store: KVStore, now: int) -> None:
        self.store = store
        for tx_id in sorted(store.committed):
            self.force_status(tx_id, TxStatus.COMMITTED, now)
            self.endorsed.pop(tx_id, None)

    def resume(self, now: int) -> None:
        """Re-arm event-driven work after a crash window."""
        order = sorted(self.known, key=lambda i: (self.known[i].deadline, i))
        self.check_state_all(set(order), now)
        if self.config.is_endorser:
            for tx_id in order:
                if (tx_id not in self.endorsed
                        and not is_terminal(self.get_status(tx_id))):
                    self.try_endorse(tx_id, now)
        for tx_id in order:
            self._note_if_stale(tx_id, now)
            if not is_terminal(self.get_status(tx_id)):
                stale_at = self.to_global(
                    self.known[tx_id].deadline + self.system.old_delay) + 1
                if stale_at > now:
                    self.services.set_timer(self.node_id, stale_at,
                                            ("stale", tx_id))
        for pid in sorted(self.rounds):
            round_ = self.rounds[pid]
            if not round_.decided:
                self.services.set_timer(self.node_id,
                                        max(round_.settle_at, now + 1),
                                        ("settle", pid))
        if self.pool.pending:
            self.pool.deadline = now + self.pool.window
            self.services.set_timer(self.node_id, self.pool.deadline,
                                    ("pool",))
