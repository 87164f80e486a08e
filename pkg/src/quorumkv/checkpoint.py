"""Checkpoint proposals, pooling, and the binary veto rounds that decide them.

A checkpoint proposes dropping a set of stale transactions. Any node holding
evidence that a member is still live (applicable or committed) vetoes with
that evidence; otherwise nodes stay silent and the round times out to a
drop decision once the synchrony bounds guarantee every relevant message
has landed everywhere.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True, slots=True)
class SynchronyEstimator:
    """Configured bounds standing in for passively measured network health.

    ``broadcast_bound`` must dominate the worst delivery latency of the
    network once it has stabilized; ``skew_envelope`` bounds every node's
    clock offset from the reference clock, so any two clocks differ by at
    most twice the envelope.
    """

    broadcast_bound: int
    skew_envelope: int

    def __post_init__(self):
        if self.broadcast_bound <= 0 or self.skew_envelope < 0:
            raise ValueError("bounds must be positive")
        if self.broadcast_bound <= self.skew_envelope:
            raise ValueError("broadcast bound must exceed the skew envelope")

    @property
    def pairwise_skew_bound(self) -> int:
        return 2 * self.skew_envelope

    @property
    def latency_cap(self) -> int:
        # Delivery latencies are clipped here so that (a) everything sent
        # before a round's cutoff lands before any node's timeout and
        # (b) a veto raised on proposal receipt lands before any timeout.
        return min(self.broadcast_bound - self.skew_envelope,
                   self.broadcast_bound // 2)


def proposal_id(members, proposer: int) -> bytes:
    """Stable id so identical concurrent proposals from one node merge."""
    h = hashlib.sha256()
    for member in sorted(members):
        h.update(member)
    h.update(proposer.to_bytes(8, "big", signed=False))
    return h.digest()[:16]


@dataclass(frozen=True, slots=True)
class CheckpointProposal:
    id: bytes
    members: frozenset
    proposer: int
    start_time: int
    sent_time: int


@dataclass(frozen=True, slots=True)
class VetoMessage:
    """Choice-0 vote carrying the endorsements that justify keeping members."""

    proposal_id: bytes
    voter: int
    evidence: tuple  # Endorsement values, covering the live members
    sent_time: int


@dataclass(slots=True)
class VetoRound:
    """Per-node state of one checkpoint decision."""

    proposal: CheckpointProposal
    choice: int
    cutoff: int  # latest legal send time of endorsements for members
    settle_at: int  # global time of this node's timeout evaluation
    started_at: int
    decision: Optional[int] = None
    decided_at: Optional[int] = None

    @property
    def decided(self) -> bool:
        return self.decision is not None


class CheckpointPool:
    """Aggregates stale transactions so one proposal covers a whole window."""

    def __init__(self, window: int):
        self.window = window
        self.pending: dict = {}  # tx_id -> first report time, insertion ordered
        self.deadline: Optional[int] = None

    def add(self, tx_id: bytes, now: int) -> bool:
        """Queue a stale transaction; returns True when a flush timer is due."""
        if tx_id in self.pending:
            return False
        first = not self.pending
        self.pending[tx_id] = now
        if first:
            self.deadline = now + self.window
        return first

    def drain(self) -> list:
        members = list(self.pending)
        self.pending.clear()
        self.deadline = None
        return members
