"""Core domain types shared by every other module.

All simulated time is integer microseconds. Transaction and endorsement
values are immutable so they can be shared freely between nodes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

# Time helpers: everything runs on integer microsecond ticks.
US = 1
MS = 1_000
SECOND = 1_000_000


def seconds(x: float) -> int:
    return int(round(x * SECOND))


def millis(x: float) -> int:
    return int(round(x * MS))


class OpKind(enum.IntEnum):
    PUT = 0
    INCREMENT = 1
    DELETE = 2


@dataclass(frozen=True, slots=True)
class Operation:
    """Single datastore operation.

    PUT carries a bytes value, INCREMENT a signed integer delta, DELETE
    carries no value. Increments on the same key commute with each other;
    PUT and DELETE commute with nothing on the same key.
    """

    kind: OpKind
    key: str
    value: object = None

    def __post_init__(self):
        if not self.key:
            raise ValueError("operation key must be non-empty")
        if self.kind == OpKind.PUT and not isinstance(self.value, bytes):
            raise ValueError("PUT requires a bytes value")
        if self.kind == OpKind.INCREMENT and not isinstance(self.value, int):
            raise ValueError("INCREMENT requires an int delta")
        if self.kind == OpKind.DELETE and self.value is not None:
            raise ValueError("DELETE takes no value")

    @property
    def commutative(self) -> bool:
        return self.kind == OpKind.INCREMENT


def put(key: str, value: bytes) -> Operation:
    return Operation(OpKind.PUT, key, value)


def increment(key: str, delta: int) -> Operation:
    return Operation(OpKind.INCREMENT, key, delta)


def delete(key: str) -> Operation:
    return Operation(OpKind.DELETE, key)


@dataclass(frozen=True, slots=True)
class Precondition:
    """Exact-match version check on one key. Absent keys have version 0."""

    key: str
    expected_version: int

    def __post_init__(self):
        if not self.key:
            raise ValueError("precondition key must be non-empty")
        if self.expected_version < 0:
            raise ValueError("expected_version must be >= 0")


@dataclass(frozen=True, slots=True)
class Transaction:
    """Client-proposed unit of work: id, absolute deadline, preconditions, ops."""

    id: bytes
    deadline: int
    preconditions: tuple
    ops: tuple
    submitter: int
    submit_time: int

    def __post_init__(self):
        if len(self.id) != 16:
            raise ValueError("transaction id must be 16 bytes")
        if not self.ops:
            raise ValueError("transaction must carry at least one operation")
        if self.deadline <= self.submit_time:
            raise ValueError("deadline must be after submit time")

    def order_key(self) -> tuple:
        # Total order used for tie-breaking: deadline first, then id bytes.
        return (self.deadline, self.id)


@dataclass(frozen=True, slots=True)
class Endorsement:
    """A node's vote for one transaction.

    ``conditions`` lists transaction ids that must never become applicable
    for this endorsement to stay valid. An empty set means the vote is
    unconditional and counts toward commit.
    """

    tx_id: bytes
    endorser: int
    conditions: frozenset
    sent_time: int

    def canonical_key(self) -> tuple:
        # Deterministic representative used when an equivocating endorser
        # ships different condition sets for the same transaction.
        return tuple(sorted(self.conditions))


class TxStatus(enum.IntEnum):
    PENDING = 0
    APPLICABLE = 1
    APPLIED = 2
    COMMITTED = 3
    DROPPED = 4


TERMINAL_STATUSES = (TxStatus.COMMITTED, TxStatus.DROPPED)

# Legal transitions of the per-node transaction automaton.
_ALLOWED_TRANSITIONS = {
    (TxStatus.PENDING, TxStatus.APPLICABLE),
    (TxStatus.APPLICABLE, TxStatus.PENDING),
    (TxStatus.APPLICABLE, TxStatus.APPLIED),
    (TxStatus.APPLIED, TxStatus.PENDING),
    (TxStatus.APPLIED, TxStatus.COMMITTED),
    (TxStatus.APPLICABLE, TxStatus.COMMITTED),
    (TxStatus.PENDING, TxStatus.DROPPED),
}


def is_terminal(status: TxStatus) -> bool:
    return status in TERMINAL_STATUSES


def transition_allowed(old: TxStatus, new: TxStatus) -> bool:
    if old == new:
        return True
    return (old, new) in _ALLOWED_TRANSITIONS


@dataclass(frozen=True, slots=True)
class SystemConfig:
    """Static protocol parameters shared by every node of one deployment."""

    n: int
    f: int
    omega: int
    old_delay: int = 2 * SECOND
    checkpoint_pool_window: int = 5 * SECOND
    speculative_default: bool = True

    def __post_init__(self):
        if self.f < 0 or self.n < 3 * self.f + 1:
            raise ValueError("need n >= 3f + 1")
        if not ((self.n + self.f) // 2 < self.omega <= self.n):
            raise ValueError("need (n+f)/2 < omega <= n")
        if self.old_delay <= 0:
            raise ValueError("old_delay must be positive")
        if self.checkpoint_pool_window < 0:
            raise ValueError("checkpoint_pool_window must be >= 0")


def min_quorum(n: int, f: int) -> int:
    """Smallest quorum that tolerates f Byzantine endorsers out of n."""
    if f < 0 or n < 3 * f + 1:
        raise ValueError("need n >= 3f + 1")
    return (n + f) // 2 + 1


def write_profile(ops) -> dict:
    """Map key -> True when every op of this transaction on the key commutes."""
    profile: dict = {}
    for op in ops:
        prev = profile.get(op.key, True)
        profile[op.key] = prev and op.commutative
    return profile


def conflicts(a, b) -> bool:
    """True when the two op lists contain a non-commuting pair on one key."""
    if not a or not b:
        raise ValueError("conflict check requires non-empty op lists")
    pa = write_profile(a)
    pb = write_profile(b)
    if len(pb) < len(pa):
        pa, pb = pb, pa
    for key, commutative in pa.items():
        other = pb.get(key)
        if other is None:
            continue
        if not (commutative and other):
            return True
    return False


def profiles_conflict(pa: dict, pb: dict) -> bool:
    """conflicts() over precomputed write profiles (hot path in the engine)."""
    if len(pb) < len(pa):
        pa, pb = pb, pa
    for key, commutative in pa.items():
        other = pb.get(key)
        if other is not None and not (commutative and other):
            return True
    return False


REJECT_UNKNOWN_CONDITION = "unknown-condition"
REJECT_DEADLINE_ORDER = "deadline-order"
REJECT_UNKNOWN_TRANSACTION = "unknown-transaction"


def filter_endorsement(e: Endorsement, known: dict) -> Optional[str]:
    """Content check for an incoming endorsement.

    Returns None to accept, otherwise a rejection reason. Every condition
    must name a known transaction with a strictly earlier deadline than the
    endorsed transaction; anything else is evidence of a faulty endorser.
    """
    target = known.get(e.tx_id)
    if target is None:
        return REJECT_UNKNOWN_TRANSACTION
    for cond in e.conditions:
        ct = known.get(cond)
        if ct is None:
            return REJECT_UNKNOWN_CONDITION
        if ct.deadline >= target.deadline:
            return REJECT_DEADLINE_ORDER
    return None
