"""Per-node key-value state with versioned keys and undo-based rollback.

Keys carry monotone version counters (one bump per applied operation).
Uncommitted transactions sit in an ordered log with undo records; rollback
unwinds the log back to the target transaction and replays the remainder,
so the resulting state equals applying the surviving set in original order.
Committed transactions leave the log and can never be unwound.

Writers of non-commuting ops carry a rank (deadline, id). A write only
lands when its rank is at least the current holder's, which keeps replicas
convergent even if two conflicting transactions ever both reach commit.
"""

from __future__ import annotations

import struct

from .model import OpKind, Transaction

SNAPSHOT_MAGIC = b"QKV1"

_TAG_BYTES = 0
_TAG_INT = 1
_TAG_TOMBSTONE = 2


class StoreError(Exception):
    pass


class MalformedSnapshot(StoreError):
    pass


class _Entry:
    __slots__ = ("value", "version", "rank")

    def __init__(self, value, version, rank):
        self.value = value  # bytes, int, or None for a deleted key
        self.version = version
        self.rank = rank  # (deadline, tx_id) of last non-commuting writer

    def snap(self):
        return (self.value, self.version, self.rank)


class KVStore:
    """Mutable datastore state owned by a single simulated node."""

    def __init__(self):
        self.entries: dict = {}
        self.log: list = []  # [(tx_id, tx, undo)] for uncommitted applied txs
        self.committed: dict = {}  # tx_id -> commit marker (insertion ordered)
        self._applied_ids: set = set()

    # -- queries -------------------------------------------------------

    def version_of(self, key: str) -> int:
        entry = self.entries.get(key)
        return entry.version if entry is not None else 0

    def value_of(self, key: str):
        entry = self.entries.get(key)
        return entry.value if entry is not None else None

    def is_applied(self, tx_id: bytes) -> bool:
        return tx_id in self._applied_ids

    def is_committed(self, tx_id: bytes) -> bool:
        return tx_id in self.committed

    def check_preconditions(self, tx: Transaction) -> bool:
        for pc in tx.preconditions:
            if self.version_of(pc.key) != pc.expected_version:
                return False
        return True

    def preview(self, tx: Transaction) -> dict:
        """Post-state of the keys touched by tx, without mutating anything."""
        out = {}
        for op in tx.ops:
            current = out.get(op.key, self.value_of(op.key))
            out[op.key] = self._next_value(current, op)
        return out

    @staticmethod
    def _next_value(current, op):
        if op.kind == OpKind.PUT:
            return op.value
        if op.kind == OpKind.DELETE:
            return None
        base = current if isinstance(current, int) else 0
        return base + op.value

    # -- mutations -----------------------------------------------------

    def apply(self, tx: Transaction) -> None:
        if tx.id in self._applied_ids:
            raise StoreError("transaction already applied")
        if tx.id in self.committed:
            raise StoreError("transaction already committed")
        undo = {}
        rank = tx.order_key()
        for op in tx.ops:
            entry = self.entries.get(op.key)
            if op.key not in undo:
                undo[op.key] = entry.snap() if entry is not None else None
            self._apply_op(op, rank)
        self.log.append((tx.id, tx, undo))
        self._applied_ids.add(tx.id)

    def _apply_op(self, op, rank) -> None:
        entry = self.entries.get(op.key)
        if op.kind == OpKind.INCREMENT:
            if entry is None:
                self.entries[op.key] = _Entry(op.value, 1, None)
            else:
                base = entry.value if isinstance(entry.value, int) else 0
                entry.value = base + op.value
                entry.version += 1
            return
        if entry is None:
            value = op.value if op.kind == OpKind.PUT else None
            self.entries[op.key] = _Entry(value, 1, rank)
            return
        entry.version += 1
        if entry.rank is None or rank >= entry.rank:
            entry.value = op.value if op.kind == OpKind.PUT else None
            entry.rank = rank

    def rollback(self, tx: Transaction) -> None:
        if tx.id in self.committed:
            raise StoreError("cannot roll back a committed transaction")
        if tx.id not in self._applied_ids:
            raise StoreError("transaction is not applied")
        index = next(i for i, rec in enumerate(self.log) if rec[0] == tx.id)
        suffix = self.log[index:]
        del self.log[index:]
        for _, _, undo in reversed(suffix):
            self._restore(undo)
        for tx_id, txn, _ in suffix:
            self._applied_ids.discard(tx_id)
        for _, txn, _ in suffix[1:]:
            self.apply(txn)

    def _restore(self, undo: dict) -> None:
        for key, prior in undo.items():
            if prior is None:
                self.entries.pop(key, None)
            else:
                value, version, rank = prior
                self.entries[key] = _Entry(value, version, rank)

    def commit(self, tx: Transaction) -> None:
        if tx.id in self.committed:
            raise StoreError("transaction already committed")
        if tx.id not in self._applied_ids:
            raise StoreError("cannot commit a transaction that is not applied")
        index = next(i for i, rec in enumerate(self.log) if rec[0] == tx.id)
        del self.log[index]
        self._applied_ids.discard(tx.id)
        self.committed[tx.id] = True

    # -- snapshots -----------------------------------------------------

    def committed_view(self) -> dict:
        """Entries with every uncommitted effect unwound, as plain tuples."""
        shadow = {k: e.snap() for k, e in self.entries.items()}
        for _, _, undo in reversed(self.log):
            for key, prior in undo.items():
                if prior is None:
                    shadow.pop(key, None)
                else:
                    shadow[key] = prior
        return shadow

    def snapshot(self) -> bytes:
        """Canonical encoding of committed state; byte-equal across replicas
        holding the same committed set."""
        view = self.committed_view()
        out = [SNAPSHOT_MAGIC, struct.pack(">I", len(view))]
        for key in sorted(view, key=lambda k: k.encode()):
            value, version, _rank = view[key]
            kb = key.encode()
            out.append(struct.pack(">I", len(kb)))
            out.append(kb)
            if value is None:
                out.append(struct.pack(">B", _TAG_TOMBSTONE))
            elif isinstance(value, int):
                out.append(struct.pack(">Bq", _TAG_INT, value))
            else:
                out.append(struct.pack(">BI", _TAG_BYTES, len(value)))
                out.append(value)
            out.append(struct.pack(">Q", version))
        ids = sorted(self.committed)
        out.append(struct.pack(">I", len(ids)))
        out.extend(ids)
        return b"".join(out)

    @classmethod
    def restore(cls, data: bytes) -> "KVStore":
        store = cls()
        u32 = struct.Struct(">I")
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(data):
                raise MalformedSnapshot("truncated snapshot")
            chunk = data[pos:pos + n]
            pos += n
            return chunk

        if take(4) != SNAPSHOT_MAGIC:
            raise MalformedSnapshot("bad magic")
        (n_entries,) = u32.unpack(take(4))
        for _ in range(n_entries):
            (klen,) = u32.unpack(take(4))
            key = take(klen).decode("utf-8")
            (tag,) = struct.unpack(">B", take(1))
            if tag == _TAG_BYTES:
                (vlen,) = u32.unpack(take(4))
                value = take(vlen)
            elif tag == _TAG_INT:
                (value,) = struct.unpack(">q", take(8))
            elif tag == _TAG_TOMBSTONE:
                value = None
            else:
                raise MalformedSnapshot("unknown value tag")
            (version,) = struct.unpack(">Q", take(8))
            store.entries[key] = _Entry(value, version, None)
        (n_committed,) = u32.unpack(take(4))
        for _ in range(n_committed):
            store.committed[bytes(take(16))] = True
        if pos != len(data):
            raise MalformedSnapshot("trailing bytes")
        return store

    def copy(self) -> "KVStore":
        dup = KVStore()
        dup.entries = {k: _Entry(*e.snap()) for k, e in self.entries.items()}
        dup.log = [(tx_id, tx, dict(undo)) for tx_id, tx, undo in self.log]
        dup.committed = dict(self.committed)
        dup._applied_ids = set(self._applied_ids)
        return dup

    def state_equal(self, other: "KVStore") -> bool:
        if set(self.entries) != set(other.entries):
            return False
        for key, entry in self.entries.items():
            o = other.entries[key]
            if entry.value != o.value or entry.version != o.version:
                return False
        return True
