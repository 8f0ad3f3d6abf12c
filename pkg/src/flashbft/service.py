"""Deterministic key-value service executed by every replica.

Operations are ASCII commands: ``incr <key>``, ``get <key>``,
``put <key> <int>`` and ``noop``.  Results are the decimal value of the key
after the operation.  The state also chains the digests of executed batches
so that replicas with the same data but different decision histories still
produce different checkpoint digests.
"""
from __future__ import annotations

from .auth import digest
from .encoding import pack, unpack

GENESIS = b"\x00" * 32


class KVService:
    def __init__(self):
        self.data = {}
        self.replies = {}
        self.history = GENESIS
        self.members = ()  # replicated membership, changed by reconfiguration

    def execute(self, client: int, seq: int, op: bytes) -> bytes:
        """Run one request; duplicates return the cached result without re-execution."""
        key = (client, seq)
        if key in self.replies:
            return self.replies[key]
        result = self.apply(op)
        self.replies[key] = result
        return result

    def apply(self, op: bytes) -> bytes:
        parts = op.decode(errors="replace").split()
        cmd = parts[0] if parts else "noop"
        if cmd == "incr" and len(parts) == 2:
            self.data[parts[1]] = self.data.get(parts[1], 0) + 1
            return str(self.data[parts[1]]).encode()
        if cmd == "get" and len(parts) == 2:
            return str(self.data.get(parts[1], 0)).encode()
        if cmd == "put" and len(parts) == 3 and parts[2].lstrip("-").isdigit():
            self.data[parts[1]] = int(parts[2])
            return parts[2].encode()
        return b"ok" if cmd == "noop" else b"error"

    def chain(self, batch_digest: bytes) -> None:
        self.history = digest(self.history + batch_digest)

    def executed(self, key) -> bool:
        return key in self.replies

    def snapshot(self) -> bytes:
        return pack((tuple(sorted(self.data.items())),
                     tuple(sorted((c, s, r) for (c, s), r in self.replies.items())),
                     self.history, tuple(self.members)))

    def restore(self, snap: bytes) -> None:
        data, replies, history, members = unpack(snap)
        self.members = tuple(members)
        self.data = dict(data)
        self.replies = {(c, s): r for c, s, r in replies}
        self.history = history

    def state_digest(self) -> bytes:
        return digest(self.snapshot())


def sequential_model(op: bytes, state: dict):
    """Pure sequential specification used by the history checker."""
    svc = KVService()
    svc.data = dict(state)
    result = svc.apply(op)
    return result, svc.data
