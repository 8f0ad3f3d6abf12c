"""Linearizability checking for key-value histories.

Search in the style of Wing & Gong with Lowe's memoisation: an operation can
be linearized next if it was invoked before every still-unlinearized
completed operation returned.  Operations without a response (never
finalized) may take effect at any point after invocation or not at all.
Histories are split per key, since every operation touches one key.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .service import sequential_model


@dataclass(frozen=True)
class HistOp:
    client: int
    seq: int
    op: bytes
    invoke: float
    respond: Optional[float] = None  # None: never completed
    result: Optional[bytes] = None

    @property
    def key(self) -> str:
        parts = self.op.decode(errors="replace").split()
        return parts[1] if len(parts) > 1 else ""


def partition(ops):
    by_key = {}
    for o in ops:
        by_key.setdefault(o.key, []).append(o)
    return by_key


def check_key(ops, max_states: int = 2_000_000) -> bool:
    """Linearizability of one key's history against the sequential KV model."""
    ops = sorted(ops, key=lambda o: (o.invoke, o.client, o.seq))
    n = len(ops)
    completed = [i for i in range(n) if ops[i].respond is not None]
    need = 0
    for i in completed:
        need |= 1 << i
    resp = [ops[i].respond if ops[i].respond is not None else math.inf for i in range(n)]
    seen = set()
    stack = [(0, ())]
    visited = 0
    while stack:
        done, state = stack.pop()
        if done & need == need:
            return True
        if (done, state) in seen:
            continue
        seen.add((done, state))
        visited += 1
        if visited > max_states:
            raise RuntimeError("linearizability search exceeded its state budget")
        horizon = min((resp[i] for i in completed if not done >> i & 1), default=math.inf)
        for i in range(n):
            if done >> i & 1 or ops[i].invoke > horizon:
                continue
            res, new = sequential_model(ops[i].op, dict(state))
            if ops[i].respond is not None and res != ops[i].result:
                continue
            stack.append((done | 1 << i, tuple(sorted(new.items()))))
    return False


def is_linearizable(ops) -> bool:
    return all(check_key(group) for group in partition(ops).values())
