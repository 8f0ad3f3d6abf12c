"""Actions returned by protocol processes to the event loop.

Processes never touch the network or the clock directly: handlers return a
list of actions that the simulator applies.  This keeps replicas and clients
deterministic and easy to drive from unit tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Send:
    dst: int
    msg: object


@dataclass(frozen=True)
class SetTimer:
    key: tuple
    delay: float


@dataclass(frozen=True)
class CancelTimer:
    key: tuple


@dataclass(frozen=True)
class Emit:
    """Observation for traces (mode switches, consensus records, client levels)."""

    kind: str
    data: dict = field(default_factory=dict)


def sends(actions):
    return [a for a in actions if isinstance(a, Send)]


def emits(actions, kind=None):
    return [a for a in actions if isinstance(a, Emit) and (kind is None or a.kind == kind)]
