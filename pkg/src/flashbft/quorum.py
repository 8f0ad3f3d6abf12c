"""Bimodal weight distributions and weighted quorum thresholds.

All vote accounting is done in integer *units*: a low-weight replica holds
``t`` units and a high-weight replica ``t + delta`` units, which is the usual
``1`` / ``1 + delta/t`` voting power scaled by ``t``.  Threshold comparisons
are therefore exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

CONSERVATIVE = "conservative"
FAST = "fast"


def optimal_threshold(n: int) -> int:
    """Largest ``t`` with ``n >= 3t + 1``."""
    return (n - 1) // 3


def fast_threshold(t: int) -> int:
    return math.ceil(t / 2)


@dataclass(frozen=True)
class WeightConfig:
    """Voting weights and quorum threshold for one membership and threshold.

    ``members`` keeps replica ids in ascending order and ``units`` is aligned
    with it.  ``ranking`` is the order the config was built from; its first
    ``2t`` entries form ``high``.
    """

    n: int
    t: int
    delta: int
    vmax_units: int
    members: tuple
    units: tuple
    quorum_units: int
    ranking: tuple
    high: frozenset = field(compare=False)

    def weight(self, rid: int) -> int:
        try:
            return self.units[self.members.index(rid)]
        except ValueError:
            raise KeyError(f"replica {rid} is not a member") from None

    def weight_of(self, rids: Iterable[int]) -> int:
        lookup = dict(zip(self.members, self.units))
        return sum(lookup[r] for r in set(rids))

    @property
    def low_units(self) -> int:
        return self.t

    @property
    def total_units(self) -> int:
        return sum(self.units)

    @property
    def weak_units(self) -> int:
        # t * V_max + 1 votes, scaled by t
        return self.t * (self.t + self.delta) + self.t

    @property
    def leader_default(self) -> int:
        return self.ranking[0]

    def descriptor(self) -> tuple:
        """Hashable identity used on the wire (membership, threshold, high set)."""
        return (self.members, self.t, tuple(sorted(self.high)))

    @classmethod
    def from_descriptor(cls, desc) -> "WeightConfig":
        members, t, high = desc
        rest = [m for m in members if m not in set(high)]
        return compute_weight_config(len(members), t, list(high) + rest, members=members)


def compute_weight_config(n: int, t_eff: int, ranking: Sequence[int], members=None) -> WeightConfig:
    """Give the first ``2*t_eff`` ranked replicas ``t_eff + delta`` units, the rest ``t_eff``."""
    members = tuple(sorted(members)) if members is not None else tuple(range(n))
    if len(members) != n:
        raise ValueError(f"membership has {len(members)} replicas, expected {n}")
    if t_eff < 1:
        raise ValueError("t_eff must be at least 1")
    if n < 3 * t_eff + 1:
        raise ValueError(f"infeasible resilience: n={n} < 3*{t_eff}+1")
    ranking = tuple(ranking)
    if sorted(ranking) != list(members):
        raise ValueError("ranking must be a permutation of the membership")
    delta = n - 3 * t_eff - 1
    vmax = t_eff + delta
    high = frozenset(ranking[: 2 * t_eff])
    units = tuple(vmax if m in high else t_eff for m in members)
    quorum_units = t_eff * (2 * t_eff + 2 * delta + 1)
    return WeightConfig(n, t_eff, delta, vmax, members, units, quorum_units, ranking, high)


def rank_by_score(scores) -> list:
    """Replica ids ordered by ascending score, ties broken by ascending id."""
    items = scores.items() if hasattr(scores, "items") else enumerate(scores)
    return [rid for rid, _ in sorted(items, key=lambda kv: (kv[1], kv[0]))]


def is_quorum(cfg: WeightConfig, members: Iterable[int]) -> bool:
    members = set(members)
    unknown = members - set(cfg.members)
    if unknown:
        raise ValueError(f"unknown replica ids {sorted(unknown)}")
    return cfg.weight_of(members) >= cfg.quorum_units


def min_quorum_cardinality(cfg: WeightConfig) -> int:
    # heaviest first gives the fewest members
    acc = 0
    for k, w in enumerate(sorted(cfg.units, reverse=True), 1):
        acc += w
        if acc >= cfg.quorum_units:
            return k
    raise ValueError("configuration has no quorum")


def max_quorum_cardinality(cfg: WeightConfig) -> int:
    """Size of the largest minimal quorum (lightest replicas first)."""
    acc = 0
    for k, w in enumerate(sorted(cfg.units), 1):
        acc += w
        if acc >= cfg.quorum_units:
            return k
    raise ValueError("configuration has no quorum")


def completion_time(arrivals: Sequence[float], senders: Sequence[int], cfg: WeightConfig) -> float:
    """Earliest time at which accumulated weight of arrivals reaches the quorum."""
    lookup = dict(zip(cfg.members, cfg.units))
    acc = 0
    for when, who in sorted(zip(arrivals, senders)):
        acc += lookup[who]
        if acc >= cfg.quorum_units:
            return when
    return math.inf


@dataclass(frozen=True)
class ModeThresholds:
    mode: str
    t_eff: int
    config: WeightConfig

    @property
    def final_replies(self) -> int:
        """Plain reply count for finality in fast mode (n - t_fast - 1)."""
        return self.config.n - self.t_eff - 1


def mode_thresholds(n: int, t: int, mode: str, ranking: Sequence[int], members=None) -> ModeThresholds:
    if mode not in (CONSERVATIVE, FAST):
        raise ValueError(f"unknown mode {mode!r}")
    t_eff = t if mode == CONSERVATIVE else fast_threshold(t)
    return ModeThresholds(mode, t_eff, compute_weight_config(n, t_eff, ranking, members))
