"""Consensus-latency prediction and weight/leader search.

Two agreement patterns are modelled on a one-way latency matrix ``d``:

``three_step``
    The leader's PROPOSE reaches replica ``j`` at ``d[L, j]`` and ``j``
    broadcasts its WRITE then (the leader writes at time 0).  Replica ``i``
    sends ACCEPT once it holds the proposal and a weighted WRITE quorum.  The
    consensus latency is the time the leader collects a weighted ACCEPT
    quorum, since that decision gates its next proposal.

``seven_step``
    Leader-collect pattern: three vote rounds, each a broadcast from the
    leader followed by votes flowing back to it, so every round costs the
    weighted-quorum completion over round-trip times ``d[L, j] + d[j, L]``.
    The seventh step (the decide broadcast) does not gate the leader.

Weighted-quorum completion is the earliest time the accumulated weight of
arrivals reaches ``quorum_units``.  No compute cost is modelled.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .netsim.matrix import LatencyMatrix
from .quorum import WeightConfig, compute_weight_config

THREE_STEP = "three_step"
SEVEN_STEP = "seven_step"
PATTERNS = (THREE_STEP, SEVEN_STEP)


@dataclass(frozen=True)
class PredictionInput:
    matrix: LatencyMatrix
    cfg: WeightConfig
    leader: int
    pattern: str = THREE_STEP


def _as_array(matrix) -> np.ndarray:
    return matrix.delays if isinstance(matrix, LatencyMatrix) else np.asarray(matrix, dtype=float)


def _completion(arrivals: np.ndarray, w: np.ndarray, q: int) -> np.ndarray:
    """Quorum completion per column: arrivals[j, i] is when j's vote reaches i."""
    order = np.argsort(arrivals, axis=0, kind="stable")
    times = np.take_along_axis(arrivals, order, axis=0)
    cum = np.cumsum(w[order], axis=0)
    idx = np.argmax(cum >= q, axis=0)
    return times[idx, np.arange(arrivals.shape[1])]


def _predict(d: np.ndarray, w: np.ndarray, q: int, leader: int, pattern: str) -> float:
    if pattern == THREE_STEP:
        a = d[leader]  # proposal arrival (and WRITE send) per replica
        write_q = _completion(a[:, None] + d, w, q)
        send_accept = np.maximum(a, write_q)
        accept_q = _completion((send_accept + d[:, leader])[:, None], w, q)[0]
        return float(accept_q)
    if pattern == SEVEN_STEP:
        rtt = d[leader] + d[:, leader]
        return 3.0 * float(_completion(rtt[:, None], w, q)[0])
    raise ValueError(f"unknown pattern {pattern!r}")


def _subset(matrix, cfg: WeightConfig):
    d = _as_array(matrix)
    if d.shape[0] != cfg.n:
        idx = list(cfg.members)
        d = d[np.ix_(idx, idx)]
    return d


def predict_latency(inp: PredictionInput) -> float:
    cfg = inp.cfg
    if inp.leader not in cfg.members:
        raise ValueError(f"leader {inp.leader} not in membership")
    d = _subset(inp.matrix, cfg)
    w = np.asarray(cfg.units)
    return _predict(d, w, cfg.quorum_units, cfg.members.index(inp.leader), inp.pattern)


def predict(matrix, cfg: WeightConfig, leader: int, pattern: str = THREE_STEP) -> float:
    return predict_latency(PredictionInput(matrix, cfg, leader, pattern))


class _Objective:
    """Cached prediction over (high set, leader) for one matrix and threshold."""

    def __init__(self, matrix, t_eff: int, pattern: str, members=None):
        self.d = _as_array(matrix)
        n_all = self.d.shape[0]
        self.members = tuple(sorted(members)) if members is not None else tuple(range(n_all))
        if len(self.members) != n_all:
            idx = list(self.members)
            self.d = self.d[np.ix_(idx, idx)]
        self.n = len(self.members)
        self.t = t_eff
        self.pattern = pattern
        delta = self.n - 3 * t_eff - 1
        if delta < 0:
            raise ValueError(f"infeasible resilience: n={self.n} < 3*{t_eff}+1")
        self.hi = t_eff + delta
        self.q = t_eff * (2 * t_eff + 2 * delta + 1)
        self.cache = {}

    def __call__(self, high: frozenset, leader: int) -> float:
        key = (high, leader)
        val = self.cache.get(key)
        if val is None:
            w = np.array([self.hi if k in high else self.t for k in range(self.n)])
            val = _predict(self.d, w, self.q, leader, self.pattern)
            self.cache[key] = val
        return val

    def config(self, high: frozenset, leader: int) -> tuple:
        """(WeightConfig, leader id) from positional indices."""
        ranking = sorted(high) + sorted(set(range(self.n)) - high)
        ranking = [self.members[k] for k in ranking]
        cfg = compute_weight_config(self.n, self.t, ranking, members=self.members)
        return cfg, self.members[leader]


def anneal(matrix, t_eff: int, pattern: str = THREE_STEP, seed: int = 0, iterations: int = 10_000,
           cooling: float = 0.98, members=None, epoch: int = 40):
    """Simulated annealing over (high-weight set, leader).

    Starts from the id-ordered configuration with the lowest id as leader.
    A move swaps one high/low pair, relocates the leader, or does both.  The
    temperature is multiplied by ``cooling`` every ``epoch`` iterations and
    the best configuration ever visited is returned, so the result is never
    worse than the starting point.
    """
    obj = _Objective(matrix, t_eff, pattern, members)
    rng = np.random.default_rng(seed)
    n, k = obj.n, 2 * t_eff
    high = frozenset(range(k))
    leader = 0
    cur = obj(high, leader)
    best = (cur, high, leader)
    if n == k:
        return obj.config(high, leader)
    scale = float(np.max(obj.d)) if obj.d.size else 0.0
    temp = scale
    for it in range(iterations):
        if it and it % epoch == 0:
            temp *= cooling
        u = rng.random()
        new_high, new_leader = high, leader
        if u < 0.5 or k == 0:
            new_leader = int(rng.integers(n))
            if new_leader == leader:
                continue
        if k and (u >= 0.5 or u < 0.25):
            # half of the leader moves also swap a pair, which lets the search cross plateaus
            out = sorted(new_high)[int(rng.integers(k))]
            low = sorted(set(range(n)) - new_high)
            inn = low[int(rng.integers(len(low)))]
            new_high = (new_high - {out}) | {inn}
        cand = obj(new_high, new_leader)
        diff = cand - cur
        if diff <= 0 or (temp > 0 and rng.random() < math.exp(-diff / temp)):
            high, leader, cur = new_high, new_leader, cand
            if cur < best[0] or (cur == best[0] and (sorted(high), leader) < (sorted(best[1]), best[2])):
                best = (cur, high, leader)
    return obj.config(best[1], best[2])


def exhaustive(matrix, t_eff: int, pattern: str = THREE_STEP, members=None):
    """Brute-force optimum over every high set and leader; returns (cfg, leader, latency)."""
    obj = _Objective(matrix, t_eff, pattern, members)
    best = None
    for combo in itertools.combinations(range(obj.n), 2 * t_eff):
        high = frozenset(combo)
        for leader in range(obj.n):
            val = obj(high, leader)
            if best is None or val < best[0]:
                best = (val, high, leader)
    cfg, leader = obj.config(best[1], best[2])
    return cfg, leader, best[0]


def initial_config(n: int, t_eff: int, members=None):
    members = tuple(sorted(members)) if members is not None else tuple(range(n))
    return compute_weight_config(n, t_eff, members, members=members), members[0]


def expectation_threshold(matrix, cons_cfg: WeightConfig, pattern: str = THREE_STEP, seed: int = 0,
                          iterations: int = 10_000) -> float:
    """Predicted latency of the best annealed conservative configuration."""
    cfg, leader = anneal(matrix, cons_cfg.t, pattern, seed=seed, iterations=iterations, members=cons_cfg.members)
    return predict(matrix, cfg, leader, pattern)


class WeightOptimizer(BaseEstimator):
    """Estimator-style wrapper: ``fit`` searches a matrix, ``predict`` scores matrices.

    After fitting, ``config_``, ``leader_`` and ``latency_`` hold the chosen
    configuration and its predicted consensus latency.
    """

    def __init__(self, t_eff=1, pattern=THREE_STEP, iterations=10_000, cooling=0.98, seed=0, members=None):
        self.t_eff = t_eff
        self.pattern = pattern
        self.iterations = iterations
        self.cooling = cooling
        self.seed = seed
        self.members = members

    def fit(self, X, y=None):
        X = _validate_matrix(X)
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        self.config_, self.leader_ = anneal(X, self.t_eff, self.pattern, self.seed, self.iterations,
                                            self.cooling, members=self.members)
        self.latency_ = predict(X, self.config_, self.leader_, self.pattern)
        self.n_replicas_ = self.config_.n
        return self

    def predict(self, X):
        """Predicted consensus latency of the fitted configuration on matrix ``X``."""
        if not hasattr(self, "config_"):
            raise NotFittedError("WeightOptimizer is not fitted yet")
        X = _validate_matrix(X)
        return predict(X, self.config_, self.leader_, self.pattern)

    def score(self, X, y=None):
        return -self.predict(X)


def _validate_matrix(X):
    if isinstance(X, LatencyMatrix):
        return X
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square latency matrix, got shape {arr.shape}")
    return LatencyMatrix([f"r{i}" for i in range(arr.shape[0])], arr)
