"""Discrete-event WAN simulator driving replicas and clients.

Events are ordered by (time, sender id, per-sender sequence number), which
makes runs reproducible for a given seed.  Links are FIFO: a message never
overtakes an earlier one on the same (sender, receiver) pair.  Replica ``i``
sits at matrix row ``i``; clients sit at the region index they are given.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from ..auth import KeyRing
from ..client import Client, ClientParams
from ..optimizer import anneal, initial_config, predict
from ..process import CancelTimer, Emit, Send, SetTimer
from ..quorum import fast_threshold, optimal_threshold
from ..replica import Replica, ReplicaParams
from .adversary import Coalition, EquivocatingReplica, FakePanicClient
from .matrix import WORLD51_CITIES, LatencyMatrix, data_path, geo_matrix, random_metric_matrix
from .scenario import Scenario, ScenarioError

CLIENT_BASE = 1000
DIRECTIVE_SRC = -1


def load_matrix(spec: str, n=None) -> LatencyMatrix:
    """``aws21``, ``world51``, ``uniform:N:ms``, ``synthetic:N:seed`` or a CSV path (one-way ms)."""
    if spec == "aws21":
        m = LatencyMatrix.load(data_path("aws21_rtt.csv"), rtt=True)
    elif spec == "world51":
        m = geo_matrix(WORLD51_CITIES)
    elif spec.startswith("uniform:"):
        _, size, ms = spec.split(":")
        m = LatencyMatrix.uniform(int(size), float(ms))
    elif spec.startswith("synthetic:"):
        _, size, seed = spec.split(":")
        m = random_metric_matrix(int(size), np.random.default_rng(int(seed)))
    else:
        m = LatencyMatrix.load(spec)
    if n is not None and n != m.n:
        if n > m.n:
            raise ValueError(f"matrix {spec!r} has {m.n} sites, scenario asks for {n}")
        m = m.submatrix(list(range(n)))
    return m


class Monitor:
    """Latency measurements shared by replicas; used to compute optimize directives."""

    def __init__(self, sim):
        self.sim = sim
        self._cache = {}

    def measured(self) -> LatencyMatrix:
        return self.sim.replica_matrix()

    def delay(self, a, b) -> float:
        """Measured one-way delay between two replicas."""
        return float(self.sim.matrix.delays[a, b]) * self.sim.slow.get((a, b), 1.0)

    def optimize(self, members, t, t_fast, pattern):
        m = self.measured()
        key = (hash(m), tuple(members), pattern, self.sim.fast_enabled)
        if key not in self._cache:
            self._cache[key] = self.sim.optimize_configs(m, members, t, t_fast, pattern)
        return self._cache[key]


@dataclass
class Trace:
    scenario: Scenario
    consensus: list = field(default_factory=list)
    timeline: list = field(default_factory=list)
    ops: list = field(default_factory=list)  # Correctable objects (final or not)
    client_regions: dict = field(default_factory=dict)
    pocs: list = field(default_factory=list)  # (time, replica, culprits, ProofOfCulpability)
    end_time: float = 0.0
    events: int = 0
    replicas: dict = field(default_factory=dict)
    clients: dict = field(default_factory=dict)
    correct: frozenset = frozenset()
    adversaries: frozenset = frozenset()
    coalition: object = None
    predicted: dict = field(default_factory=dict)
    verifier: object = None


def validate(sc: Scenario, n: int):
    """Reject directives that name unknown replicas or an oversized coalition."""
    t = optimal_threshold(n)
    coal = [d for d in sc.directives if d.kind == "equivocate_coalition"]
    if len(coal) > 1:
        raise ScenarioError(coal[1].line, "only one equivocate_coalition directive is supported")
    for d in sc.directives:
        bad = [x for x in d.targets if not 0 <= x < n]
        if bad:
            raise ScenarioError(d.line, f"{d.kind} targets unknown replica(s) {bad} (n={n})")
        if d.kind == "equivocate_coalition":
            size = len(set(d.targets)) or d.size
            if size > t:
                raise ScenarioError(d.line, f"equivocate_coalition of {size} exceeds t={t}")


class Simulation:
    def __init__(self, scenario: Scenario, matrix: LatencyMatrix = None):
        self.sc = scenario
        self.matrix = matrix if matrix is not None else load_matrix(scenario.matrix, scenario.n)
        self.n = scenario.n or self.matrix.n
        if self.n > self.matrix.n:
            raise ValueError("more replicas than matrix sites")
        if self.n < 4:
            raise ValueError("need at least 4 replicas")
        self.fast_enabled = scenario.variant == "flash"
        self.now = 0.0
        self.heap = []
        self.seq = {}
        self.last_arrival = {}
        self.timer_gen = {}
        self.crashed = set()
        self.silent = set()
        self.drops = []  # (targets, until)
        self.slow = {}  # (i, j) -> factor, replica pairs
        self.gst_until = None
        self.gst_factor = 1.0
        self.rng = np.random.default_rng(scenario.seed)
        self._link_rngs = {}
        self.trace = Trace(scenario)
        self.coalition = None
        validate(scenario, self.n)
        self._build()

    # setup -----------------------------------------------------------------

    def replica_matrix(self) -> LatencyMatrix:
        m = self.matrix.submatrix(list(range(self.n))) if self.matrix.n != self.n else self.matrix
        if self.slow:
            m = m.with_link_factors(self.slow)
        return m

    def optimize_configs(self, m, members, t, t_fast, pattern):
        it = self.sc.anneal_iterations
        seed = self.sc.seed
        cons_cfg, cons_leader = anneal(m, t, pattern, seed=seed, iterations=it, members=members)
        expectation = predict(m, cons_cfg, cons_leader, pattern)
        if self.fast_enabled:
            fast_cfg, fast_leader = anneal(m, t_fast, pattern, seed=seed + 1, iterations=it, members=members)
        else:
            fast_cfg, fast_leader = cons_cfg, cons_leader
        return cons_cfg, cons_leader, fast_cfg, fast_leader, expectation

    def _build(self):
        sc = self.sc
        members = tuple(range(self.n))
        t = optimal_threshold(self.n)
        t_fast = fast_threshold(t)
        rm = self.replica_matrix()
        base_cfg, base_leader = initial_config(self.n, t)
        if sc.variant == "conservative_only" or not sc.optimize_initial:
            cons_cfg, cons_leader = base_cfg, base_leader
            fast_cfg, fast_leader = initial_config(self.n, t_fast)
            _, _, _, _, expectation = self.optimize_configs(rm, members, t, t_fast, sc.pattern) \
                if self.fast_enabled else (None,) * 5
        else:
            cons_cfg, cons_leader, fast_cfg, fast_leader, expectation = self.optimize_configs(
                rm, members, t, t_fast, sc.pattern)
        pred_cons = predict(rm, cons_cfg, cons_leader, sc.pattern)
        self.trace.predicted = {"conservative": pred_cons,
                                "fast": predict(rm, fast_cfg, fast_leader, sc.pattern) if self.fast_enabled
                                else None, "expectation": expectation}
        timer = sc.timer_ms if sc.timer_ms is not None else max(500.0, 2 * pred_cons)
        sync_timeout = sc.sync_timeout_ms if sc.sync_timeout_ms is not None else 4 * timer
        params = ReplicaParams(
            members=members, theta=sc.theta, checkpoint_interval=sc.checkpoint, timer_ms=timer,
            pattern=sc.pattern, fast_enabled=self.fast_enabled,
            optimize_every=sc.optimize_every if sc.variant != "conservative_only" else 0,
            cons_ranking=tuple(cons_cfg.ranking), cons_leader=cons_leader,
            fast_ranking=tuple(fast_cfg.ranking), fast_leader=fast_leader if self.fast_enabled else None,
            expectation_ms=expectation, watchdog_window=sc.watchdog_window, sync_timeout_ms=sync_timeout)
        self.params = params
        self.monitor = Monitor(self)

        client_regions = sc.clients if sc.clients is not None else tuple(range(self.n))
        for r in client_regions:
            if not 0 <= r < self.matrix.n:
                raise ValueError(f"client region {r} outside the matrix")
        cids = [CLIENT_BASE + k for k in range(len(client_regions))]
        fake = [d for d in sc.directives if d.kind == "fake_panic"]
        fake_ids = [CLIENT_BASE + len(cids) + k for k in range(len(fake))]
        self.ring = KeyRing(sc.seed, principals=list(members) + cids + fake_ids)
        verifier = self.ring.verifier()
        self.trace.verifier = verifier

        coal_dirs = [d for d in sc.directives if d.kind == "equivocate_coalition"]
        coalition_ids = set()
        if coal_dirs:
            d = coal_dirs[0]
            coalition_ids = set(d.targets) if d.targets else self._pick_coalition(d.size, fast_cfg, fast_leader)
            self.coalition = Coalition(frozenset(coalition_ids), d.at, d.after)
        self.procs = {}
        self.position = {}
        for i in members:
            if i in coalition_ids:
                rep = EquivocatingReplica(i, self.ring.signer(i), verifier, params, self.monitor,
                                          coalition=self.coalition)
            else:
                rep = Replica(i, self.ring.signer(i), verifier, params, self.monitor)
            self.procs[i] = rep
            self.position[i] = i
        for cid, region in zip(cids, client_regions):
            k = cid - CLIENT_BASE
            cp = ClientParams(members=members, region=region, think_max_ms=sc.think_max_ms, keys=sc.keys,
                              read_ratio=sc.read_ratio, stop_at=sc.duration_ms,
                              confirm_ms=max(4 * timer, 2000.0), seed=sc.seed * 7919 + k)
            self.procs[cid] = Client(cid, self.ring.signer(cid), verifier, cp)
            self.position[cid] = region
            self.trace.client_regions[cid] = region
        for fid, d in zip(fake_ids, fake):
            self.procs[fid] = FakePanicClient(fid, members, d.at)
            self.position[fid] = 0
        self.client_ids = cids
        adversaries = set(coalition_ids)
        for d in sc.directives:
            if d.kind in ("crash", "silent"):
                adversaries |= set(d.targets)
        self.trace.adversaries = frozenset(adversaries)
        self.trace.correct = frozenset(set(members) - adversaries)
        self.trace.coalition = self.coalition
        for d in sc.directives:
            if d.kind != "equivocate_coalition":
                self._push(d.at, DIRECTIVE_SRC, "directive", d)

    def _pick_coalition(self, size, fast_cfg, fast_leader):
        """Fast leader plus seeded picks, high-weight replicas first."""
        rng = np.random.default_rng(self.sc.seed + 17)
        high = sorted(m for m in fast_cfg.high if m != fast_leader)
        low = sorted(m for m in fast_cfg.members if m not in fast_cfg.high and m != fast_leader)
        picks = list(rng.permutation(high)) + list(rng.permutation(low))
        return {fast_leader} | {int(x) for x in picks[: size - 1]}

    # event queue -------------------------------------------------------------

    def _push(self, time, src, kind, payload):
        s = self.seq.get(src, 0)
        self.seq[src] = s + 1
        heapq.heappush(self.heap, (time, src, s, kind, payload))

    def _link_rng(self, a, b):
        key = (a, b)
        r = self._link_rngs.get(key)
        if r is None:
            r = np.random.default_rng([self.sc.seed, a + 10_000, b + 10_000])
            self._link_rngs[key] = r
        return r

    def delay(self, src, dst) -> float:
        a, b = self.position[src], self.position[dst]
        d = float(self.matrix.delays[a, b])
        if src < CLIENT_BASE and dst < CLIENT_BASE:
            d *= self.slow.get((src, dst), 1.0)
        if self.sc.jitter and d > 0:
            z = self._link_rng(src, dst).normal(0.0, self.sc.jitter_sigma)
            d *= 1.0 + min(max(z, -2 * self.sc.jitter_sigma), 3 * self.sc.jitter_sigma)
        if self.gst_until is not None and self.now < self.gst_until and d > 0:
            d *= float(self._link_rng(src, -dst - 1).uniform(1.0, self.gst_factor))
        return d

    def _dropped(self, src, dst):
        for targets, until in self.drops:
            if self.now < until and (src in targets or dst in targets):
                return True
        return False

    def send(self, src, dst, msg):
        if src in self.crashed or src in self.silent or dst in self.crashed:
            return
        if dst not in self.procs or self._dropped(src, dst):
            return
        arrival = self.now + self.delay(src, dst)
        key = (src, dst)
        arrival = max(arrival, self.last_arrival.get(key, 0.0))
        self.last_arrival[key] = arrival
        self._push(arrival, src, "msg", (dst, msg))

    def apply(self, pid, actions):
        for a in actions:
            if isinstance(a, Send):
                self.send(pid, a.dst, a.msg)
            elif isinstance(a, SetTimer):
                gen = self.timer_gen.get((pid, a.key), 0) + 1
                self.timer_gen[(pid, a.key)] = gen
                self._push(self.now + a.delay, pid, "timer", (pid, a.key, gen))
            elif isinstance(a, CancelTimer):
                self.timer_gen[(pid, a.key)] = self.timer_gen.get((pid, a.key), 0) + 1
            elif isinstance(a, Emit):
                self._record(pid, a)

    def _record(self, pid, e: Emit):
        d = e.data
        if e.kind == "consensus":
            self.trace.consensus.append(d)
        elif e.kind == "poc":
            self.trace.pocs.append((self.now, pid, d["culprits"], d.get("poc")))
            self.trace.timeline.append((self.now, pid, "poc", " ".join(map(str, d["culprits"]))))
        elif e.kind in ("client_level", "invoke", "op_final", "client_idle"):
            return
        else:
            detail = " ".join(f"{k}={d[k]}" for k in sorted(d) if k != "replica")
            self.trace.timeline.append((self.now, pid, e.kind, detail))

    def _directive(self, d):
        self.trace.timeline.append((self.now, DIRECTIVE_SRC, "directive:" + d.kind,
                                    " ".join(map(str, d.targets))))
        if d.kind == "crash":
            self.crashed |= set(d.targets)
        elif d.kind == "silent":
            self.silent |= set(d.targets)
        elif d.kind == "slow_link":
            i, j = d.targets
            self.slow[(i, j)] = self.slow[(j, i)] = d.factor
        elif d.kind == "drop":
            self.drops.append((frozenset(d.targets), d.until if d.until is not None else math.inf))
        elif d.kind == "gst":
            self.gst_until, self.gst_factor = d.until, d.factor

    # main loop ---------------------------------------------------------------

    def clients_done(self):
        return all(self.procs[c].finished for c in self.client_ids)

    def run(self) -> Trace:
        sc = self.sc
        limit = sc.max_time_ms if sc.max_time_ms is not None else sc.duration_ms * 3 + 30_000
        for pid in sorted(self.procs):
            self.apply(pid, self.procs[pid].start(0.0))
        events = 0
        while self.heap:
            time, src, _, kind, payload = heapq.heappop(self.heap)
            if time > limit:
                break
            self.now = time
            events += 1
            if kind == "msg":
                dst, msg = payload
                if dst in self.crashed:
                    continue
                self.apply(dst, self.procs[dst].on_message(src, msg, time))
            elif kind == "timer":
                pid, key, gen = payload
                if self.timer_gen.get((pid, key)) != gen or pid in self.crashed:
                    continue
                self.apply(pid, self.procs[pid].on_timer(key, time))
            elif kind == "directive":
                self._directive(payload)
            if time >= sc.duration_ms and self.clients_done():
                break
        tr = self.trace
        tr.end_time = self.now
        tr.events = events
        tr.replicas = {i: p for i, p in self.procs.items() if i < CLIENT_BASE}
        tr.clients = {c: self.procs[c] for c in self.client_ids}
        for c in self.client_ids:
            cl = self.procs[c]
            tr.ops.extend(cl.done)
            if cl.current is not None:
                tr.ops.append(cl.current)
        return tr


def simulate(scenario: Scenario, matrix: LatencyMatrix = None) -> Trace:
    return Simulation(scenario, matrix).run()
