"""Correctable clients: one operation in flight, consistency levels refined as replies arrive."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .messages import LogAnswer, LogQuery, Panic, Reply, Request
from .process import CancelTimer, Emit, Send, SetTimer
from .quorum import WeightConfig, fast_threshold, optimal_threshold

LEVELS = ("pending", "first", "weak", "strong", "final")
RANK = {name: i for i, name in enumerate(LEVELS)}


class Correctable:
    """Result handle whose level only moves up; reaching a level also marks the ones below."""

    def __init__(self, client: int, seq: int, op: bytes, invoked_at: float):
        self.client = client
        self.seq = seq
        self.op = op
        self.invoked_at = invoked_at
        self.level = "pending"
        self.results = {}  # level -> result
        self.times = {}  # level -> time reached
        self._callbacks = {name: [] for name in LEVELS}

    def on(self, level: str, cb) -> None:
        if level not in RANK:
            raise ValueError(f"unknown level {level!r}")
        if RANK[self.level] >= RANK[level]:
            cb(self.results.get(level), self.times.get(level))
        else:
            self._callbacks[level].append(cb)

    def advance(self, level: str, result, now: float) -> list:
        """Move to ``level``; returns the newly reached level names (lowest first)."""
        if RANK[level] <= RANK[self.level]:
            return []
        reached = [LEVELS[i] for i in range(RANK[self.level] + 1, RANK[level] + 1)]
        for name in reached:
            self.results[name] = result
            self.times[name] = now
        self.level = level
        for name in reached:
            for cb in self._callbacks[name]:
                cb(result, now)
            self._callbacks[name] = []
        return reached

    @property
    def final(self) -> bool:
        return self.level == "final"

    def latency(self, level: str) -> Optional[float]:
        t = self.times.get(level)
        return None if t is None else t - self.invoked_at


def _valid_desc(desc, fast: bool) -> Optional[WeightConfig]:
    try:
        members, t_eff, high = desc
        n = len(members)
        expect = fast_threshold(optimal_threshold(n)) if fast else optimal_threshold(n)
        if t_eff != expect or len(high) != 2 * t_eff or not set(high) <= set(members):
            return None
        return WeightConfig.from_descriptor(desc)
    except (TypeError, ValueError, KeyError):
        return None


def classify(replicas, fast: bool, cfg: WeightConfig) -> str:
    """Highest level a group of matching replies supports."""
    rs = set(replicas) & set(cfg.members)
    if not rs:
        return "pending"
    w = cfg.weight_of(rs)
    if fast:
        if len(rs) >= cfg.n - cfg.t - 1:
            return "final"
        if w >= cfg.quorum_units:
            return "strong"
        if w >= cfg.weak_units:
            return "weak"
        return "first"
    return "final" if w >= cfg.quorum_units else "first"


@dataclass
class ClientParams:
    members: tuple
    region: int = 0
    think_max_ms: float = 1000.0
    keys: int = 4
    read_ratio: float = 0.3
    stop_at: float = 10_000.0
    max_ops: Optional[int] = None
    confirm_ms: float = 2000.0
    seed: int = 0


class Client:
    def __init__(self, cid: int, signer, verifier, params: ClientParams):
        self.id = cid
        self.signer = signer
        self.verifier = verifier
        self.p = params
        self.members = tuple(sorted(params.members))
        self.rng = random.Random(params.seed)
        self.seq = 0
        self.current: Optional[Correctable] = None
        self.request: Optional[Request] = None
        self.replies = {}  # replica -> latest Reply for current op
        self.answers = {}
        self.panicked = False
        self.done = []  # completed Correctables
        self._cfgs = {}
        self._exhausted_at = None

    def start(self, now: float) -> list:
        return [SetTimer(("think",), self.rng.uniform(0, self.p.think_max_ms))]

    @property
    def finished(self) -> bool:
        return self.current is None and self._exhausted_at is not None

    def _next_op(self) -> bytes:
        key = f"k{self.rng.randrange(self.p.keys)}"
        return (f"get {key}" if self.rng.random() < self.p.read_ratio else f"incr {key}").encode()

    def _invoke(self, now):
        if now >= self.p.stop_at or (self.p.max_ops is not None and self.seq >= self.p.max_ops):
            self._exhausted_at = now
            return [Emit("client_idle", {"client": self.id, "time": now})]
        self.seq += 1
        op = self._next_op()
        req = Request(self.id, self.seq, op)
        req = Request(req.client, req.seq, req.op, self.signer.attest(req.signed_bytes()))
        self.request = req
        self.current = Correctable(self.id, self.seq, op, now)
        self.replies = {}
        self.answers = {}
        self.panicked = False
        out = [Send(m, req) for m in self.members]
        out.append(SetTimer(("confirm", self.seq), self.p.confirm_ms))
        out.append(Emit("invoke", {"client": self.id, "seq": self.seq, "op": op, "time": now}))
        return out

    def on_timer(self, key, now: float) -> list:
        if key[0] == "think":
            return self._invoke(now)
        if key[0] == "confirm" and self.current is not None and key[1] == self.current.seq:
            out = [Send(m, LogQuery(self.id, self.current.seq)) for m in self.members]
            out.append(SetTimer(key, self.p.confirm_ms))
            return out
        return []

    def on_message(self, src: int, msg, now: float) -> list:
        if isinstance(msg, Reply):
            return self._on_reply(msg, now)
        if isinstance(msg, LogAnswer):
            return self._on_answer(msg, now)
        return []

    def _cfg(self, desc, fast):
        key = (desc, fast)
        if key not in self._cfgs:
            self._cfgs[key] = _valid_desc(desc, fast)
        return self._cfgs[key]

    def _on_reply(self, r: Reply, now):
        cur = self.current
        if cur is None or (r.client, r.seq) != (self.id, cur.seq) or not r.verify(self.verifier):
            return []
        if r.replica != r.sig.signer:
            return []
        self.replies[r.replica] = r
        out = []
        if cur.level == "pending":
            out += self._advance("first", r.result, now)
        groups = {}
        for rep in self.replies.values():
            groups.setdefault((rep.result, rep.fast, rep.cfg_desc), set()).add(rep.replica)
        best = None
        for (res, fast, desc), reps in sorted(groups.items(), key=lambda kv: repr(kv[0])):
            cfg = self._cfg(desc, fast)
            if cfg is None:
                continue
            lvl = classify(reps, fast, cfg)
            if best is None or RANK[lvl] > RANK[best[0]]:
                best = (lvl, res, desc)
        if best is not None and RANK[best[0]] > RANK[cur.level]:
            out += self._advance(best[0], best[1], now, best[2])
        if not self.panicked and self.current is cur and not cur.final:
            fast_results = {rep.result for rep in self.replies.values() if rep.fast}
            if len(fast_results) > 1:
                self.panicked = True
                p = Panic(self.id, cur.seq, tuple(rep for rep in self.replies.values() if rep.fast))
                out += [Send(m, p) for m in self.members]
                out.append(Emit("client_panic", {"client": self.id, "seq": cur.seq, "time": now}))
        return out

    def _on_answer(self, a: LogAnswer, now):
        cur = self.current
        if cur is None or (a.client, a.seq) != (self.id, cur.seq) or a.replica not in self.members:
            return []
        if not a.verify(self.verifier):
            return []
        self.answers[a.replica] = a
        t = optimal_threshold(len(self.members))
        groups = {}
        absent = 0
        for ans in self.answers.values():
            if ans.result is None:
                absent += 1
                continue
            groups.setdefault((ans.instance, ans.result), []).append(ans)
        for (inst, res), group in sorted(groups.items(), key=lambda kv: repr(kv[0])):
            covered = sum(1 for g in group if g.stable_upto >= inst)
            if covered >= t + 1:
                return self._advance("final", res, now, group[0].cfg_desc, via="log")
            by_mode = {}
            for g in group:
                by_mode.setdefault((g.fast, g.cfg_desc), set()).add(g.replica)
            for (fast, desc), reps in by_mode.items():
                cfg = self._cfg(desc, fast)
                if cfg is not None and classify(reps, fast, cfg) == "final":
                    return self._advance("final", res, now, desc, via="log")
        if absent >= len(self.members) - t:
            self.answers = {}
            return [Send(m, self.request) for m in self.members]
        return []

    def _advance(self, level, result, now, desc=None, via="reply"):
        cur = self.current
        reached = cur.advance(level, result, now)
        out = [Emit("client_level", {"client": self.id, "seq": cur.seq, "level": name, "time": now,
                                     "result": result}) for name in reached]
        if cur.final:
            if desc is not None and tuple(desc[0]) != self.members and desc[0]:
                self.members = tuple(sorted(desc[0]))
            out.append(Emit("op_final", {"client": self.id, "seq": cur.seq, "op": cur.op, "invoke": cur.invoked_at,
                                         "time": now, "result": result, "via": via}))
            out.append(CancelTimer(("confirm", cur.seq)))
            self.done.append(cur)
            self.current = None
            out.append(SetTimer(("think",), self.rng.uniform(0, self.p.think_max_ms)))
        return out
