"""Scripted Byzantine behaviour: an equivocating coalition and a client that fakes panics."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..messages import PROPOSE, Batch, ConsensusMessage, Panic, Reply
from ..messages import vote as make_vote
from ..process import Emit, Send, SetTimer
from ..replica import Replica


@dataclass
class Coalition:
    """Shared plan of the colluding replicas."""

    members: frozenset
    start: float
    after: str = "correct"
    plan: dict = field(default_factory=dict)  # (instance, regency) -> (v, v2, camp_a, camp_b)
    done: bool = False
    inert: bool = False
    equivocated_at: float = None
    camps: tuple = ()


def split_camps(cfg, coalition):
    """Greedy split of correct replicas into two camps that each reach a quorum with the coalition."""
    coal = set(coalition) & set(cfg.members)
    need = cfg.quorum_units - cfg.weight_of(coal)
    correct = sorted((m for m in cfg.members if m not in coal), key=lambda m: (-cfg.weight(m), m))
    a, b = [], []
    wa = wb = 0
    for m in correct:
        if wa < need:
            a.append(m)
            wa += cfg.weight(m)
        elif wb < need:
            b.append(m)
            wb += cfg.weight(m)
        else:
            a.append(m)
    if wa < need or wb < need or not b:
        return None
    return frozenset(a), frozenset(b)


class EquivocatingReplica(Replica):
    """Replica that, once armed, proposes/votes two values to two camps in one fast instance."""

    def __init__(self, *args, coalition: Coalition = None, **kw):
        super().__init__(*args, **kw)
        self.coalition = coalition
        self._now = 0.0

    def on_message(self, src, msg, now):
        self._now = now
        if self._muted():
            return []
        return super().on_message(src, msg, now)

    def on_timer(self, key, now):
        self._now = now
        if self._muted():
            return []
        return super().on_timer(key, now)

    def _muted(self):
        c = self.coalition
        return c is not None and c.done and c.after == "silent"

    def _proposal_actions(self, slot, batch):
        c = self.coalition
        if c is None or c.done or c.inert or self._now < c.start or not self.mode.fast:
            return super()._proposal_actions(slot, batch)
        camps = split_camps(self.config(), c.members)
        if camps is None:
            c.inert = True
            return super()._proposal_actions(slot, batch)
        a, b = camps
        v2 = Batch(batch.requests[1:], batch.directive, batch.nonce + 1)
        c.plan[(slot.instance, slot.regency)] = (batch, v2, a | c.members, b)
        c.camps = (tuple(sorted(a)), tuple(sorted(b)))
        c.equivocated_at = self._now
        out = []
        for camp, val in ((a | c.members, batch), (b, v2)):
            msg = ConsensusMessage(PROPOSE, slot.instance, slot.regency, val.digest, self.id, batch=val)
            out += [Send(m, msg) for m in self.members if m in camp]
        out.append(Emit("equivocate", {"replica": self.id, "instance": slot.instance,
                                       "camp_a": c.camps[0], "camp_b": c.camps[1]}))
        return out

    def _vote_actions(self, kind, instance, regency, value_digest, targets):
        c = self.coalition
        plan = c.plan.get((instance, regency)) if c is not None else None
        if plan is None or value_digest != plan[0].digest:
            return super()._vote_actions(kind, instance, regency, value_digest, targets)
        v, v2, camp_a, camp_b = plan
        out = []
        va = make_vote(self.signer, kind, instance, regency, v.digest)
        vb = make_vote(self.signer, kind, instance, regency, v2.digest)
        for m in targets:
            out.append(Send(m, vb if m in camp_b else va))
        return out

    def _decide(self, slot, proof, now):
        c = self.coalition
        if c is not None and (slot.instance, slot.regency) in c.plan:
            c.done = True
        return super()._decide(slot, proof, now)


class FakePanicClient:
    """Byzantine client that sends fabricated panics carrying unsigned replies."""

    def __init__(self, cid: int, members, at: float, victim_seq: int = 1):
        self.id = cid
        self.members = tuple(members)
        self.at = at
        self.victim_seq = victim_seq
        self.finished = True
        self.done = []
        self.current = None

    def start(self, now):
        return [SetTimer(("panic",), max(0.0, self.at - now))]

    def on_timer(self, key, now):
        fake = tuple(Reply(m, self.id, self.victim_seq, True, str(m).encode(), ((), 0, ()), 1)
                     for m in self.members[:2])
        p = Panic(self.id, self.victim_seq, fake)
        return [Send(m, p) for m in self.members] + [Emit("fake_panic", {"client": self.id})]

    def on_message(self, src, msg, now):
        return []
