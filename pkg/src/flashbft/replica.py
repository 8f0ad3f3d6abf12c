"""Replica state machine: normal case, checkpoints, abort/synchronization, audits.

A replica is a passive object driven by :meth:`Replica.on_message` and
:meth:`Replica.on_timer`; both return a list of actions (see ``process``).
At most one consensus instance is outstanding.  Mode is derived from the
number of decisions since the regency was installed, so every correct
replica switches to fast mode at the same instance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .forensics import Audit, compare_logs, panic_camps, verify_poc
from .messages import (ACCEPT, DECIDE, PRECOMMIT, PROPOSE, QC, WRITE, Batch, Checkpoint, ConsensusMessage,
                       DecisionProof, Forward, LogAnswer, LogEntry, LogQuery, LogRequest, LogResponse, Panic,
                       PocMessage, PreparedCert, Reply, Request, StableCheckpoint, Stop, StopData, Sync, sign_log,
                       vote)
from .modes import (ABORT, JOIN, LATENCY, MODE_SWITCH, OPTIMIZE, RECONFIGURE, ROLLBACK, SYNC_END, SYNC_START,
                    TIMER_EXPIRED, VALID_POC, LatencyWatchdog, ModeState, config_for, leader_of, merge_history,
                    needs_forensics, reranked, shrink_membership)
from .optimizer import SEVEN_STEP, THREE_STEP
from .process import CancelTimer, Emit, Send, SetTimer
from .quorum import fast_threshold, optimal_threshold
from .service import KVService


@dataclass
class ReplicaParams:
    members: tuple
    theta: int = 1000
    checkpoint_interval: int = 16
    timer_ms: float = 500.0
    pattern: str = THREE_STEP
    fast_enabled: bool = True
    optimize_every: int = 0  # 0 disables the optimize directive
    cons_ranking: Optional[tuple] = None
    cons_leader: Optional[int] = None
    fast_ranking: Optional[tuple] = None
    fast_leader: Optional[int] = None
    expectation_ms: Optional[float] = None
    watchdog_window: int = 32
    max_batch: int = 256
    sync_timeout_ms: float = 2000.0


class _Slot:
    """Per-(instance, regency) agreement state."""

    def __init__(self, instance: int, regency: int, fast: bool):
        self.instance = instance
        self.regency = regency
        self.fast = fast
        self.proposal: Optional[Batch] = None
        self.recv_at = None
        self.votes = {WRITE: {}, PRECOMMIT: {}, ACCEPT: {}}  # kind -> digest -> {sender: msg}
        self.sent = set()
        self.qc_sent = set()
        self.prepared: Optional[PreparedCert] = None
        self.started_at = None  # leader only

    def add_vote(self, msg) -> dict:
        bucket = self.votes[msg.kind].setdefault(msg.value_digest, {})
        bucket.setdefault(msg.sender, msg)
        return bucket


class Replica:
    def __init__(self, rid: int, signer, verifier, params: ReplicaParams, monitor=None):
        self.id = rid
        self.signer = signer
        self.verifier = verifier
        self.p = params
        self.monitor = monitor
        self.svc = KVService()
        self.svc.members = tuple(sorted(params.members))
        self._set_members(self.svc.members)
        ident = tuple(self.members)
        self.cons_ranking = tuple(params.cons_ranking or ident)
        self.fast_ranking = tuple(params.fast_ranking or self.cons_ranking)
        self.regency = 0
        self.reg_leader = params.cons_leader if params.cons_leader is not None else self.members[0]
        self.cons_leader_opt = params.cons_leader
        self.fast_leader_opt = params.fast_leader
        self.expectation = params.expectation_ms
        self.reoptimize = False
        self.mode = ModeState(theta=params.theta, enabled=params.fast_enabled)
        self.watchdog = LatencyWatchdog(params.watchdog_window)
        self.k = params.checkpoint_interval
        self.last = 0
        self.log = {}
        genesis = self.svc.snapshot()
        self.stable = StableCheckpoint(0, self.svc.state_digest(), genesis, ())
        self.own_ckpts = {}  # instance -> (digest, snapshot)
        self.ckpt_votes = {}  # instance -> {replica: Checkpoint}
        self.exec_meta = {}  # (client, seq) -> (instance, fast, cfg_desc)
        self.pending = {}  # (client, seq) -> Request, insertion ordered
        self.req_stage = {}
        self.slot: Optional[_Slot] = None
        self.buffer = []
        self.queue = []  # batches the leader must propose before client requests
        self.stops_sent = set()
        self.syncing = False
        self.unsynced_fast = False
        self.sync_failures = 0
        self.stopdata = {}  # regency -> {replica: StopData}
        self.sync_sent = set()
        self.extra_expired = set()
        self.known_pocs = {}  # frozenset culprits -> poc
        self.audits = {}
        self.panics_seen = set()
        self.removed = False
        self._cfg_cache = {}

    # configuration -------------------------------------------------------

    def _set_members(self, members):
        self.members = tuple(sorted(members))
        self.n = len(self.members)
        self.t = optimal_threshold(self.n)
        self.t_fast = fast_threshold(self.t)

    def cons_config(self):
        return self._config(self.t, self.cons_ranking)

    def fast_config(self):
        return self._config(self.t_fast, self.fast_ranking)

    def _config(self, t_eff, ranking):
        key = (self.members, t_eff, tuple(ranking))
        cfg = self._cfg_cache.get(key)
        if cfg is None:
            cfg = config_for(self.members, t_eff, ranking)
            self._cfg_cache[key] = cfg
        return cfg

    def config(self):
        return self.fast_config() if self.mode.fast else self.cons_config()

    @property
    def leader(self) -> int:
        opt = self.fast_leader_opt if self.mode.fast else self.cons_leader_opt
        if opt is not None and opt in self.members:
            return opt
        if self.reg_leader in self.members:
            return self.reg_leader
        return leader_of(self.regency, self.members)

    @property
    def is_leader(self) -> bool:
        return self.leader == self.id

    def timer_ms(self):
        return self.p.timer_ms

    # helpers -------------------------------------------------------------

    def _bcast(self, msg, targets=None):
        return [Send(m, msg) for m in (self.members if targets is None else targets)]

    def _vote_actions(self, kind, instance, regency, value_digest, targets):
        """Sign and send one vote; Byzantine subclasses override this."""
        return self._bcast(vote(self.signer, kind, instance, regency, value_digest), targets)

    def _proposal_actions(self, slot, batch):
        msg = ConsensusMessage(PROPOSE, slot.instance, slot.regency, batch.digest, self.id, batch=batch)
        return self._bcast(msg)

    # entry points ----------------------------------------------------------

    def on_message(self, src: int, msg, now: float) -> list:
        if self.removed:
            return []
        if isinstance(msg, ConsensusMessage):
            return self._on_consensus(msg, now)
        handler = self._handlers.get(type(msg))
        if handler is None:
            return []
        return handler(self, src, msg, now)

    def on_timer(self, key, now: float) -> list:
        if self.removed:
            return []
        kind = key[0]
        if kind == "req":
            return self._on_request_timer(key, now)
        if kind == "sync":
            return self._on_sync_timer(key[1], now)
        if kind == "extra":
            self.extra_expired.add(key[1])
            return self._maybe_send_sync(key[1], now)
        return []

    def start(self, now: float) -> list:
        return []

    # requests ------------------------------------------------------------

    def _on_request(self, src, req: Request, now):
        if not isinstance(req, Request) or not req.verify(self.verifier):
            return []
        out = []
        if self.svc.executed(req.key):
            meta = self.exec_meta.get(req.key)
            if meta is not None:
                out.append(self._reply(req.client, req.seq, self.svc.replies[req.key], *meta))
            return out
        if req.key not in self.pending:
            self.pending[req.key] = req
            self.req_stage[req.key] = 0
            out.append(SetTimer(("req",) + req.key, self.timer_ms()))
        out += self._maybe_propose(now)
        return out

    def _on_forward(self, src, fwd: Forward, now):
        return self._on_request(src, fwd.request, now)

    def _on_request_timer(self, key, now):
        rkey = key[1:]
        if self.svc.executed(rkey) or rkey not in self.pending:
            return []
        if self.syncing:
            return [SetTimer(key, self.timer_ms())]
        stage = self.req_stage.get(rkey, 0)
        self.req_stage[rkey] = stage + 1
        if stage == 0:
            out = [SetTimer(key, self.timer_ms())]
            if not self.is_leader:
                out.append(Send(self.leader, Forward(self.id, self.pending[rkey])))
            return out
        return self.request_abort(TIMER_EXPIRED, now)

    # normal case -----------------------------------------------------------

    def _maybe_propose(self, now):
        if not self.is_leader or self.syncing or self.removed:
            return []
        inst = self.last + 1
        if self.slot is not None and self.slot.instance == inst and self.slot.regency == self.regency \
                and self.slot.proposal is not None:
            return []
        if (self.regency + 1) in self.stops_sent:
            return []
        if self.queue:
            batch = self.queue.pop(0)
        else:
            if not self.pending:
                return []
            reqs = tuple(list(self.pending.values())[: self.p.max_batch])
            batch = Batch(reqs, self._optimize_directive(inst), 0)
        slot = self._slot_for(inst)
        slot.started_at = now
        return self._proposal_actions(slot, batch)

    def _optimize_directive(self, inst):
        every = self.p.optimize_every
        if self.monitor is None:
            return None
        if not self.reoptimize and (not every or inst % every):
            return None
        self.reoptimize = False
        res = self.monitor.optimize(self.members, self.t, self.t_fast, self.p.pattern)
        if res is None:
            return None
        cons_cfg, cons_leader, fast_cfg, fast_leader, expectation = res
        return ("optimize", tuple(cons_cfg.ranking), cons_leader, tuple(fast_cfg.ranking), fast_leader,
                float(expectation))

    def _slot_for(self, inst):
        if self.slot is None or self.slot.instance != inst or self.slot.regency != self.regency:
            self.slot = _Slot(inst, self.regency, self.mode.fast)
        return self.slot

    def _on_consensus(self, msg: ConsensusMessage, now):
        if msg.regency < self.regency or msg.instance <= self.last:
            return []
        if msg.regency > self.regency or msg.instance > self.last + 1 or self.syncing:
            self.buffer.append(msg)
            return []
        if msg.sender not in self.members:
            return []
        slot = self._slot_for(msg.instance)
        if msg.kind == PROPOSE:
            return self._on_propose(slot, msg, now)
        if msg.kind in (WRITE, PRECOMMIT, ACCEPT):
            if not msg.verify(self.verifier):
                return []
            slot.add_vote(msg)
            return self._progress(slot, now)
        if msg.kind == QC:
            return self._on_qc(slot, msg, now)
        if msg.kind == DECIDE:
            return self._on_decide_msg(slot, msg, now)
        return []

    def _valid_batch(self, batch: Batch, sender) -> bool:
        for r in batch.requests:
            if not r.verify(self.verifier) or self.svc.executed(r.key):
                return False
        d = batch.directive
        if d is None:
            return True
        if d[0] == "reconfigure":
            _, culprits, poc = d
            got = verify_poc(poc, self.verifier)
            return got is not None and tuple(sorted(got)) == tuple(culprits)
        if d[0] == "optimize":
            return sender == self.leader and len(d) == 6
        return False

    def _on_propose(self, slot, msg, now):
        if msg.sender != self.leader or slot.proposal is not None or msg.batch is None:
            return []
        if msg.batch.digest != msg.value_digest:
            return []
        if not self._valid_batch(msg.batch, msg.sender):
            d = msg.batch.directive
            if d is not None and d[0] == "reconfigure":
                return self.request_abort(VALID_POC, now, force=True)
            return []
        slot.proposal = msg.batch
        slot.recv_at = now
        d = msg.value_digest
        if self.p.pattern == SEVEN_STEP:
            out = self._vote_actions(WRITE, slot.instance, slot.regency, d, [self.leader])
        else:
            out = self._vote_actions(WRITE, slot.instance, slot.regency, d, self.members)
        slot.sent.add(WRITE)
        return out + self._progress(slot, now)

    def _weight(self, bucket):
        return self.config().weight_of(bucket.keys())

    def _progress(self, slot, now):
        if slot.proposal is None:
            return []
        d = slot.proposal.digest
        q = self.config().quorum_units
        if self.p.pattern == SEVEN_STEP:
            if not self.is_leader:
                return []
            out = []
            for phase, kind in ((1, WRITE), (2, PRECOMMIT)):
                bucket = slot.votes[kind].get(d, {})
                if phase not in slot.qc_sent and self._weight(bucket) >= q:
                    slot.qc_sent.add(phase)
                    qc = ConsensusMessage(QC, slot.instance, slot.regency, d, self.id,
                                          votes=tuple(bucket.values()), phase=phase)
                    out += self._bcast(qc)
            accepts = slot.votes[ACCEPT].get(d, {})
            if self._weight(accepts) >= q:
                proof = self._proof(slot, accepts)
                dec = ConsensusMessage(DECIDE, slot.instance, slot.regency, d, self.id,
                                       votes=proof.accepts, phase=3)
                out += [Send(m, dec) for m in self.members if m != self.id]
                out += self._decide(slot, proof, now)
            return out
        out = []
        writes = slot.votes[WRITE].get(d, {})
        if ACCEPT not in slot.sent and self._weight(writes) >= q:
            slot.prepared = PreparedCert(slot.instance, slot.regency, slot.proposal, tuple(writes.values()))
            slot.sent.add(ACCEPT)
            out += self._vote_actions(ACCEPT, slot.instance, slot.regency, d, self.members)
        accepts = slot.votes[ACCEPT].get(d, {})
        if self._weight(accepts) >= q:
            out += self._decide(slot, self._proof(slot, accepts), now)
        return out

    def _proof(self, slot, accepts):
        msgs = tuple(accepts[s] for s in sorted(accepts))
        return DecisionProof(slot.instance, slot.regency, slot.proposal.digest, self.config().descriptor(), msgs)

    def _qc_ok(self, msg, kind):
        cfg = self.config()
        seen = set()
        for v in msg.votes:
            if v.kind != kind or (v.instance, v.regency, v.value_digest) != (msg.instance, msg.regency,
                                                                            msg.value_digest):
                return False
            if v.sender not in cfg.members or v.sender in seen or not v.verify(self.verifier):
                return False
            seen.add(v.sender)
        return cfg.weight_of(seen) >= cfg.quorum_units

    def _on_qc(self, slot, msg, now):
        if msg.sender != self.leader or slot.proposal is None or msg.value_digest != slot.proposal.digest:
            return []
        if msg.phase == 1 and PRECOMMIT not in slot.sent and self._qc_ok(msg, WRITE):
            slot.prepared = PreparedCert(slot.instance, slot.regency, slot.proposal, msg.votes)
            slot.sent.add(PRECOMMIT)
            return self._vote_actions(PRECOMMIT, slot.instance, slot.regency, msg.value_digest, [self.leader])
        if msg.phase == 2 and ACCEPT not in slot.sent and self._qc_ok(msg, PRECOMMIT):
            slot.sent.add(ACCEPT)
            return self._vote_actions(ACCEPT, slot.instance, slot.regency, msg.value_digest, [self.leader])
        return []

    def _on_decide_msg(self, slot, msg, now):
        if slot.proposal is None or msg.value_digest != slot.proposal.digest:
            return []
        proof = DecisionProof(slot.instance, slot.regency, msg.value_digest, self.config().descriptor(), msg.votes)
        if not proof.verify(self.verifier):
            return []
        return self._decide(slot, proof, now)

    def _decide(self, slot, proof, now):
        entry = LogEntry(slot.instance, slot.proposal, proof)
        fast = slot.fast
        leader = self.leader
        out = self._execute(entry, now, replies=True, fast=fast)
        if slot.started_at is not None and leader == self.id:
            out.append(Emit("consensus", {"instance": slot.instance, "start": slot.started_at, "decide": now,
                                          "mode": "fast" if fast else "conservative", "leader": self.id,
                                          "regency": slot.regency}))
        self.slot = None
        if fast and self.mode.fast and slot.recv_at is not None:
            self.watchdog.observe(self._observed_latency(slot, leader, now))
            if self.watchdog.disappointed(self.expectation):
                out += self.request_abort(LATENCY, now)
        if self.mode.on_decided(slot.instance):
            out.append(Emit(MODE_SWITCH, {"replica": self.id, "instance": slot.instance, "mode": "fast"}))
        out += self._drain_buffer(now)
        out += self._maybe_propose(now)
        return out

    def _observed_latency(self, slot, leader, now):
        """Estimate of the leader-gated consensus latency as seen from this replica.

        In the three-step pattern a follower decides about when the leader does, so the
        leader-to-follower delay is added back; in the seven-step pattern PROPOSE and
        DECIDE travel the same link and the delays cancel.
        """
        lat = now - slot.recv_at
        if leader != self.id and self.p.pattern == THREE_STEP and self.monitor is not None:
            lat += self.monitor.delay(leader, self.id)
        return lat

    # execution -------------------------------------------------------------

    def _execute(self, entry: LogEntry, now, replies: bool, fast=None):
        out = []
        inst = entry.instance
        self.log[inst] = entry
        self.last = inst
        batch = entry.batch
        fast = self.mode.fast if fast is None else fast
        desc = self.config().descriptor() if fast else self.cons_config().descriptor()
        for req in batch.requests:
            dup = self.svc.executed(req.key)
            res = self.svc.execute(req.client, req.seq, req.op)
            if not dup:
                self.exec_meta[req.key] = (inst, fast, desc)
                if replies:
                    out.append(self._reply(req.client, req.seq, res, inst, fast, desc))
            if self.pending.pop(req.key, None) is not None:
                out.append(CancelTimer(("req",) + req.key))
            self.req_stage.pop(req.key, None)
        self.svc.chain(batch.digest)
        if batch.directive is not None:
            out += self._apply_directive(batch.directive, inst, now)
        if inst % self.k == 0:
            out += self._take_checkpoint(inst, now)
        return out

    def _reply(self, client, seq, result, inst, fast, desc):
        r = Reply(self.id, client, seq, fast, result, desc, inst)
        return Send(client, Reply(r.replica, r.client, r.seq, r.fast, r.result, r.cfg_desc, r.instance,
                                  self.signer.attest(r.signed_bytes())))

    def _apply_directive(self, d, inst, now):
        if d[0] == "optimize":
            _, cr, cl, fr, fl, exp = d
            self.cons_ranking = tuple(reranked(cr, self.members))
            self.fast_ranking = tuple(reranked(fr, self.members))
            self.cons_leader_opt, self.fast_leader_opt = cl, fl
            self.expectation = exp
            self.reoptimize = False
            return [Emit(OPTIMIZE, {"replica": self.id, "instance": inst, "leader": self.leader})]
        if d[0] == "reconfigure":
            _, culprits, poc = d
            got = verify_poc(poc, self.verifier)
            if got is None or not set(got) <= set(self.members) or self.n - len(got) < 4:
                return []
            old_leader = self.leader
            remaining, _, _ = shrink_membership(self.members, got)
            self._set_members(remaining)
            self.svc.members = remaining
            self.cons_ranking = tuple(reranked(self.cons_ranking, remaining))
            self.fast_ranking = tuple(reranked(self.fast_ranking, remaining))
            if self.id not in remaining:
                self.removed = True
            out = [Emit(RECONFIGURE, {"replica": self.id, "instance": inst, "removed": tuple(sorted(got)),
                                      "n": self.n, "t": self.t, "t_fast": self.t_fast})]
            if old_leader not in remaining:
                # deterministic regency bump, no synchronization needed
                self.regency += 1
                self.mode.enter_regency(self.regency)
                self.reg_leader = leader_of(self.regency, self.members)
                self.cons_leader_opt = self.fast_leader_opt = None
            return out
        return []

    # checkpoints -----------------------------------------------------------

    def _take_checkpoint(self, inst, now):
        snap = self.svc.snapshot()
        dg = self.svc.state_digest()
        self.own_ckpts[inst] = (dg, snap)
        c = Checkpoint(self.id, inst, dg)
        c = Checkpoint(c.replica, c.instance, c.state_digest, self.signer.attest(c.signed_bytes()))
        return self._bcast(c)

    def _on_checkpoint(self, src, c: Checkpoint, now):
        if c.replica not in self.members or c.instance <= self.stable.instance or not c.verify(self.verifier):
            return []
        self.ckpt_votes.setdefault(c.instance, {})[c.replica] = c
        return self._evaluate_checkpoint(c.instance, now)

    def _evaluate_checkpoint(self, inst, now):
        votes = self.ckpt_votes.get(inst, {})
        own = self.own_ckpts.get(inst)
        if own is None:
            return []
        dg, snap = own
        out = []
        camps = {}
        for c in votes.values():
            camps.setdefault(c.state_digest, set()).add(c.replica)
        matching = camps.get(dg, set())
        if len(matching) >= self.n - self.t and inst > self.stable.instance:
            cert = tuple(votes[r] for r in sorted(matching))
            self.stable = StableCheckpoint(inst, dg, snap, cert)
            for j in [j for j in self.own_ckpts if j <= inst]:
                if j < inst:
                    del self.own_ckpts[j]
            for j in [j for j in self.ckpt_votes if j <= inst]:
                del self.ckpt_votes[j]
            for j in [j for j in self.log if j <= inst - self.k]:
                del self.log[j]
            audit = self.audits.get(("ckpt", inst))
            if audit is not None and not audit.done:
                audit.cancelled = True
            return out
        if len(camps) > 1 or (camps and dg not in camps):
            key = ("ckpt", inst)
            camps.setdefault(dg, set()).add(self.id)
            audit = self.audits.get(key)
            lo = max(1, inst - self.k + 1)
            if audit is None:
                audit = Audit(inst, lo, inst, {d: set(m) for d, m in camps.items()}, dg)
                self.audits[key] = audit
                out.append(Emit("audit_start", {"replica": self.id, "instance": inst}))
                out += self._request_logs(key, audit)
            elif not audit.done:
                new = [d for d in camps if d not in audit.camps]
                for d in camps:
                    audit.camps.setdefault(d, set()).update(camps[d])
                if new:
                    out += self._request_logs(key, audit)
        return out

    # audits ----------------------------------------------------------------

    def _request_logs(self, key, audit):
        targets = set()
        for camp in audit.pending_camps():
            targets |= audit.camps[camp]
        targets.discard(self.id)
        req = LogRequest(self.id, audit.lo, audit.hi, key)
        return [Send(m, req) for m in sorted(targets) if m in self.members]

    def _signed_window(self, lo, hi):
        return sign_log(self.signer, [self.log[j] for j in sorted(self.log) if lo <= j <= hi])

    def _on_log_request(self, src, r: LogRequest, now):
        return [Send(r.requester, LogResponse(self._signed_window(r.lo, r.hi), r.tag))]

    def _on_log_response(self, src, r: LogResponse, now):
        audit = self.audits.get(r.tag)
        if audit is None or audit.done or audit.cancelled:
            return []
        if not audit.offer(r.log, self.verifier):
            return []
        mine = self._signed_window(audit.lo, audit.hi)
        poc = compare_logs(mine, r.log, self.verifier)
        if poc is not None:
            audit.done = True
            out = [Emit("poc", {"replica": self.id, "culprits": tuple(sorted(poc.culprits)),
                                "instance": poc.instance, "poc": poc})]
            out += self._bcast(PocMessage(self.id, poc))
            return out
        if not audit.pending_camps():
            audit.done = True
        return []

    def _on_poc(self, src, m: PocMessage, now):
        culprits = verify_poc(m.poc, self.verifier)
        if culprits is None or culprits in self.known_pocs:
            return []
        self.known_pocs[culprits] = m.poc
        if self.mode.fast:
            return self.request_abort(VALID_POC, now, poc=m.poc)
        return []

    def _on_panic(self, src, p: Panic, now):
        key = ("panic", p.client, p.seq)
        if key in self.panics_seen:
            return []
        got = panic_camps(p, self.verifier)
        if got is None:
            return []
        self.panics_seen.add(key)
        camps, inst = got
        own = self.svc.replies.get((p.client, p.seq))
        hi = self.last
        lo = max(1, min(inst, self.stable.instance - self.k + 1))
        camps = {res: set(ms) for res, ms in camps.items()}
        audit = Audit(inst, lo, hi, camps, own)
        self.audits[key] = audit
        out = [Emit("panic", {"replica": self.id, "client": p.client, "seq": p.seq})]
        return out + self._request_logs(key, audit)

    def _on_log_query(self, src, q: LogQuery, now):
        key = (q.client, q.seq)
        meta = self.exec_meta.get(key)
        if meta is None:
            a = LogAnswer(self.id, q.client, q.seq, -1, None, self.stable.instance, False,
                          self.cons_config().descriptor())
        else:
            inst, fast, desc = meta
            a = LogAnswer(self.id, q.client, q.seq, inst, self.svc.replies[key], self.stable.instance, fast, desc)
        a = LogAnswer(a.replica, a.client, a.seq, a.instance, a.result, a.stable_upto, a.fast, a.cfg_desc,
                      self.signer.attest(a.signed_bytes()))
        out = [Send(q.client, a)]
        return out

    # abort and synchronization ---------------------------------------------

    def request_abort(self, reason, now, poc=None, force=False):
        """Send STOP for the next regency; in fast mode only the listed reasons qualify."""
        target = self.regency + 1
        if target in self.stops_sent or self.removed:
            return []
        if self.mode.fast and not force and not self.mode.may_abort(reason, True):
            return []
        self.stops_sent.add(target)
        s = Stop(self.id, target, reason, self.mode.fast, poc)
        s = Stop(s.replica, s.regency, s.reason, s.was_fast, s.poc, self.signer.attest(s.signed_bytes()))
        out = [Emit(ABORT, {"replica": self.id, "regency": self.regency, "reason": reason,
                            "fast": self.mode.fast})]
        return out + self._bcast(s)

    def _on_stop(self, src, s: Stop, now):
        if s.replica not in self.members or s.regency <= self.regency or not s.verify(self.verifier):
            return []
        if s.poc is not None:
            culprits = verify_poc(s.poc, self.verifier)
            if culprits is None:
                return []
            self.known_pocs.setdefault(culprits, s.poc)
        count = self.mode.record_stop(s)
        out = []
        if count >= self.t + 1 and s.regency not in self.stops_sent:
            self.stops_sent.add(s.regency)
            j = Stop(self.id, s.regency, JOIN, self.mode.fast, None)
            j = Stop(j.replica, j.regency, j.reason, j.was_fast, None, self.signer.attest(j.signed_bytes()))
            out += self._bcast(j)
        if count >= self.t + 1:
            out += self._install(s.regency, now)
        return out

    def _install(self, target, now):
        if target <= self.regency:
            return []
        prepared = self.slot.prepared if self.slot is not None else None
        # a fast regency stays "aborted fast" until some synchronization completes
        was_fast = self.mode.enter_regency(target) or self.unsynced_fast
        self.unsynced_fast = was_fast
        reasons = {st.reason for st in self.mode.stop_votes.get(target, {}).values()}
        # a latency disappointment means the measured matrix changed: re-optimize first thing
        self.reoptimize = self.reoptimize or (LATENCY in reasons and bool(self.p.optimize_every))
        self.regency = target
        self.syncing = True
        self.slot = None
        self.watchdog.reset()
        self.stops_sent.add(target)
        self.buffer = [m for m in self.buffer if getattr(m, "regency", target) >= target]
        entries = [self.log[j] for j in sorted(self.log)]
        sd = StopData(self.id, target, self.stable, sign_log(self.signer, entries), prepared, was_fast)
        sd = StopData(sd.replica, sd.regency, sd.stable, sd.log, sd.prepared, sd.was_fast,
                      self.signer.attest(sd.signed_bytes()))
        new_leader = leader_of(target, self.members)
        delay = self.p.sync_timeout_ms * (2 ** min(self.sync_failures, 6))
        out = [Emit(SYNC_START, {"replica": self.id, "regency": target, "leader": new_leader}),
               SetTimer(("sync", target), delay), Send(new_leader, sd)]
        return out

    def _on_sync_timer(self, target, now):
        if not self.syncing or target != self.regency:
            return []
        self.sync_failures += 1
        return self.request_abort(TIMER_EXPIRED, now, force=True)

    def _on_stopdata(self, src, sd: StopData, now):
        if sd.replica not in self.members or sd.regency < self.regency or not sd.verify(self.verifier):
            return []
        if leader_of(sd.regency, self.members) != self.id:
            return []
        self.stopdata.setdefault(sd.regency, {})[sd.replica] = sd
        if sd.regency > self.regency:
            return []
        return self._maybe_send_sync(sd.regency, now)

    def _maybe_send_sync(self, r, now):
        if r != self.regency or r in self.sync_sent or not self.syncing:
            return []
        sds = self.stopdata.get(r, {})
        need = self.n - self.t
        if len(sds) < need:
            return []
        aborted_fast = any(sd.was_fast for sd in sds.values())
        stops = self.mode.stop_votes.get(r, {}).values()
        forensic = needs_forensics(stops, aborted_fast) or bool(self.known_pocs)
        if forensic and len(sds) < min(self.n, need + self.t_fast + 1) and r not in self.extra_expired:
            if ("extra", r) not in self.sync_sent:
                self.sync_sent.add(("extra", r))
                return [SetTimer(("extra", r), self.timer_ms())]
            return []
        self.sync_sent.add(r)
        ordered = tuple(sds[k] for k in sorted(sds))
        pocs = dict(self.known_pocs)
        if forensic:
            for i, a in enumerate(ordered):
                for b in ordered[i + 1:]:
                    poc = compare_logs(a.log, b.log, self.verifier)
                    if poc is not None:
                        pocs.setdefault(poc.culprits, poc)
        out = [Emit("poc", {"replica": self.id, "culprits": tuple(sorted(c)), "instance": pocs[c].instance,
                            "poc": pocs[c]})
               for c in sorted(pocs, key=lambda c: tuple(sorted(c))) if c not in self.known_pocs]
        pocs = tuple(pocs[k] for k in sorted(pocs, key=lambda c: tuple(sorted(c))))
        s = Sync(self.id, r, ordered, pocs)
        s = Sync(s.leader, s.regency, s.stopdatas, s.pocs, self.signer.attest(s.signed_bytes()))
        return out + self._bcast(s)

    def _on_sync(self, src, s: Sync, now):
        if s.regency < self.regency or (s.regency == self.regency and not self.syncing):
            return []
        if s.leader != leader_of(s.regency, self.members) or not s.verify(self.verifier):
            return []
        seen = set()
        for sd in s.stopdatas:
            if sd.regency != s.regency or sd.replica in seen or sd.replica not in self.members \
                    or not sd.verify(self.verifier):
                return []
            seen.add(sd.replica)
        if len(seen) < self.n - self.t:
            return []
        culprits = set()
        for poc in s.pocs:
            got = verify_poc(poc, self.verifier)
            if got is None:
                return []
            self.known_pocs.setdefault(got, poc)
            culprits |= got
        out = []
        if s.regency > self.regency:
            out += self._install(s.regency, now)
        merged = merge_history(s.stopdatas, culprits, self.verifier, self.members, self.t)
        out += self._apply_history(merged, now)
        self.syncing = False
        self.unsynced_fast = False
        self.sync_failures = 0
        out.append(CancelTimer(("sync", s.regency)))
        self.reg_leader = s.leader
        self.cons_leader_opt = self.fast_leader_opt = None
        self.fast_ranking = self.cons_ranking
        self.mode.consecutive_ok = 0
        self.queue = []
        if merged.prepared is not None:
            p = merged.prepared
            self.queue.append(p.batch)
        if culprits & set(self.members):
            live = frozenset(culprits & set(self.members))
            poc = next((self.known_pocs[c] for c in sorted(self.known_pocs, key=lambda c: tuple(sorted(c)))
                        if c <= live), None)
            if poc is not None:
                self.queue.append(Batch((), ("reconfigure", tuple(sorted(poc.culprits)), poc), s.regency))
        if not self.is_leader:
            self.queue = []
        for key in list(self.pending):
            self.req_stage[key] = 0
            out.append(SetTimer(("req",) + key, self.timer_ms()))
        out.append(Emit(SYNC_END, {"replica": self.id, "regency": s.regency, "upto": merged.upto,
                                   "culprits": tuple(sorted(culprits))}))
        out += self._drain_buffer(now)
        out += self._maybe_propose(now)
        return out

    def _apply_history(self, merged, now):
        base = merged.base
        hist = {e.instance: e for e in merged.decisions}
        upto = merged.upto
        out = []
        diverged = self.last > upto
        if not diverged:
            for j in range(base.instance + 1, min(self.last, upto) + 1):
                mine = self.log.get(j)
                if mine is not None and mine.value_digest != hist[j].value_digest:
                    diverged = True
                    break
        if self.last < base.instance:
            self._restore(base)
        elif diverged:
            target = self.stable if base.instance <= self.stable.instance <= upto else base
            out.append(Emit(ROLLBACK, {"replica": self.id, "from": self.last, "to": target.instance}))
            self._restore(target)
        cons_desc = self.cons_config().descriptor()
        for j in range(self.last + 1, upto + 1):
            out += self._execute(hist[j], now, replies=False, fast=False)
        # conservative replies for the fixed suffix so clients can finalize
        for j in range(base.instance + 1, upto + 1):
            for req in hist[j].batch.requests:
                meta = self.exec_meta.get(req.key)
                if meta is not None and meta[0] == j:
                    self.exec_meta[req.key] = (j, False, cons_desc)
                    out.append(self._reply(req.client, req.seq, self.svc.replies[req.key], j, False, cons_desc))
        return out

    def _restore(self, ckpt: StableCheckpoint):
        self.svc.restore(ckpt.snapshot)
        if tuple(self.svc.members) != self.members:
            self._set_members(self.svc.members)
        self.last = ckpt.instance
        for j in [j for j in self.log if j > ckpt.instance]:
            del self.log[j]
        for key in [k for k, m in self.exec_meta.items() if m[0] > ckpt.instance]:
            del self.exec_meta[key]
        for j in [j for j in self.own_ckpts if j > ckpt.instance]:
            del self.own_ckpts[j]
        if ckpt.instance > self.stable.instance:
            self.stable = ckpt

    def _drain_buffer(self, now):
        if not self.buffer or self.syncing:
            return []
        ready, keep = [], []
        for m in self.buffer:
            if m.regency < self.regency or m.instance <= self.last:
                continue
            if m.regency == self.regency and m.instance == self.last + 1:
                ready.append(m)
            else:
                keep.append(m)
        self.buffer = keep
        out = []
        for m in ready:
            out += self._on_consensus(m, now)
        return out

    _handlers = {
        Request: lambda self, src, m, now: self._on_request(src, m, now),
        Forward: lambda self, src, m, now: self._on_forward(src, m, now),
        Checkpoint: lambda self, src, m, now: self._on_checkpoint(src, m, now),
        LogRequest: lambda self, src, m, now: self._on_log_request(src, m, now),
        LogResponse: lambda self, src, m, now: self._on_log_response(src, m, now),
        PocMessage: lambda self, src, m, now: self._on_poc(src, m, now),
        Panic: lambda self, src, m, now: self._on_panic(src, m, now),
        LogQuery: lambda self, src, m, now: self._on_log_query(src, m, now),
        Stop: lambda self, src, m, now: self._on_stop(src, m, now),
        StopData: lambda self, src, m, now: self._on_stopdata(src, m, now),
        Sync: lambda self, src, m, now: self._on_sync(src, m, now),
    }
