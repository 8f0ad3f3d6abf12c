"""Protocol message types shared by replicas, clients and the auditor."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

from .auth import Signature, digest
from .encoding import encode_consensus, encode_consensus_body, pack
from .quorum import WeightConfig

PROPOSE, WRITE, ACCEPT, PRECOMMIT, QC, DECIDE = 1, 2, 3, 4, 5, 6
KIND_NAMES = {PROPOSE: "PROPOSE", WRITE: "WRITE", ACCEPT: "ACCEPT", PRECOMMIT: "PRECOMMIT", QC: "QC", DECIDE: "DECIDE"}
VOTE_KINDS = (WRITE, PRECOMMIT, ACCEPT)


@dataclass(frozen=True)
class Request:
    client: int
    seq: int
    op: bytes
    sig: Optional[Signature] = None

    @property
    def key(self):
        return (self.client, self.seq)

    def signed_bytes(self) -> bytes:
        return pack(("REQUEST", self.client, self.seq, self.op))

    def fields(self):
        return (self.client, self.seq, self.op, self.sig)

    def verify(self, verifier) -> bool:
        return verifier.check(self.client, self.signed_bytes(), self.sig)


@dataclass(frozen=True)
class Batch:
    requests: tuple = ()
    directive: Optional[tuple] = None
    nonce: int = 0

    @cached_property
    def encoded(self) -> bytes:
        return pack(("BATCH", tuple(r.fields() for r in self.requests), self.directive, self.nonce))

    @cached_property
    def digest(self) -> bytes:
        return digest(self.encoded)

    def fields(self):
        return (tuple(r.fields() for r in self.requests), self.directive, self.nonce)


@dataclass(frozen=True)
class ConsensusMessage:
    kind: int
    instance: int
    regency: int
    value_digest: bytes
    sender: int
    sig: Optional[Signature] = None
    batch: Optional[Batch] = field(default=None, compare=False)
    votes: tuple = field(default=(), compare=False)
    phase: int = 0

    @property
    def payload(self) -> bytes:
        if self.kind == PROPOSE and self.batch is not None:
            return self.batch.encoded
        if self.kind in (QC, DECIDE):
            return pack((self.phase, tuple(v.fields() for v in self.votes)))
        return b""

    def signed_bytes(self) -> bytes:
        return encode_consensus_body(self.kind, self.instance, self.regency, self.value_digest, b"")

    def encode(self) -> bytes:
        return encode_consensus(self.kind, self.instance, self.regency, self.value_digest, self.payload, self.sig)

    def fields(self):
        return (self.kind, self.instance, self.regency, self.value_digest, self.sender, self.sig)

    def verify(self, verifier) -> bool:
        return self.sig is not None and self.sig.signer == self.sender and verifier.check(
            self.sender, self.signed_bytes(), self.sig)


def vote(signer, kind: int, instance: int, regency: int, value_digest: bytes) -> ConsensusMessage:
    body = encode_consensus_body(kind, instance, regency, value_digest, b"")
    return ConsensusMessage(kind, instance, regency, value_digest, signer.pid, signer.attest(body))


@dataclass(frozen=True)
class DecisionProof:
    """Weighted quorum of signed ACCEPTs for one (instance, regency, value)."""

    instance: int
    regency: int
    value_digest: bytes
    cfg_desc: tuple
    accepts: tuple

    def fields(self):
        return (self.instance, self.regency, self.value_digest, self.cfg_desc,
                tuple(a.fields() for a in self.accepts))

    @property
    def signers(self) -> frozenset:
        return frozenset(a.sender for a in self.accepts)

    def config(self) -> WeightConfig:
        return WeightConfig.from_descriptor(self.cfg_desc)

    def verify(self, verifier) -> bool:
        try:
            cfg = self.config()
        except (ValueError, TypeError, KeyError):
            return False
        seen = set()
        for a in self.accepts:
            if a.kind != ACCEPT or (a.instance, a.regency, a.value_digest) != (
                    self.instance, self.regency, self.value_digest):
                return False
            if a.sender in seen or a.sender not in cfg.members or not a.verify(verifier):
                return False
            seen.add(a.sender)
        return cfg.weight_of(seen) >= cfg.quorum_units


@dataclass(frozen=True)
class LogEntry:
    instance: int
    batch: Batch
    proof: DecisionProof

    @property
    def value_digest(self) -> bytes:
        return self.batch.digest

    def fields(self):
        return (self.instance, self.batch.digest, self.proof.fields())


@dataclass(frozen=True)
class SignedLog:
    """Decision log segment signed by its owner (used as audit evidence)."""

    owner: int
    entries: tuple
    sig: Optional[Signature] = None

    def signed_bytes(self) -> bytes:
        return pack(("LOG", self.owner, tuple(e.fields() for e in self.entries)))

    def fields(self):
        return (self.owner, tuple(e.fields() for e in self.entries), self.sig)

    def verify(self, verifier) -> bool:
        return verifier.check(self.owner, self.signed_bytes(), self.sig)

    def entry(self, instance: int) -> Optional[LogEntry]:
        for e in self.entries:
            if e.instance == instance:
                return e
        return None


def sign_log(signer, entries) -> SignedLog:
    log = SignedLog(signer.pid, tuple(entries))
    return SignedLog(log.owner, log.entries, signer.attest(log.signed_bytes()))


@dataclass(frozen=True)
class Reply:
    replica: int
    client: int
    seq: int
    fast: bool
    result: bytes
    cfg_desc: tuple
    instance: int
    sig: Optional[Signature] = None

    def signed_bytes(self) -> bytes:
        return pack(("REPLY", self.replica, self.client, self.seq, self.fast, self.result, self.cfg_desc,
                     self.instance))

    def fields(self):
        return (self.replica, self.client, self.seq, self.fast, self.result, self.cfg_desc, self.instance, self.sig)

    def verify(self, verifier) -> bool:
        return verifier.check(self.replica, self.signed_bytes(), self.sig)


@dataclass(frozen=True)
class Checkpoint:
    replica: int
    instance: int
    state_digest: bytes
    sig: Optional[Signature] = None

    def signed_bytes(self) -> bytes:
        return pack(("CHECKPOINT", self.replica, self.instance, self.state_digest))

    def fields(self):
        return (self.replica, self.instance, self.state_digest, self.sig)

    def verify(self, verifier) -> bool:
        return verifier.check(self.replica, self.signed_bytes(), self.sig)


@dataclass(frozen=True)
class StableCheckpoint:
    instance: int
    state_digest: bytes
    snapshot: bytes
    cert: tuple = ()

    def verify(self, verifier, members, threshold: int) -> bool:
        if self.instance == 0:
            return True
        if digest(self.snapshot) != self.state_digest:
            return False
        good = {c.replica for c in self.cert
                if c.instance == self.instance and c.state_digest == self.state_digest
                and c.replica in members and c.verify(verifier)}
        return len(good) >= threshold


@dataclass(frozen=True)
class PreparedCert:
    instance: int
    regency: int
    batch: Batch
    writes: tuple


@dataclass(frozen=True)
class Stop:
    replica: int
    regency: int  # regency being moved to
    reason: str
    was_fast: bool
    poc: object = None
    sig: Optional[Signature] = None

    def signed_bytes(self) -> bytes:
        return pack(("STOP", self.replica, self.regency, self.reason, self.was_fast,
                     self.poc.fields() if self.poc is not None else None))

    def verify(self, verifier) -> bool:
        return verifier.check(self.replica, self.signed_bytes(), self.sig)


@dataclass(frozen=True)
class StopData:
    replica: int
    regency: int
    stable: StableCheckpoint
    log: SignedLog
    prepared: Optional[PreparedCert] = None
    was_fast: bool = False
    sig: Optional[Signature] = None

    def signed_bytes(self) -> bytes:
        prep = None
        if self.prepared is not None:
            p = self.prepared
            prep = (p.instance, p.regency, p.batch.digest, tuple(w.fields() for w in p.writes))
        return pack(("STOPDATA", self.replica, self.regency, self.stable.instance, self.stable.state_digest,
                     self.log.signed_bytes(), prep, self.was_fast))

    def verify(self, verifier) -> bool:
        return verifier.check(self.replica, self.signed_bytes(), self.sig) and self.log.owner == self.replica


@dataclass(frozen=True)
class Sync:
    leader: int
    regency: int
    stopdatas: tuple
    pocs: tuple
    sig: Optional[Signature] = None

    def signed_bytes(self) -> bytes:
        return pack(("SYNC", self.leader, self.regency, tuple(s.sig.tag for s in self.stopdatas),
                     tuple(p.fields() for p in self.pocs)))

    def verify(self, verifier) -> bool:
        return verifier.check(self.leader, self.signed_bytes(), self.sig)


@dataclass(frozen=True)
class LogRequest:
    requester: int
    lo: int
    hi: int
    tag: tuple = ()


@dataclass(frozen=True)
class LogResponse:
    log: SignedLog
    tag: tuple = ()


@dataclass(frozen=True)
class PocMessage:
    sender: int
    poc: object


@dataclass(frozen=True)
class Forward:
    replica: int
    request: Request


@dataclass(frozen=True)
class LogQuery:
    client: int
    seq: int


@dataclass(frozen=True)
class LogAnswer:
    replica: int
    client: int
    seq: int
    instance: int
    result: Optional[bytes]
    stable_upto: int
    fast: bool
    cfg_desc: tuple
    sig: Optional[Signature] = None

    def signed_bytes(self) -> bytes:
        return pack(("LOGANSWER", self.replica, self.client, self.seq, self.instance, self.result,
                     self.stable_upto, self.fast, self.cfg_desc))

    def verify(self, verifier) -> bool:
        return verifier.check(self.replica, self.signed_bytes(), self.sig)


@dataclass(frozen=True)
class Panic:
    client: int
    seq: int
    replies: tuple
