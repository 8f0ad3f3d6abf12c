"""Lightweight forensics: locate diverging decisions and build proofs of culpability."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .messages import DecisionProof, Panic, SignedLog

INVALID_PROOF = "invalid_proof"
DOUBLE_ACCEPT = "double_accept"


@dataclass(frozen=True)
class ProofOfCulpability:
    """Evidence naming misbehaving replicas.

    ``double_accept``: ``evidence`` is a pair of valid conflicting decision
    proofs from the same (instance, regency); culprits are the replicas that
    signed ACCEPTs in both.  ``invalid_proof``: ``evidence`` is a signed log
    whose entry for ``instance`` carries an invalid proof; the log owner is
    the culprit.
    """

    kind: str
    instance: int
    regency: int
    evidence: tuple
    culprits: frozenset

    def fields(self):
        if self.kind == DOUBLE_ACCEPT:
            ev = tuple(p.fields() for p in self.evidence)
        else:
            ev = tuple(e.fields() for e in self.evidence)
        return (self.kind, self.instance, self.regency, ev, tuple(sorted(self.culprits)))


def fast_threshold_of(cfg_desc) -> int:
    members, t_eff, _ = cfg_desc
    return t_eff


def double_signers(a: DecisionProof, b: DecisionProof) -> frozenset:
    return a.signers & b.signers


def compare_logs(mine: SignedLog, theirs: SignedLog, verifier, t_fast: Optional[int] = None):
    """Return a PoC from the first diverging instance of two signed logs, or None."""
    common = sorted({e.instance for e in mine.entries} & {e.instance for e in theirs.entries})
    for inst in common:
        ea, eb = mine.entry(inst), theirs.entry(inst)
        if ea.value_digest == eb.value_digest and ea.proof.value_digest == eb.proof.value_digest:
            continue
        for log, entry in ((theirs, eb), (mine, ea)):
            if not _entry_ok(entry, verifier):
                if not log.verify(verifier):
                    return None
                return ProofOfCulpability(INVALID_PROOF, inst, entry.proof.regency, (log,), frozenset({log.owner}))
        pa, pb = ea.proof, eb.proof
        if pa.regency != pb.regency:
            return None
        poc = ProofOfCulpability(DOUBLE_ACCEPT, inst, pa.regency, (pa, pb), double_signers(pa, pb))
        return poc if verify_poc(poc, verifier, t_fast) is not None else None
    return None


def _entry_ok(entry, verifier) -> bool:
    p = entry.proof
    return p.instance == entry.instance and p.value_digest == entry.batch.digest and p.verify(verifier)


def verify_poc(poc: ProofOfCulpability, verifier, t_fast: Optional[int] = None):
    """Re-derive the culprit set from the evidence alone; None if the PoC is rejected."""
    if not isinstance(poc, ProofOfCulpability):
        return None
    if poc.kind == DOUBLE_ACCEPT:
        if len(poc.evidence) != 2:
            return None
        a, b = poc.evidence
        if not (isinstance(a, DecisionProof) and isinstance(b, DecisionProof)):
            return None
        if (a.instance, a.regency) != (poc.instance, poc.regency) or (b.instance, b.regency) != (
                poc.instance, poc.regency):
            return None
        if a.value_digest == b.value_digest:
            return None
        if not (a.verify(verifier) and b.verify(verifier)):
            return None
        culprits = double_signers(a, b)
        bound = t_fast
        if bound is None:
            # fall back to the threshold both proofs were formed under
            bound = min(a.config().t, b.config().t)
        if len(culprits) < bound + 1 or culprits != poc.culprits:
            return None
        return culprits
    if poc.kind == INVALID_PROOF:
        if len(poc.evidence) != 1 or not isinstance(poc.evidence[0], SignedLog):
            return None
        log = poc.evidence[0]
        if not log.verify(verifier):
            return None
        entry = log.entry(poc.instance)
        if entry is None or _entry_ok(entry, verifier):
            return None
        culprits = frozenset({log.owner})
        return culprits if culprits == poc.culprits else None
    return None


def panic_camps(p: Panic, verifier):
    """Group a panic's replies by result; None unless it holds two verified conflicting fast replies."""
    camps = {}
    instance = 0
    for r in p.replies:
        if (r.client, r.seq) != (p.client, p.seq) or not r.fast or not r.verify(verifier):
            return None
        camps.setdefault(r.result, set()).add(r.replica)
        instance = max(instance, r.instance)
    if len(camps) < 2:
        return None
    return camps, instance


@dataclass
class Audit:
    """One in-flight audit: which camps still owe a verifying log."""

    instance: int
    lo: int
    hi: int
    camps: dict  # camp key -> set of replica ids
    own_camp: object
    logs: dict = field(default_factory=dict)  # camp key -> SignedLog
    cancelled: bool = False
    done: bool = False

    def pending_camps(self):
        return [k for k in self.camps if k != self.own_camp and k not in self.logs]

    def offer(self, log: SignedLog, verifier) -> bool:
        """Record a fetched log for the owner's camp; True if it was accepted."""
        if self.done or self.cancelled or not log.verify(verifier):
            return False
        for key, members in self.camps.items():
            if key != self.own_camp and key not in self.logs and log.owner in members:
                self.logs[key] = log
                return True
        return False


def log_window(stable_instance: int, upto: int, k: int) -> tuple:
    lo = max(1, min(stable_instance + 1, upto - k + 1))
    return lo, upto


def median(xs) -> float:
    xs = sorted(xs)
    if not xs:
        return math.nan
    m = len(xs) // 2
    return xs[m] if len(xs) % 2 else (xs[m - 1] + xs[m]) / 2
