import dataclasses

from flashbft.auth import Signature
from flashbft.forensics import (DOUBLE_ACCEPT, INVALID_PROOF, Audit, ProofOfCulpability, compare_logs, log_window,
                                panic_camps, verify_poc)
from flashbft.messages import Panic, Reply

from builders import batch, entry, fast_cfg, proof, setup, signed_log

# n=10, t_fast=2: high replicas 0..3 hold 5 units, the rest 2 units, quorum 22
COALITION = {0, 1, 2}
CAMP_A = {3, 4}
CAMP_B = {5, 6, 7, 8}


def _equivocation():
    ring, ver = setup(10)
    cfg = fast_cfg()
    v1, v2 = batch(ring, "incr a"), batch(ring, "incr b")
    e1 = entry(ring, cfg, 1, 0, v1, COALITION | CAMP_A)
    e2 = entry(ring, cfg, 1, 0, v2, COALITION | CAMP_B)
    return ring, ver, cfg, e1, e2


def test_camps_reach_quorum():
    _, ver, cfg, e1, e2 = _equivocation()
    assert cfg.weight_of(COALITION | CAMP_A) >= cfg.quorum_units
    assert e1.proof.verify(ver) and e2.proof.verify(ver)


def test_double_accept_poc():
    ring, ver, _, e1, e2 = _equivocation()
    poc = compare_logs(signed_log(ring, 4, [e1]), signed_log(ring, 6, [e2]), ver)
    assert poc.kind == DOUBLE_ACCEPT and poc.culprits == COALITION
    assert verify_poc(poc, ver) == COALITION
    assert verify_poc(poc, ver, t_fast=2) == COALITION


def test_matching_logs_give_no_poc():
    ring, ver, _, e1, _ = _equivocation()
    assert compare_logs(signed_log(ring, 4, [e1]), signed_log(ring, 3, [e1]), ver) is None


def test_tampered_signature_rejected():
    ring, ver, _, e1, e2 = _equivocation()
    poc = compare_logs(signed_log(ring, 4, [e1]), signed_log(ring, 6, [e2]), ver)
    a, b = poc.evidence
    bad_vote = dataclasses.replace(a.accepts[0], sig=Signature(a.accepts[0].sender, b"\x00" * 32))
    bad = dataclasses.replace(poc, evidence=(dataclasses.replace(a, accepts=(bad_vote,) + a.accepts[1:]), b))
    assert verify_poc(bad, ver) is None


def test_same_digest_rejected():
    _, ver, _, e1, _ = _equivocation()
    poc = ProofOfCulpability(DOUBLE_ACCEPT, 1, 0, (e1.proof, e1.proof), frozenset(COALITION | CAMP_A))
    assert verify_poc(poc, ver) is None


def test_wrong_culprit_claim_rejected():
    ring, ver, _, e1, e2 = _equivocation()
    poc = compare_logs(signed_log(ring, 4, [e1]), signed_log(ring, 6, [e2]), ver)
    assert verify_poc(dataclasses.replace(poc, culprits=frozenset({0, 1, 2, 3})), ver) is None


def test_too_few_double_signers_rejected():
    # two quorums overlapping in only the t_fast=2 heaviest replicas cannot come from honest play,
    # but the proof still must name at least t_fast + 1 culprits
    ring, ver = setup(10)
    cfg = fast_cfg()
    v1, v2 = batch(ring, "incr a"), batch(ring, "incr b")
    p1 = proof(ring, cfg, 1, 0, v1, {0, 1, 2, 3, 4})
    p2 = proof(ring, cfg, 1, 0, v2, {0, 1, 4, 5, 6, 7, 8, 9})
    poc = ProofOfCulpability(DOUBLE_ACCEPT, 1, 0, (p1, p2), frozenset({0, 1, 4}))
    assert verify_poc(poc, ver) == {0, 1, 4}
    assert verify_poc(dataclasses.replace(poc, culprits=frozenset({0, 1})), ver) is None


def test_invalid_proof_names_log_owner():
    ring, ver = setup(10)
    cfg = fast_cfg()
    good_b, forged_b = batch(ring, "incr a"), batch(ring, "incr b")
    good = entry(ring, cfg, 1, 0, good_b, COALITION | CAMP_A)
    under = entry(ring, cfg, 1, 0, forged_b, {7, 8, 9})  # 6 units, far below the quorum
    poc = compare_logs(signed_log(ring, 4, [good]), signed_log(ring, 9, [under]), ver)
    assert poc.kind == INVALID_PROOF and poc.culprits == {9}
    assert verify_poc(poc, ver) == {9}


def test_unsigned_log_gives_nothing():
    ring, ver = setup(10)
    cfg = fast_cfg()
    good = entry(ring, cfg, 1, 0, batch(ring, "incr a"), COALITION | CAMP_A)
    under = entry(ring, cfg, 1, 0, batch(ring, "incr b"), {7, 8, 9})
    unsigned = dataclasses.replace(signed_log(ring, 9, [under]), sig=None)
    assert compare_logs(signed_log(ring, 4, [good]), unsigned, ver) is None


def test_garbage_is_not_a_poc():
    _, ver = setup(4)
    assert verify_poc("nonsense", ver) is None
    assert verify_poc(ProofOfCulpability("other", 1, 0, (), frozenset()), ver) is None


def _reply(ring, rid, result, fast=True):
    r = Reply(rid, 1000, 1, fast, result, fast_cfg().descriptor(), 3)
    return Reply(r.replica, r.client, r.seq, r.fast, r.result, r.cfg_desc, r.instance,
                 ring.attest(rid, r.signed_bytes()))


def test_panic_camps():
    ring, ver = setup(10)
    p = Panic(1000, 1, (_reply(ring, 3, b"1"), _reply(ring, 6, b"2"), _reply(ring, 7, b"2")))
    camps, inst = panic_camps(p, ver)
    assert camps == {b"1": {3}, b"2": {6, 7}} and inst == 3


def test_fabricated_panic_discarded():
    ring, ver = setup(10)
    forged = Reply(6, 1000, 1, True, b"2", fast_cfg().descriptor(), 3)
    assert panic_camps(Panic(1000, 1, (_reply(ring, 3, b"1"), forged)), ver) is None
    assert panic_camps(Panic(1000, 1, (_reply(ring, 3, b"1"), _reply(ring, 4, b"1"))), ver) is None
    assert panic_camps(Panic(1000, 1, (_reply(ring, 3, b"1"), _reply(ring, 4, b"2", fast=False))), ver) is None


def test_audit_accepts_one_log_per_camp():
    ring, ver, _, e1, e2 = _equivocation()
    audit = Audit(1, 1, 1, {"a": CAMP_A, "b": CAMP_B}, "a")
    assert audit.pending_camps() == ["b"]
    assert not audit.offer(signed_log(ring, 4, [e1]), ver)  # own camp
    assert audit.offer(signed_log(ring, 6, [e2]), ver)
    assert not audit.offer(signed_log(ring, 7, [e2]), ver)
    assert audit.pending_camps() == []
    audit2 = Audit(1, 1, 1, {"a": CAMP_A, "b": CAMP_B}, "a", cancelled=True)
    assert not audit2.offer(signed_log(ring, 6, [e2]), ver)


def test_log_window():
    # from the last stable checkpoint, widened to cover at least k instances
    assert log_window(10, 40, 16) == (11, 40)
    assert log_window(32, 40, 16) == (25, 40)
    assert log_window(0, 5, 16) == (1, 5)
