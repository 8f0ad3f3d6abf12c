import hashlib

import pytest
from hypothesis import given
from hypothesis import strategies as st

from flashbft.auth import DIGEST_SIZE, EcdsaKeyRing, KeyRing, Signature, UnknownKey, digest
from flashbft.encoding import decode_consensus, encode_consensus, pack, unpack
from flashbft.messages import ACCEPT, PROPOSE, Batch, ConsensusMessage, Request, vote


@pytest.fixture
def ring():
    return KeyRing(seed=7, principals=[0, 1, 2, 1000])


def test_round_trip(ring):
    sig = ring.attest(1, b"m")
    assert ring.check(1, b"m", sig)


def test_tampered_payload(ring):
    assert not ring.check(1, b"m'", ring.attest(1, b"m"))


def test_wrong_signer(ring):
    sig = ring.attest(1, b"m")
    assert not ring.check(2, b"m", sig)
    assert not ring.check(2, b"m", Signature(2, sig.tag))


def test_unknown_key(ring):
    with pytest.raises(UnknownKey):
        ring.attest(99, b"m")
    with pytest.raises(UnknownKey):
        ring.signer(99)
    assert not ring.check(99, b"m", Signature(99, b"x" * 32))


def test_missing_signature(ring):
    assert not ring.check(1, b"m", None)


def test_signer_only_signs_as_itself(ring):
    s = ring.signer(2)
    v = ring.verifier()
    assert v.check(2, b"m", s.attest(b"m"))
    assert not v.check(1, b"m", s.attest(b"m"))


def test_mock_scheme_deterministic_across_rings():
    a, b = KeyRing(seed=3, principals=[0]), KeyRing(seed=3, principals=[0])
    assert a.attest(0, b"x") == b.attest(0, b"x")
    assert KeyRing(seed=4, principals=[0]).attest(0, b"x") != a.attest(0, b"x")


def test_digest():
    assert digest(b"abc") == digest(b"abc")
    assert digest(b"abc") != digest(b"abd")
    assert len(digest(b"")) == DIGEST_SIZE
    assert digest(b"") == hashlib.sha256(b"").digest()


def test_ecdsa_ring():
    pytest.importorskip("cryptography")
    ring = EcdsaKeyRing(seed=1, principals=[0, 1])
    sig = ring.attest(0, b"m")
    assert ring.check(0, b"m", sig)
    assert not ring.check(0, b"n", sig)
    assert not ring.check(1, b"m", sig)


def test_consensus_encoding_round_trip(ring):
    d = digest(b"v")
    sig = ring.attest(0, b"body")
    data = encode_consensus(PROPOSE, 5, 2, d, b"payload", sig)
    assert decode_consensus(data) == (PROPOSE, 5, 2, d, b"payload", sig)
    assert decode_consensus(encode_consensus(ACCEPT, 1, 0, d, b"", None))[-1] is None


def test_consensus_encoding_rejects_garbage():
    d = digest(b"v")
    data = encode_consensus(PROPOSE, 5, 2, d, b"payload", None)
    with pytest.raises(ValueError):
        decode_consensus(data[:-1])
    with pytest.raises(ValueError):
        decode_consensus(data + b"x")
    with pytest.raises(ValueError):
        encode_consensus(PROPOSE, 1, 0, b"short", b"", None)


def test_message_encoding_stable(ring):
    req = Request(1000, 1, b"incr k0")
    req = Request(req.client, req.seq, req.op, ring.attest(1000, req.signed_bytes()))
    b1, b2 = Batch((req,)), Batch((req,))
    assert b1.digest == b2.digest
    assert Batch((req,), nonce=1).digest != b1.digest
    msg = ConsensusMessage(PROPOSE, 1, 0, b1.digest, 0, batch=b1)
    assert decode_consensus(msg.encode())[4] == b1.encoded


def test_vote_signature(ring):
    v = vote(ring.signer(1), ACCEPT, 3, 0, digest(b"x"))
    assert v.verify(ring.verifier())
    forged = ConsensusMessage(ACCEPT, 3, 0, digest(b"y"), 1, v.sig)
    assert not forged.verify(ring.verifier())
    impostor = ConsensusMessage(ACCEPT, 3, 0, digest(b"x"), 2, v.sig)
    assert not impostor.verify(ring.verifier())


_values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.binary(max_size=20) | st.text(max_size=10)
    | st.floats(allow_nan=False),
    lambda children: st.lists(children, max_size=4).map(tuple), max_leaves=15)


@given(_values)
def test_pack_round_trip(obj):
    assert unpack(pack(obj)) == obj


def test_pack_is_canonical():
    assert pack(frozenset({3, 1, 2})) == pack((1, 2, 3))
    with pytest.raises(TypeError):
        pack(object())
