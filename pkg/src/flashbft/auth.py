"""Signatures and digests for the trusted setup.

The default scheme is a keyed-hash mock: ``tag = sha256(secret || payload)``
with per-principal secrets derived from a setup seed.  Processes only ever
receive a :class:`Signer` for their own id plus the shared :class:`Verifier`,
so a simulated Byzantine process cannot produce tags for anyone else.

Key derivation is deterministic and *not* security grade::

    secret(id) = sha256(b"flashbft/key" || seed as 8-byte big endian || id as 8-byte signed big endian)
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

DIGEST_SIZE = 32


def digest(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


@dataclass(frozen=True)
class Signature:
    signer: int
    tag: bytes


class UnknownKey(KeyError):
    pass


class KeyRing:
    """Holds every principal's secret; owned by the harness only."""

    def __init__(self, seed: int = 0, principals=()):
        self.seed = seed
        self._secrets = {}
        for pid in principals:
            self.register(pid)

    def register(self, pid: int) -> None:
        self._secrets[pid] = hashlib.sha256(
            b"flashbft/key" + struct.pack(">Qq", self.seed & (2**64 - 1), pid)
        ).digest()

    def _tag(self, pid: int, payload: bytes) -> bytes:
        try:
            secret = self._secrets[pid]
        except KeyError:
            raise UnknownKey(pid) from None
        return hashlib.sha256(secret + payload).digest()

    def attest(self, pid: int, payload: bytes) -> Signature:
        return Signature(pid, self._tag(pid, payload))

    def check(self, pid: int, payload: bytes, sig: Signature) -> bool:
        if sig is None or sig.signer != pid or pid not in self._secrets:
            return False
        return self._tag(pid, payload) == sig.tag

    def signer(self, pid: int) -> "Signer":
        if pid not in self._secrets:
            raise UnknownKey(pid)
        return Signer(self, pid)

    def verifier(self) -> "Verifier":
        return Verifier(self)


class Signer:
    __slots__ = ("_ring", "pid")

    def __init__(self, ring, pid: int):
        self._ring = ring
        self.pid = pid

    def attest(self, payload: bytes) -> Signature:
        return self._ring.attest(self.pid, payload)


class Verifier:
    __slots__ = ("_ring",)

    def __init__(self, ring):
        self._ring = ring

    def check(self, pid: int, payload: bytes, sig: Signature) -> bool:
        return self._ring.check(pid, payload, sig)


class EcdsaKeyRing:
    """ECDSA (P-256, SHA-256) drop-in for :class:`KeyRing`.

    Private keys are derived from the seed the same way as mock secrets.
    ECDSA signing is randomized, so traces are not byte-reproducible with it.
    """

    def __init__(self, seed: int = 0, principals=()):
        from cryptography.hazmat.primitives.asymmetric import ec

        self._ec = ec
        self.seed = seed
        self._keys = {}
        self._pubs = {}
        for pid in principals:
            self.register(pid)

    def register(self, pid: int) -> None:
        ec = self._ec
        raw = hashlib.sha256(b"flashbft/ecdsa" + struct.pack(">Qq", self.seed & (2**64 - 1), pid)).digest()
        # P-256 order is just below 2**256; reduce into [1, order-1]
        order = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
        key = ec.derive_private_key(int.from_bytes(raw, "big") % (order - 1) + 1, ec.SECP256R1())
        self._keys[pid] = key
        self._pubs[pid] = key.public_key()

    def attest(self, pid: int, payload: bytes) -> Signature:
        from cryptography.hazmat.primitives import hashes

        if pid not in self._keys:
            raise UnknownKey(pid)
        return Signature(pid, self._keys[pid].sign(payload, self._ec.ECDSA(hashes.SHA256())))

    def check(self, pid: int, payload: bytes, sig: Signature) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives import hashes

        if sig is None or sig.signer != pid or pid not in self._pubs:
            return False
        try:
            self._pubs[pid].verify(sig.tag, payload, self._ec.ECDSA(hashes.SHA256()))
        except InvalidSignature:
            return False
        return True

    def signer(self, pid: int) -> Signer:
        if pid not in self._keys:
            raise UnknownKey(pid)
        return Signer(self, pid)

    def verifier(self) -> Verifier:
        return Verifier(self)
