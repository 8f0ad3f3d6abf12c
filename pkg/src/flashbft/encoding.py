"""Deterministic byte encodings.

Consensus messages use a fixed big-endian layout so signatures are stable::

    kind        u8
    instance    u64
    regency     u64
    digest      32 bytes
    payload_len u32
    payload     payload_len bytes
    sig_signer  i64      (absent signature: signer = -1, tag_len = 0)
    sig_len     u16
    sig_tag     sig_len bytes

The signed bytes of a consensus message are the same layout without the
three signature fields.

Everything else is encoded with :func:`pack`, a tagged length-prefixed
encoding of ints, bytes, str, bool, None and (nested) tuples/lists.
"""
from __future__ import annotations

import struct

from .auth import DIGEST_SIZE, Signature

_HDR = struct.Struct(">BQQ32sI")
_SIG = struct.Struct(">qH")


def encode_consensus_body(kind: int, instance: int, regency: int, value_digest: bytes, payload: bytes) -> bytes:
    if len(value_digest) != DIGEST_SIZE:
        raise ValueError("digest must be 32 bytes")
    return _HDR.pack(kind, instance, regency, value_digest, len(payload)) + payload


def encode_consensus(kind: int, instance: int, regency: int, value_digest: bytes, payload: bytes,
                     sig: Signature | None) -> bytes:
    body = encode_consensus_body(kind, instance, regency, value_digest, payload)
    if sig is None:
        return body + _SIG.pack(-1, 0)
    return body + _SIG.pack(sig.signer, len(sig.tag)) + sig.tag


def decode_consensus(data: bytes):
    """Inverse of :func:`encode_consensus`; returns (kind, instance, regency, digest, payload, sig)."""
    if len(data) < _HDR.size + _SIG.size:
        raise ValueError("truncated consensus message")
    kind, instance, regency, value_digest, plen = _HDR.unpack_from(data, 0)
    off = _HDR.size
    payload = data[off: off + plen]
    if len(payload) != plen:
        raise ValueError("truncated payload")
    off += plen
    if len(data) < off + _SIG.size:
        raise ValueError("truncated signature header")
    signer, slen = _SIG.unpack_from(data, off)
    off += _SIG.size
    tag = data[off: off + slen]
    if len(tag) != slen or off + slen != len(data):
        raise ValueError("malformed signature field")
    sig = None if signer == -1 and slen == 0 else Signature(signer, bytes(tag))
    return kind, instance, regency, bytes(value_digest), bytes(payload), sig


_NONE, _FALSE, _TRUE, _INT, _BYTES, _STR, _SEQ, _FLOAT = range(8)


def pack(obj) -> bytes:
    out = bytearray()
    _pack_into(out, obj)
    return bytes(out)


def _pack_into(out: bytearray, obj) -> None:
    if obj is None:
        out.append(_NONE)
    elif obj is True:
        out.append(_TRUE)
    elif obj is False:
        out.append(_FALSE)
    elif isinstance(obj, int):
        raw = obj.to_bytes((obj.bit_length() + 8) // 8 or 1, "big", signed=True)
        out.append(_INT)
        out += struct.pack(">H", len(raw)) + raw
    elif isinstance(obj, float):
        out.append(_FLOAT)
        out += struct.pack(">d", obj)
    elif isinstance(obj, (bytes, bytearray)):
        out.append(_BYTES)
        out += struct.pack(">I", len(obj)) + bytes(obj)
    elif isinstance(obj, str):
        raw = obj.encode()
        out.append(_STR)
        out += struct.pack(">I", len(raw)) + raw
    elif isinstance(obj, (tuple, list)):
        out.append(_SEQ)
        out += struct.pack(">I", len(obj))
        for item in obj:
            _pack_into(out, item)
    elif isinstance(obj, (frozenset, set)):
        _pack_into(out, tuple(sorted(obj)))
    elif isinstance(obj, Signature):
        _pack_into(out, (obj.signer, obj.tag))
    elif hasattr(obj, "fields"):
        _pack_into(out, obj.fields())
    else:
        raise TypeError(f"cannot pack {type(obj).__name__}")


def unpack(data: bytes):
    obj, off = _unpack_from(data, 0)
    if off != len(data):
        raise ValueError("trailing bytes")
    return obj


def _unpack_from(data: bytes, off: int):
    tag = data[off]
    off += 1
    if tag == _NONE:
        return None, off
    if tag == _TRUE:
        return True, off
    if tag == _FALSE:
        return False, off
    if tag == _INT:
        (ln,) = struct.unpack_from(">H", data, off)
        off += 2
        return int.from_bytes(data[off: off + ln], "big", signed=True), off + ln
    if tag == _FLOAT:
        return struct.unpack_from(">d", data, off)[0], off + 8
    if tag in (_BYTES, _STR):
        (ln,) = struct.unpack_from(">I", data, off)
        off += 4
        raw = bytes(data[off: off + ln])
        return (raw if tag == _BYTES else raw.decode()), off + ln
    if tag == _SEQ:
        (ln,) = struct.unpack_from(">I", data, off)
        off += 4
        items = []
        for _ in range(ln):
            item, off = _unpack_from(data, off)
            items.append(item)
        return tuple(items), off
    raise ValueError(f"bad tag {tag}")
