"""Attestation blob wire layout (all integers little-endian).

::

    version        u8     (1)
    flags          u8     bit0: final segment of the operation execution
    op_id          u16
    segment        u16    index within the execution, from 0
    prev_hash      32     BLAKE2s-256 of the previous segment's bytes (zeros for 0)
    nonce          16
    S              u32 byte count | S_addr (u64 each) | u32 bit count | S_bin
    H              32
    F              u8     0 or 1
    C              (iff F) u8 count | count * (u64 variable id, u64 return address)
    interrupts     u8 count | records
    signature      64     Ed25519 over every preceding byte

An interrupt record is ``u16 irq id | u64 handler entry | u64 resume | S |
H | interrupts`` (the same stream layout, nested).  ``resume`` is the address
the interrupt preempted; the handler's final return folds its actual target
into the record's H, so the verifier folds ``resume`` in its place.  S_bin is packed LSB-first
with zero padding in the last byte.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace

from .hashchain import HASH_SIZE, MASK64, ZERO_HASH
from .keys import SIGNATURE_SIZE, DeviceKey, verify_signature

VERSION = 1
NONCE_SIZE = 16
FLAG_FINAL = 0x01
MAX_CONTEXT = 255


class DecodeError(ValueError):
    pass


def pack_bits(bits) -> bytes:
    out = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        if b:
            out[i >> 3] |= 1 << (i & 7)
    return bytes(out)


def unpack_bits(data: bytes, count: int) -> tuple[int, ...]:
    return tuple((data[i >> 3] >> (i & 7)) & 1 for i in range(count))


def encode_stream(addrs, bits) -> bytes:
    return (struct.pack("<I", 8 * len(addrs))
            + b"".join((a & MASK64).to_bytes(8, "little") for a in addrs)
            + struct.pack("<I", len(bits)) + pack_bits(bits))


@dataclass(frozen=True)
class InterruptRecord:
    irq_id: int
    handler_entry: int
    addrs: tuple[int, ...] = ()
    bits: tuple[int, ...] = ()
    ret_hash: bytes = ZERO_HASH
    interrupts: tuple["InterruptRecord", ...] = ()
    resume: int = 0

    def encode(self) -> bytes:
        return (struct.pack("<HQQ", self.irq_id, self.handler_entry & MASK64,
                            self.resume & MASK64)
                + encode_stream(self.addrs, self.bits) + self.ret_hash
                + _encode_interrupts(self.interrupts))


def _encode_interrupts(records) -> bytes:
    if len(records) > 255:
        raise ValueError("at most 255 interrupt records per blob")
    return bytes([len(records)]) + b"".join(r.encode() for r in records)


@dataclass(frozen=True)
class AttestationBlob:
    op_id: int
    nonce: bytes
    addrs: tuple[int, ...] = ()
    bits: tuple[int, ...] = ()
    ret_hash: bytes = ZERO_HASH
    flag: bool = False
    context: tuple[tuple[int, int], ...] = ()
    interrupts: tuple[InterruptRecord, ...] = ()
    segment: int = 0
    prev_hash: bytes = ZERO_HASH
    final: bool = True
    version: int = VERSION
    signature: bytes = field(default=bytes(SIGNATURE_SIZE))

    def signed_bytes(self) -> bytes:
        if len(self.nonce) != NONCE_SIZE:
            raise ValueError("nonce must be 16 bytes")
        head = struct.pack("<BBHH", self.version, FLAG_FINAL if self.final else 0,
                           self.op_id, self.segment)
        out = [head, self.prev_hash, self.nonce, encode_stream(self.addrs, self.bits),
               self.ret_hash, bytes([1 if self.flag else 0])]
        if self.flag:
            ctx = self.context[:MAX_CONTEXT]
            out.append(bytes([len(ctx)]))
            out.extend(struct.pack("<QQ", v & MASK64, r & MASK64) for v, r in ctx)
        out.append(_encode_interrupts(self.interrupts))
        return b"".join(out)

    def encode(self) -> bytes:
        return self.signed_bytes() + self.signature

    def sign(self, key: DeviceKey) -> "AttestationBlob":
        return replace(self, signature=key.sign(self.signed_bytes()))

    def verify_signature(self, public_key: bytes) -> bool:
        return verify_signature(public_key, self.signature, self.signed_bytes())

    def digest(self) -> bytes:
        """Chaining hash that the next segment carries as prev_hash."""
        return hashlib.blake2s(self.encode(), digest_size=HASH_SIZE).digest()

    @property
    def stream_size(self) -> int:
        return 8 + 8 * len(self.addrs) + (len(self.bits) + 7) // 8

    @property
    def evidence_size(self) -> int:
        """Control-flow evidence: the measurement stream plus the return hash."""
        return self.stream_size + HASH_SIZE


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError(f"truncated blob at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def stream(self):
        (nbytes,) = self.unpack("<I")
        if nbytes % 8:
            raise DecodeError("S_addr size is not a multiple of 8")
        raw = self.take(nbytes)
        addrs = tuple(int.from_bytes(raw[i:i + 8], "little") for i in range(0, nbytes, 8))
        (nbits,) = self.unpack("<I")
        packed = self.take((nbits + 7) // 8)
        if nbits % 8 and packed[-1] >> (nbits % 8):
            raise DecodeError("nonzero padding in S_bin")
        return addrs, unpack_bits(packed, nbits)

    def interrupts(self, depth: int = 0):
        if depth > 8:
            raise DecodeError("interrupt records nested too deeply")
        (count,) = self.unpack("<B")
        recs = []
        for _ in range(count):
            irq, entry, resume = self.unpack("<HQQ")
            addrs, bits = self.stream()
            h = self.take(HASH_SIZE)
            recs.append(InterruptRecord(irq, entry, addrs, bits, h, self.interrupts(depth + 1),
                                        resume))
        return tuple(recs)


def decode_blob(data: bytes) -> AttestationBlob:
    r = _Reader(bytes(data))
    version, flags, op_id, segment = r.unpack("<BBHH")
    if version != VERSION:
        raise DecodeError(f"unsupported blob version {version}")
    if flags & ~FLAG_FINAL:
        raise DecodeError(f"unknown flag bits {flags:#x}")
    prev = r.take(HASH_SIZE)
    nonce = r.take(NONCE_SIZE)
    addrs, bits = r.stream()
    h = r.take(HASH_SIZE)
    (f,) = r.unpack("<B")
    if f not in (0, 1):
        raise DecodeError(f"invalid violation flag {f}")
    context = ()
    if f:
        (count,) = r.unpack("<B")
        context = tuple(r.unpack("<QQ") for _ in range(count))
    interrupts = r.interrupts()
    sig = r.take(SIGNATURE_SIZE)
    if r.pos != len(r.data):
        raise DecodeError(f"{len(r.data) - r.pos} trailing bytes")
    return AttestationBlob(op_id, nonce, addrs, bits, h, bool(f), context, interrupts,
                           segment, prev, bool(flags & FLAG_FINAL), version, sig)


def encode_blob(blob: AttestationBlob) -> bytes:
    return blob.encode()
