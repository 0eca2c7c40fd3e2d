"""Return-address hash chain: H' = BLAKE2s-256(H || le64(ret_addr))."""
from __future__ import annotations

import hashlib
from typing import Iterable

HASH_SIZE = 32
ZERO_HASH = bytes(HASH_SIZE)
MASK64 = (1 << 64) - 1


def le64(value: int) -> bytes:
    return (value & MASK64).to_bytes(8, "little")


def hash_update(h: bytes, ret_addr: int) -> bytes:
    if len(h) != HASH_SIZE:
        raise ValueError(f"hash state must be {HASH_SIZE} bytes, got {len(h)}")
    return hashlib.blake2s(h + le64(ret_addr), digest_size=HASH_SIZE).digest()


def hash_sequence(addrs: Iterable[int], seed: bytes = ZERO_HASH) -> bytes:
    h = seed
    for a in addrs:
        h = hash_update(h, a)
    return h
