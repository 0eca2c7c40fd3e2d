"""Device signing keys (Ed25519: deterministic, 64-byte signatures)."""
from __future__ import annotations

import os
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (Ed25519PrivateKey,
                                                               Ed25519PublicKey)
from cryptography.hazmat.primitives.serialization import (Encoding, NoEncryption,
                                                          PrivateFormat, PublicFormat)

SIGNATURE_SIZE = 64
PUBLIC_KEY_SIZE = 32


class DeviceKey:
    """Stands in for the hardware-provisioned attestation key."""

    def __init__(self, private: Ed25519PrivateKey):
        self._private = private

    @classmethod
    def generate(cls) -> "DeviceKey":
        return cls(Ed25519PrivateKey.generate())

    @classmethod
    def from_seed(cls, seed: bytes) -> "DeviceKey":
        if len(seed) != 32:
            raise ValueError("seed must be 32 bytes")
        return cls(Ed25519PrivateKey.from_private_bytes(seed))

    @property
    def seed(self) -> bytes:
        return self._private.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())

    @property
    def public_bytes(self) -> bytes:
        return self._private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.seed.hex() + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DeviceKey":
        return cls.from_seed(bytes.fromhex(Path(path).read_text().strip()))


def verify_signature(public_key: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def load_public_key(path: str | os.PathLike) -> bytes:
    raw = bytes.fromhex(Path(path).read_text().strip())
    if len(raw) != PUBLIC_KEY_SIZE:
        raise ValueError(f"public key must be {PUBLIC_KEY_SIZE} bytes")
    return raw


def save_public_key(public_key: bytes, path: str | os.PathLike) -> None:
    Path(path).write_text(public_key.hex() + "\n")
