"""Measurement engine: traces, return hash, CVI state and signed blobs."""
from .blob import (AttestationBlob, DecodeError, InterruptRecord, decode_blob, encode_blob,
                   pack_bits, unpack_bits)
from .cvi import Bounds, CviState, UnregisteredPointer, bounds_adjust, clip, cvi_define, cvi_use
from .hashchain import HASH_SIZE, ZERO_HASH, hash_sequence, hash_update
from .keys import DeviceKey, load_public_key, save_public_key, verify_signature
from .session import (DEFAULT_CAPACITY, InterruptSession, MeasurementEngine,
                      MeasurementError, MeasurementSession, Trace)

__all__ = [
    "AttestationBlob", "Bounds", "CviState", "DEFAULT_CAPACITY", "DecodeError", "DeviceKey",
    "HASH_SIZE", "InterruptRecord", "InterruptSession", "MeasurementEngine",
    "MeasurementError", "MeasurementSession", "Trace", "UnregisteredPointer", "ZERO_HASH",
    "bounds_adjust", "clip", "cvi_define", "cvi_use", "decode_blob", "encode_blob",
    "hash_sequence", "hash_update", "load_public_key", "pack_bits", "save_public_key",
    "unpack_bits", "verify_signature",
]
