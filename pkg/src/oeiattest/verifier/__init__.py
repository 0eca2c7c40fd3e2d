"""Verifier side: abstract execution over the CFG bundle and blob checks."""
from .abstract import (CFI_TARGET, CVI_VIOLATION, FAILURE_CLASSES, HASH_MISMATCH,
                       INTERRUPT_MISMATCH, NONCE_MISMATCH, OPERATION_MISMATCH, PASS,
                       SEGMENT_CHAIN, SIGNATURE, STRUCTURE, BundleError, CfgIndex, WalkResult,
                       abstract_execute)
from .oracle import EnumerationLimit, Proof, enumerate_legal_proofs
from .verify import ReplaySet, VerificationReport, check_chain, split_executions, verify

__all__ = [
    "BundleError", "CFI_TARGET", "CVI_VIOLATION", "CfgIndex", "EnumerationLimit",
    "FAILURE_CLASSES", "HASH_MISMATCH", "INTERRUPT_MISMATCH", "NONCE_MISMATCH",
    "OPERATION_MISMATCH", "PASS", "Proof", "ReplaySet", "SEGMENT_CHAIN", "SIGNATURE",
    "STRUCTURE", "VerificationReport", "WalkResult", "abstract_execute", "check_chain",
    "enumerate_legal_proofs", "split_executions", "verify",
]
