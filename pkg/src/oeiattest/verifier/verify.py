"""Blob verification: signature, nonce, segment chain, operation identity,
interrupt correspondence, abstract execution and the CVI flag."""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

from ..measure.blob import AttestationBlob
from ..measure.hashchain import ZERO_HASH
from .abstract import (CFI_TARGET, CVI_VIOLATION, HASH_MISMATCH, INTERRUPT_MISMATCH,
                       NONCE_MISMATCH, OPERATION_MISMATCH, PASS, SEGMENT_CHAIN, SIGNATURE,
                       STRUCTURE, CfgIndex, abstract_execute)

CLASS_SYMBOL = {CFI_TARGET: "(1)", STRUCTURE: "(2)", HASH_MISMATCH: "(3)"}


class ReplaySet:
    """Nonces already accepted; safe to share between threads."""

    def __init__(self):
        self._seen: set[bytes] = set()
        self._lock = threading.Lock()

    def consume(self, nonce: bytes) -> bool:
        """Insert if absent; False when the nonce was already used."""
        with self._lock:
            if nonce in self._seen:
                return False
            self._seen.add(nonce)
            return True

    def __contains__(self, nonce: bytes) -> bool:
        with self._lock:
            return nonce in self._seen

    def __len__(self) -> int:
        with self._lock:
            return len(self._seen)


@dataclass
class VerificationReport:
    verdict: str
    op_id: int
    failure: str | None = None
    message: str = ""
    paths: list[list[int]] = field(default_factory=list)
    interrupt_paths: list[list[list[int]]] = field(default_factory=list)
    context: list[tuple[int, int]] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @property
    def path(self) -> list[int]:
        return [a for p in self.paths for a in p]

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "op_id": self.op_id,
            "failure": self.failure,
            "message": self.message,
            "paths": [[hex(a) for a in p] for p in self.paths],
            "interrupt_paths": [[[hex(a) for a in p] for p in ps] for ps in self.interrupt_paths],
            "context": [{"variable": hex(v), "return_address": hex(r)} for v, r in self.context],
            "stats": self.stats,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"operation {self.op_id}: {self.verdict.upper()}"]
        if self.failure:
            sym = CLASS_SYMBOL.get(self.failure, "")
            lines.append(f"failure: {self.failure} {sym}".rstrip())
            if self.message:
                lines.append(f"detail: {self.message}")
        for i, p in enumerate(self.paths):
            lines.append(f"path[{i}] ({len(p)} addresses): " + " ".join(f"{a:#x}" for a in p))
            for j, ip in enumerate(self.interrupt_paths[i] if i < len(self.interrupt_paths) else []):
                lines.append(f"  interrupt[{j}]: " + " ".join(f"{a:#x}" for a in ip))
        for v, r in self.context:
            lines.append(f"cvi: variable {v:#x} changed (return address {r:#x})")
        if self.stats:
            lines.append("stats: " + ", ".join(f"{k}={v}" for k, v in sorted(self.stats.items())))
        return "\n".join(lines)


def split_executions(blobs: list[AttestationBlob]) -> list[list[AttestationBlob]]:
    """Group segments into executions; a segment index of 0 starts a new one."""
    out: list[list[AttestationBlob]] = []
    for b in blobs:
        if b.segment == 0 or not out:
            out.append([b])
        else:
            out[-1].append(b)
    return out


def check_chain(segments: list[AttestationBlob]) -> str | None:
    prev = ZERO_HASH
    for i, s in enumerate(segments):
        if s.segment != i:
            return f"segment index {s.segment} where {i} was expected"
        if s.prev_hash != prev:
            return f"segment {i} does not link to its predecessor"
        if s.op_id != segments[0].op_id:
            return f"segment {i} belongs to operation {s.op_id}"
        if s.final and i != len(segments) - 1:
            return f"segment {i} is marked final but more segments follow"
        if i < len(segments) - 1 and (s.flag or s.interrupts):
            return f"intermediate segment {i} carries final-only fields"
        prev = s.digest()
    return None


def verify(blobs, bundle, op_id: int, expected_nonce: bytes, public_key: bytes, *,
           replay: ReplaySet | None = None, max_steps: int | None = None) -> VerificationReport:
    """Verify every blob produced by one attestation request for ``op_id``."""
    idx = CfgIndex.of(bundle)
    blobs = list(blobs)
    stats = {"blobs": len(blobs), "steps": 0, "bits": 0, "addresses": 0}

    def fail(cls, msg, **kw):
        return VerificationReport("fail", op_id, cls, msg, stats=stats, **kw)

    for i, b in enumerate(blobs):
        if not b.verify_signature(public_key):
            return fail(SIGNATURE, f"blob {i} signature does not verify")
    for i, b in enumerate(blobs):
        if b.nonce != expected_nonce:
            return fail(NONCE_MISMATCH, f"blob {i} carries nonce {b.nonce.hex()}")
    if replay is not None and not replay.consume(expected_nonce):
        return fail(NONCE_MISMATCH, "nonce was already used")

    executions = split_executions(blobs)
    stats["executions"] = len(executions)
    for segs in executions:
        err = check_chain(segs)
        if err:
            return fail(SEGMENT_CHAIN, err)
    other = sorted({segs[0].op_id for segs in executions} - {op_id})
    if other:
        return fail(OPERATION_MISMATCH, f"evidence is for operation(s) {other}, "
                                        f"not the requested {op_id}")
    if not executions:
        return fail(OPERATION_MISMATCH, f"operation {op_id} was not executed")

    kw = {} if max_steps is None else {"max_steps": max_steps}
    paths: list[list[int]] = []
    irq_paths: list[list[list[int]]] = []
    for segs in executions:
        last = segs[-1]
        for rec in last.interrupts:
            vec = idx.vectors.get(rec.irq_id)
            if vec is None or vec["entry"] != rec.handler_entry:
                return fail(INTERRUPT_MISMATCH, f"interrupt {rec.irq_id} ran handler at "
                                                f"{rec.handler_entry:#x}", paths=paths)

    for segs in executions:
        last = segs[-1]
        bits = [x for s in segs for x in s.bits]
        addrs = [x for s in segs for x in s.addrs]
        w = abstract_execute(idx, op_id, bits, addrs, last.ret_hash, **kw)
        stats["steps"] += w.steps
        stats["bits"] += w.bits_used
        stats["addresses"] += w.addrs_used
        if not w.ok:
            return fail(w.status, w.message, paths=paths + [w.path])
        if not last.final:
            return fail(STRUCTURE, "operation did not reach its exit", paths=paths + [w.path])
        paths.append(w.path)
        handler_paths = []
        op = idx.operation(op_id)
        visited = [idx.by_start[s] for s in set(w.path) if s in idx.by_start]
        visited += [idx.containing(op["function"], op["entry"]),
                    idx.containing(op["function"], op["exit"])]
        for rec in last.interrupts:
            if not any(b.start <= rec.resume <= b.end for b in visited):
                return fail(INTERRUPT_MISMATCH, f"interrupt {rec.irq_id} preempted "
                                                f"{rec.resume:#x}, outside the operation path",
                            paths=paths)
            hw = abstract_execute(idx, None, rec.bits, rec.addrs, rec.ret_hash,
                                  handler_entry=rec.handler_entry, resume=rec.resume, **kw)
            stats["steps"] += hw.steps
            if not hw.ok:
                return fail(hw.status, f"interrupt {rec.irq_id}: {hw.message}", paths=paths,
                            interrupt_paths=irq_paths + [handler_paths + [hw.path]])
            if rec.interrupts:
                return fail(INTERRUPT_MISMATCH, "nested interrupt records are not expected",
                            paths=paths)
            handler_paths.append(hw.path)
        irq_paths.append(handler_paths)
        if last.flag:
            return fail(CVI_VIOLATION, f"{len(last.context)} critical-variable check(s) failed",
                        paths=paths, interrupt_paths=irq_paths, context=list(last.context))
    return VerificationReport("pass", op_id, None, "", paths, irq_paths, [], stats)
