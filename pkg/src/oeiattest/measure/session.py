"""Per-operation measurement state and the engine that drives it."""
from __future__ import annotations

from dataclasses import dataclass, field

from .blob import AttestationBlob, InterruptRecord
from .cvi import CviState
from .hashchain import ZERO_HASH, hash_update
from .keys import DeviceKey

DEFAULT_CAPACITY = 4096


class MeasurementError(RuntimeError):
    pass


@dataclass
class Trace:
    """Forward-edge trace plus return hash for one (sub-)program."""

    bits: list[int] = field(default_factory=list)
    addrs: list[int] = field(default_factory=list)
    ret_hash: bytes = ZERO_HASH
    hash_returns: bool = True

    def record_branch(self, taken: bool) -> None:
        self.bits.append(1 if taken else 0)

    def record_indirect(self, dest: int) -> None:
        self.addrs.append(dest)

    def record_return(self, ret_addr: int) -> None:
        if self.hash_returns:
            self.ret_hash = hash_update(self.ret_hash, ret_addr)
        else:
            # pure-trace baseline: returns go into the address trace
            self.addrs.append(ret_addr)

    @property
    def buffered(self) -> int:
        return 8 * len(self.addrs) + (len(self.bits) + 7) // 8


@dataclass
class InterruptSession(Trace):
    irq_id: int = 0
    handler_entry: int = 0
    resume: int = 0
    interrupts: list[InterruptRecord] = field(default_factory=list)

    def record(self) -> InterruptRecord:
        return InterruptRecord(self.irq_id, self.handler_entry, tuple(self.addrs),
                               tuple(self.bits), self.ret_hash, tuple(self.interrupts),
                               self.resume)


class MeasurementSession(Trace):
    """Measurement of one operation execution.

    When the buffered trace would exceed ``capacity`` bytes, the current
    contents are sealed into a signed segment and the buffer restarts; the
    return hash keeps chaining across segments.
    """

    def __init__(self, op_id: int, nonce: bytes, key: DeviceKey,
                 capacity: int = DEFAULT_CAPACITY, hash_returns: bool = True):
        super().__init__(hash_returns=hash_returns)
        self.op_id = op_id
        self.nonce = nonce
        self.key = key
        self.capacity = capacity
        self.segments: list[AttestationBlob] = []
        self.interrupts: list[InterruptRecord] = []
        self.stack: list[InterruptSession] = []
        self.prev_hash = ZERO_HASH

    @property
    def current(self) -> Trace:
        return self.stack[-1] if self.stack else self

    def _reserve(self, nbytes: int) -> None:
        if self.buffered and self.buffered + nbytes > self.capacity:
            self.flush_segment()

    def record_branch(self, taken: bool) -> None:
        if self.stack:
            self.stack[-1].record_branch(taken)
            return
        self._reserve(1 if len(self.bits) % 8 == 0 else 0)
        super().record_branch(taken)

    def record_indirect(self, dest: int) -> None:
        if self.stack:
            self.stack[-1].record_indirect(dest)
            return
        self._reserve(8)
        super().record_indirect(dest)

    def record_return(self, ret_addr: int) -> None:
        if self.stack:
            self.stack[-1].record_return(ret_addr)
            return
        if not self.hash_returns:
            self._reserve(8)
        super().record_return(ret_addr)

    def begin_interrupt(self, irq_id: int, handler_entry: int,
                        resume: int = 0) -> InterruptSession:
        child = InterruptSession(irq_id=irq_id, handler_entry=handler_entry, resume=resume,
                                 hash_returns=self.hash_returns)
        self.stack.append(child)
        return child

    def end_interrupt(self, ret_addr: int | None = None) -> InterruptRecord:
        """``ret_addr`` is where the handler actually returns to."""
        if not self.stack:
            raise MeasurementError("end_interrupt without begin_interrupt")
        child = self.stack.pop()
        if ret_addr is not None:
            child.record_return(ret_addr)
        rec = child.record()
        if self.stack:
            self.stack[-1].interrupts.append(rec)
        else:
            self.interrupts.append(rec)
        return rec

    def _seal(self, final: bool, cvi: CviState | None) -> AttestationBlob:
        flag = bool(cvi and cvi.flag) if final else False
        blob = AttestationBlob(
            op_id=self.op_id, nonce=self.nonce, addrs=tuple(self.addrs), bits=tuple(self.bits),
            ret_hash=self.ret_hash, flag=flag,
            context=tuple(cvi.context) if flag else (),
            interrupts=tuple(self.interrupts) if final else (),
            segment=len(self.segments), prev_hash=self.prev_hash, final=final,
        ).sign(self.key)
        self.segments.append(blob)
        self.prev_hash = blob.digest()
        self.bits, self.addrs = [], []
        return blob

    def flush_segment(self) -> AttestationBlob:
        return self._seal(False, None)

    def finalize_blob(self, cvi: CviState, complete: bool = True) -> list[AttestationBlob]:
        """Seal the last segment.  ``complete`` is False for an aborted run."""
        if self.stack and complete:
            raise MeasurementError("operation ended inside an interrupt handler")
        while self.stack:
            self.end_interrupt()
        self._seal(complete, cvi)
        return list(self.segments)


class MeasurementEngine:
    """Prover-side trusted state: the active session and global CVI state."""

    def __init__(self, key: DeviceKey, nonce: bytes, capacity: int = DEFAULT_CAPACITY,
                 hash_returns: bool = True):
        if len(nonce) != 16:
            raise ValueError("nonce must be 16 bytes")
        self.key = key
        self.nonce = nonce
        self.capacity = capacity
        self.hash_returns = hash_returns
        self.cvi = CviState()
        self.session: MeasurementSession | None = None
        self.executions: list[list[AttestationBlob]] = []

    @property
    def active(self) -> bool:
        return self.session is not None

    def attest_begin(self, op_id: int) -> None:
        if self.session is not None:
            raise MeasurementError(f"operation {op_id} started inside operation "
                                   f"{self.session.op_id}")
        self.session = MeasurementSession(op_id, self.nonce, self.key, self.capacity,
                                          self.hash_returns)

    def attest_end(self, op_id: int) -> list[AttestationBlob]:
        s = self.session
        if s is None or s.op_id != op_id:
            raise MeasurementError(f"attest_end {op_id} without a matching begin")
        blobs = s.finalize_blob(self.cvi)
        self._emitted(blobs)
        return blobs

    def abort(self) -> list[AttestationBlob] | None:
        """Seal a partial measurement after a runtime fault."""
        if self.session is None:
            return None
        blobs = self.session.finalize_blob(self.cvi, complete=False)
        self._emitted(blobs)
        return blobs

    def _emitted(self, blobs) -> None:
        # a reported violation is acknowledged by emitting it
        if blobs[-1].flag:
            self.cvi.flag = False
            self.cvi.context = []
        self.executions.append(blobs)
        self.session = None

    def in_interrupt(self) -> bool:
        return self.session is not None and bool(self.session.stack)
