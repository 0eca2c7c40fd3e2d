"""Prover side: the MiniIR interpreter, fault injection and interrupts."""
from dataclasses import dataclass

from ..instrument import InstrumentedProgram
from ..measure import DeviceKey
from .faults import (ACTIONS, OVERWRITE_INDIRECT_TARGET, OVERWRITE_RETURN, OVERWRITE_VAR,
                     FaultError, FaultSpec, InterruptEvent, parse_var)
from .machine import (DATA_BASE, AppliedFault, STACK_BASE, Execution, Machine, RunResult, RuntimeFault,
                      binop, run)


@dataclass(frozen=True)
class SizePair:
    hashed: int
    baseline: int
    returns: int

    @property
    def ratio(self) -> float:
        return self.hashed / self.baseline if self.baseline else 1.0


def evidence_size(executions, with_hash: bool = True) -> int:
    """Stream bytes of every segment, plus one 32-byte H per execution when
    returns are hashed.  The pure-trace baseline carries no H."""
    total = 0
    for e in executions:
        total += sum(b.stream_size for b in e.blobs) + (32 if with_hash else 0)
    return total


def run_benign_pair(ip: InstrumentedProgram, op_id: int, inputs=(), key: DeviceKey | None = None,
                    **kw) -> tuple[RunResult, RunResult, SizePair]:
    """Run once hashing returns and once appending them to S_addr."""
    key = key or DeviceKey.from_seed(bytes(32))
    hashed = run(ip, op_id, inputs, key=key, hash_returns=True, **kw)
    plain = run(ip, op_id, inputs, key=key, hash_returns=False, **kw)
    h_execs, p_execs = hashed.for_op(op_id), plain.for_op(op_id)
    n_ret = (sum(len(b.addrs) for e in p_execs for b in e.blobs)
             - sum(len(b.addrs) for e in h_execs for b in e.blobs))
    return hashed, plain, SizePair(evidence_size(h_execs), evidence_size(p_execs, with_hash=False), n_ret)


__all__ = [
    "ACTIONS", "AppliedFault", "DATA_BASE", "Execution", "FaultError", "FaultSpec", "InterruptEvent",
    "Machine", "OVERWRITE_INDIRECT_TARGET", "OVERWRITE_RETURN", "OVERWRITE_VAR",
    "RunResult", "RuntimeFault", "STACK_BASE", "SizePair", "binop", "evidence_size",
    "parse_var", "run", "run_benign_pair",
]
