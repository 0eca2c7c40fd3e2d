"""Abstract execution of an operation over the exported CFG bundle."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..measure.hashchain import ZERO_HASH, hash_update

PASS = "PASS"
SIGNATURE = "SIGNATURE"
NONCE_MISMATCH = "NONCE_MISMATCH"
CFI_TARGET = "CFI_TARGET"          # (1) illegal indirect destination
STRUCTURE = "STRUCTURE"            # (2) trace does not fit the CFG
HASH_MISMATCH = "HASH_MISMATCH"    # (3) recomputed return hash differs
CVI_VIOLATION = "CVI_VIOLATION"
SEGMENT_CHAIN = "SEGMENT_CHAIN"
INTERRUPT_MISMATCH = "INTERRUPT_MISMATCH"
OPERATION_MISMATCH = "OPERATION_MISMATCH"

FAILURE_CLASSES = (SIGNATURE, NONCE_MISMATCH, CFI_TARGET, STRUCTURE, HASH_MISMATCH,
                   CVI_VIOLATION, SEGMENT_CHAIN, INTERRUPT_MISMATCH, OPERATION_MISMATCH)

DEFAULT_MAX_STEPS = 2_000_000
MAX_DEPTH = 4096


class BundleError(ValueError):
    pass


@dataclass(frozen=True)
class Block:
    func: str
    label: str
    start: int
    end: int
    term: dict


class CfgIndex:
    """Lookup tables over a CFG bundle (the dict produced by export_bundle)."""

    def __init__(self, bundle: dict):
        if bundle.get("format") != "oei-cfg-bundle/1":
            raise BundleError(f"unsupported bundle format {bundle.get('format')!r}")
        self.bundle = bundle
        self.by_start: dict[int, Block] = {}
        self.func_blocks: dict[str, list[Block]] = {}
        self.func_entry: dict[str, int] = {}
        for f in bundle["functions"]:
            blocks = [Block(f["name"], b["label"], b["start"], b["end"], b["term"])
                      for b in f["blocks"]]
            self.func_blocks[f["name"]] = blocks
            self.func_entry[f["name"]] = f["entry"]
            for b in blocks:
                self.by_start[b.start] = b
        self.ops = {o["id"]: o for o in bundle["operations"]}
        self.targets = {int(k): frozenset(v) for k, v in bundle["target_sets"].items()}
        self.vectors = {int(k): v for k, v in bundle.get("vectors", {}).items()}
        self.block_count = len(self.by_start)

    @classmethod
    def of(cls, bundle) -> "CfgIndex":
        return bundle if isinstance(bundle, cls) else cls(bundle)

    def operation(self, op_id: int) -> dict:
        try:
            return self.ops[op_id]
        except KeyError:
            raise BundleError(f"no operation {op_id} in bundle") from None

    def containing(self, func: str, addr: int) -> Block:
        for b in self.func_blocks[func]:
            if b.start <= addr <= b.end:
                return b
        raise BundleError(f"address {addr:#x} is not in {func}")


@dataclass
class WalkResult:
    status: str
    message: str = ""
    path: list[int] = field(default_factory=list)
    computed_hash: bytes = ZERO_HASH
    steps: int = 0
    bits_used: int = 0
    addrs_used: int = 0

    @property
    def ok(self) -> bool:
        return self.status == PASS


def abstract_execute(bundle, op_id: int | None, bits, addrs, claimed_hash: bytes, *,
                     handler_entry: int | None = None, resume: int = 0,
                     max_steps: int = DEFAULT_MAX_STEPS) -> WalkResult:
    """Follow the forward-edge trace through the CFG from the operation entry.

    Branches consume one bit, indirect transfers one address, direct calls
    push their continuation and returns pop it into the recomputed hash.
    With ``handler_entry`` the walk covers an interrupt handler instead and
    ends at the handler's own return, which folds ``resume`` into the hash.
    """
    idx = CfgIndex.of(bundle)
    bits = list(bits)
    addrs = list(addrs)
    h = ZERO_HASH
    stack: list[int] = []
    bi = ai = steps = 0

    if handler_entry is not None:
        end = None
        op_func = None
        b = idx.by_start.get(handler_entry)
        if b is None:
            return WalkResult(STRUCTURE, f"handler entry {handler_entry:#x} is not a block")
        path = [handler_entry]
    else:
        op = idx.operation(op_id)
        op_func, end = op["function"], op["exit"]
        b = idx.containing(op_func, op["entry"])
        path = [op["entry"]]
        if b.start <= end <= b.end and end > op["entry"]:
            path.append(end)
            b = None

    def fail(status, msg):
        return WalkResult(status, msg, path, h, steps, bi, ai)

    while b is not None:
        steps += 1
        if steps > max_steps:
            return fail(STRUCTURE, "step budget exhausted without consuming the trace")
        t = b.term
        kind, site = t["kind"], t["addr"]
        if kind == "branch":
            if bi >= len(bits):
                return fail(STRUCTURE, f"S_bin exhausted at branch {site:#x}")
            nxt = t["taken"] if bits[bi] else t["not_taken"]
            bi += 1
        elif kind == "jump":
            nxt = t["target"]
        elif kind == "call":
            stack.append(t["cont"])
            nxt = t["callee_entry"]
        elif kind in ("call_indirect", "jump_indirect"):
            if ai >= len(addrs):
                return fail(STRUCTURE, f"S_addr exhausted at indirect transfer {site:#x}")
            nxt = addrs[ai]
            ai += 1
            if nxt not in idx.targets.get(site, ()):
                return fail(CFI_TARGET, f"destination {nxt:#x} not allowed at {site:#x}")
            if kind == "call_indirect":
                stack.append(t["cont"])
        elif kind == "ret":
            if not stack:
                if handler_entry is not None:
                    h = hash_update(h, resume)
                    break
                return fail(STRUCTURE, f"return at {site:#x} pops the bottom of the simulated stack")
            nxt = stack.pop()
            h = hash_update(h, nxt)
        elif kind == "halt":
            return fail(STRUCTURE, f"halt at {site:#x} before the operation exit")
        else:
            raise BundleError(f"unknown terminator kind {kind!r}")
        if len(stack) > MAX_DEPTH:
            return fail(STRUCTURE, "simulated stack exceeds depth limit")
        path.append(nxt)
        b = idx.by_start.get(nxt)
        if b is None:
            return fail(STRUCTURE, f"{nxt:#x} is not a block start")
        if end is not None and not stack and b.func == op_func and b.start <= end <= b.end:
            path.append(end)
            break

    if bi < len(bits) or ai < len(addrs):
        return fail(STRUCTURE, f"leftover trace at exit: {len(bits) - bi} bits, "
                               f"{len(addrs) - ai} addresses")
    if h != claimed_hash:
        return fail(HASH_MISMATCH, "recomputed return hash differs from the reported H")
    return WalkResult(PASS, "", path, h, steps, bi, ai)
