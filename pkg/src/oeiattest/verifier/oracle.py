"""Bounded enumeration of legal paths and the proofs a prover would emit."""
from __future__ import annotations

from dataclasses import dataclass

from ..measure.hashchain import ZERO_HASH, hash_update
from .abstract import CfgIndex

DEFAULT_LOOP_BOUND = 3


class EnumerationLimit(RuntimeError):
    pass


@dataclass(frozen=True)
class Proof:
    bits: tuple[int, ...]
    addrs: tuple[int, ...]
    ret_hash: bytes
    path: tuple[int, ...]

    @property
    def evidence(self) -> tuple:
        return self.bits, self.addrs, self.ret_hash


def enumerate_legal_proofs(bundle, op_id: int, depth_bound: int = 6,
                           loop_bound: int = DEFAULT_LOOP_BOUND,
                           max_proofs: int = 200_000) -> list[Proof]:
    """All legal paths of the operation within the bounds, with their proofs.

    A block may be entered at most ``loop_bound + 1`` times per function
    activation and calls nest at most ``depth_bound`` deep.
    """
    idx = CfgIndex.of(bundle)
    op = idx.operation(op_id)
    func, begin, end = op["function"], op["entry"], op["exit"]
    first = idx.containing(func, begin)
    if first.start <= end <= first.end and end > begin:
        return [Proof((), (), ZERO_HASH, (begin, end))]

    proofs: list[Proof] = []
    # (block, call stack of (cont, caller visit counts), visits, path, bits, addrs, hash)
    work = [(first, (), {first.start: 1}, (begin,), (), (), ZERO_HASH)]
    while work:
        b, stack, visits, path, bits, addrs, h = work.pop()
        t = b.term
        kind = t["kind"]
        moves = []   # (next, stack, bits, addrs, hash, new_activation)
        if kind == "branch":
            moves.append((t["not_taken"], stack, bits + (0,), addrs, h, False))
            moves.append((t["taken"], stack, bits + (1,), addrs, h, False))
        elif kind == "jump":
            moves.append((t["target"], stack, bits, addrs, h, False))
        elif kind == "call":
            moves.append((t["callee_entry"], stack + ((t["cont"], visits),), bits, addrs, h, True))
        elif kind == "call_indirect":
            for dst in sorted(idx.targets.get(t["addr"], ()), reverse=True):
                moves.append((dst, stack + ((t["cont"], visits),), bits, addrs + (dst,), h, True))
        elif kind == "jump_indirect":
            for dst in sorted(idx.targets.get(t["addr"], ()), reverse=True):
                moves.append((dst, stack, bits, addrs + (dst,), h, False))
        elif kind == "ret":
            if stack:
                cont, caller_visits = stack[-1]
                moves.append((cont, stack[:-1], bits, addrs, hash_update(h, cont), caller_visits))
        for nxt, st, bs, ads, hh, activation in moves:
            if len(st) > depth_bound:
                continue
            if activation is True:
                v = {}
            elif activation is False:
                v = visits
            else:
                v = activation
            count = v.get(nxt, 0) + 1
            if count > loop_bound + 1:
                continue
            v = dict(v)
            v[nxt] = count
            nb = idx.by_start[nxt]
            npath = path + (nxt,)
            if not st and nb.func == func and nb.start <= end <= nb.end:
                proofs.append(Proof(bs, ads, hh, npath + (end,)))
                if len(proofs) > max_proofs:
                    raise EnumerationLimit(f"more than {max_proofs} proofs")
                continue
            work.append((nb, st, v, npath, bs, ads, hh))
    return proofs
