"""The memory-access model shared by site selection, address-based counting
and the interpreter.

Every MiniIR variable lives in memory, so each variable operand read is a
load and each destination write is a store.  Accesses through an array name
are ``element`` accesses; accesses through a pointer's value are ``pointer``
accesses (the pointer variable itself is read by a separate ``direct`` use).
"""
from __future__ import annotations

from dataclasses import dataclass

from ..ir import (AddressOf, Assign, BinOp, Branch, Call, CallIndirect, Function,
                  GetElement, Input, Instr, JumpIndirect, Load, Output, Program,
                  Return, Store, VarRef)

USE = "use"
DEFINE = "define"


@dataclass(frozen=True)
class Access:
    kind: str   # use | define
    var: VarRef
    mode: str = "direct"  # direct | element | pointer


def _uses(*operands) -> list[Access]:
    return [Access(USE, o) for o in operands if isinstance(o, VarRef)]


def _is_array(program: Program, ref: VarRef) -> bool:
    d = program.decl(ref)
    return d is not None and d.kind == "array"


def _deref(program: Program, kind: str, base: VarRef) -> list[Access]:
    if _is_array(program, base):
        return [Access(kind, base, "element")]
    return [Access(USE, base), Access(kind, base, "pointer")]


def accesses(program: Program, ins: Instr) -> list[Access]:
    """Static accesses of one instruction, uses before defines.

    For calls the destination define happens when the callee returns.
    """
    if isinstance(ins, Assign):
        return _uses(ins.src) + [Access(DEFINE, ins.dest)]
    if isinstance(ins, BinOp):
        return _uses(ins.lhs, ins.rhs) + [Access(DEFINE, ins.dest)]
    if isinstance(ins, AddressOf):
        return [Access(DEFINE, ins.dest)]
    if isinstance(ins, GetElement):
        base = [] if _is_array(program, ins.base) else _uses(ins.base)
        return base + _uses(ins.index) + [Access(DEFINE, ins.dest)]
    if isinstance(ins, Load):
        return _uses(ins.index) + _deref(program, USE, ins.base) + [Access(DEFINE, ins.dest)]
    if isinstance(ins, Store):
        return _uses(ins.index, ins.value) + _deref(program, DEFINE, ins.base)
    if isinstance(ins, Input):
        if ins.dest is not None:
            return [Access(DEFINE, ins.dest)]
        return _uses(ins.count) + _deref(program, DEFINE, ins.base)
    if isinstance(ins, Output):
        return _uses(ins.value)
    if isinstance(ins, Branch):
        return _uses(ins.lhs, ins.rhs)
    if isinstance(ins, Call):
        return _uses(*ins.args) + ([Access(DEFINE, ins.dest)] if ins.dest else [])
    if isinstance(ins, CallIndirect):
        return (_uses(ins.target, *ins.args)
                + ([Access(DEFINE, ins.dest)] if ins.dest else []))
    if isinstance(ins, JumpIndirect):
        return _uses(ins.target)
    if isinstance(ins, Return):
        return _uses(ins.value)
    return []


def entry_accesses(func: Function) -> list[Access]:
    """Parameter stores performed on function entry."""
    return [Access(DEFINE, VarRef(func.name, p.name)) for p in func.params]


def all_accesses(program: Program) -> list[tuple[int, Access]]:
    """Every (code address, access) pair in the program, deduplicated, in order."""
    seen = set()
    out = []
    for f in program.functions:
        for a in entry_accesses(f):
            key = (f.entry, a)
            if key not in seen:
                seen.add(key)
                out.append(key)
        for b in f.blocks:
            for ins in b.all():
                for a in accesses(program, ins):
                    key = (ins.addr, a)
                    if key not in seen:
                        seen.add(key)
                        out.append(key)
    return out
