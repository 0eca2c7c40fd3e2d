"""Inclusion-based (Andersen) points-to analysis over MiniIR.

Flow- and context-insensitive.  Arrays are single abstract objects (no
per-element distinction).  ``pts[v]`` is the set of abstract objects the
memory of variable ``v`` may hold the address of: variables (VarRef),
functions (FuncRef) or block labels (LabelRef).
"""
from __future__ import annotations

from collections import defaultdict

from ..ir import (AddressOf, Assign, BinOp, Call, CallIndirect, Const, FuncRef,
                  GetElement, JumpIndirect, Load, Program, Return, Store, VarRef)

PointsTo = dict[VarRef, frozenset]


def _ret_values(program: Program) -> dict[str, list[VarRef]]:
    rets: dict[str, list[VarRef]] = defaultdict(list)
    for f, _, _, ins in program.instructions():
        if isinstance(ins, Return) and isinstance(ins.value, VarRef):
            rets[f.name].append(ins.value)
    return rets


def _is_array(program: Program, ref: VarRef) -> bool:
    d = program.decl(ref)
    return d is not None and d.kind == "array"


def points_to(program: Program) -> PointsTo:
    pts: dict[VarRef, set] = defaultdict(set)
    rets = _ret_values(program)
    params = {f.name: [VarRef(f.name, p.name) for p in f.params] for f in program.functions}

    for d in program.globals:
        for v in d.init:
            if isinstance(v, FuncRef):
                pts[VarRef(None, d.name)].add(v)

    def copy(dst: VarRef, src) -> bool:
        if not isinstance(src, VarRef):
            return False
        add = pts[src] - pts[dst]
        if add:
            pts[dst] |= add
            return True
        return False

    def bind_call(callee: str, args, dest) -> bool:
        changed = False
        formals = params.get(callee, [])
        if len(formals) != len(args):
            return False
        for p, a in zip(formals, args):
            changed |= copy(p, a)
        if dest is not None:
            for r in rets.get(callee, ()):
                changed |= copy(dest, r)
        return changed

    instrs = [ins for _, _, _, ins in program.instructions()]
    changed = True
    while changed:
        changed = False
        for ins in instrs:
            if isinstance(ins, AddressOf):
                if ins.target not in pts[ins.dest]:
                    pts[ins.dest].add(ins.target)
                    changed = True
            elif isinstance(ins, GetElement):
                if _is_array(program, ins.base):
                    if ins.base not in pts[ins.dest]:
                        pts[ins.dest].add(ins.base)
                        changed = True
                else:
                    changed |= copy(ins.dest, ins.base)
            elif isinstance(ins, Assign):
                changed |= copy(ins.dest, ins.src)
            elif isinstance(ins, BinOp):
                # pointer arithmetic keeps the operand's pointees
                changed |= copy(ins.dest, ins.lhs)
                changed |= copy(ins.dest, ins.rhs)
            elif isinstance(ins, Load):
                if _is_array(program, ins.base):
                    changed |= copy(ins.dest, ins.base)
                else:
                    for o in list(pts[ins.base]):
                        if isinstance(o, VarRef):
                            changed |= copy(ins.dest, o)
            elif isinstance(ins, Store):
                if isinstance(ins.value, Const):
                    continue
                if _is_array(program, ins.base):
                    changed |= copy(ins.base, ins.value)
                else:
                    for o in list(pts[ins.base]):
                        if isinstance(o, VarRef):
                            changed |= copy(o, ins.value)
            elif isinstance(ins, Call):
                changed |= bind_call(ins.func, ins.args, ins.dest)
            elif isinstance(ins, CallIndirect):
                for o in list(pts[ins.target]):
                    if isinstance(o, FuncRef):
                        changed |= bind_call(o.name, ins.args, ins.dest)
    return {v: frozenset(s) for v, s in pts.items() if s}


def indirect_targets(program: Program, pts: PointsTo) -> dict[int, set]:
    """Abstract objects reachable through each indirect call/jump operand."""
    out = {}
    for _, _, _, ins in program.instructions():
        if isinstance(ins, (CallIndirect, JumpIndirect)):
            out[ins.addr] = set(pts.get(ins.target, ()))
    return out
