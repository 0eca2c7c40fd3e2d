"""Critical variable identification and fixpoint expansion."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..ir import (Assign, BinOp, Branch, Call, CallIndirect, FuncRef,
                  GetElement, Input, Load, Program, Return, Store, VarRef)
from .pointsto import PointsTo

AUTO = "auto-control-dependent"
ANNOTATED = "annotated"
POINTER = "pointer-expansion"
DEPENDENCY = "dependency-expansion"


@dataclass(frozen=True)
class CriticalSet:
    variables: frozenset
    pointers: frozenset
    provenance: Mapping[VarRef, str] = field(compare=False, hash=False)
    iterations: int = field(default=0, compare=False)

    def __contains__(self, ref) -> bool:
        return ref in self.variables


def detect_control_dependent_vars(program: Program) -> set[VarRef]:
    """Variables read by a conditional branch."""
    out = set()
    for _, _, _, ins in program.instructions():
        if isinstance(ins, Branch):
            out.update(o for o in (ins.lhs, ins.rhs) if isinstance(o, VarRef))
    return out


def annotated_vars(program: Program) -> set[VarRef]:
    return {ref for ref, d in program.variables() if d.critical}


def initial_set(program: Program) -> dict[VarRef, str]:
    init = {v: AUTO for v in detect_control_dependent_vars(program)}
    for v in annotated_vars(program):
        init.setdefault(v, ANNOTATED)
    return init


def _vars(*ops) -> set[VarRef]:
    return {o for o in ops if isinstance(o, VarRef)}


def data_dependencies(program: Program, pts: PointsTo) -> dict[VarRef, set[VarRef]]:
    """variable -> variables whose values flow into one of its definitions."""
    deps: dict[VarRef, set[VarRef]] = defaultdict(set)
    rets: dict[str, set[VarRef]] = defaultdict(set)
    params = {f.name: [VarRef(f.name, p.name) for p in f.params] for f in program.functions}
    for f, _, _, ins in program.instructions():
        if isinstance(ins, Return):
            rets[f.name] |= _vars(ins.value)

    def is_array(ref):
        return program.decl(ref).kind == "array"

    def pointees(ref):
        return {o for o in pts.get(ref, ()) if isinstance(o, VarRef)}

    def bind(callee, args, dest):
        for p, a in zip(params.get(callee, []), args):
            deps[p] |= _vars(a)
        if dest is not None:
            deps[dest] |= rets[callee]

    for _, _, _, ins in program.instructions():
        if isinstance(ins, Assign):
            deps[ins.dest] |= _vars(ins.src)
        elif isinstance(ins, BinOp):
            deps[ins.dest] |= _vars(ins.lhs, ins.rhs)
        elif isinstance(ins, GetElement):
            deps[ins.dest] |= _vars(ins.index)
            if not is_array(ins.base):
                deps[ins.dest].add(ins.base)
        elif isinstance(ins, Load):
            deps[ins.dest] |= _vars(ins.index, ins.base)
            if not is_array(ins.base):
                deps[ins.dest] |= pointees(ins.base)
        elif isinstance(ins, Store):
            src = _vars(ins.value, ins.index)
            if is_array(ins.base):
                deps[ins.base] |= src
            else:
                for o in pointees(ins.base):
                    deps[o] |= src | {ins.base}
        elif isinstance(ins, Input) and ins.base is not None:
            targets = {ins.base} if is_array(ins.base) else pointees(ins.base)
            for o in targets:
                deps[o] |= _vars(ins.count) | ({ins.base} if o != ins.base else set())
        elif isinstance(ins, Call):
            bind(ins.func, ins.args, ins.dest)
        elif isinstance(ins, CallIndirect):
            for o in pts.get(ins.target, ()):
                if isinstance(o, FuncRef):
                    bind(o.name, ins.args, ins.dest)
    return deps


def critical_pointers(variables: Iterable[VarRef], pts: PointsTo) -> set[VarRef]:
    crit = set(variables)
    return {v for v, objs in pts.items() if objs & crit}


def expand_critical_set(program: Program, initial: Mapping[VarRef, str] | Iterable[VarRef],
                        pts: PointsTo) -> CriticalSet:
    """Grow ``initial`` until closed under pointer and dependency rules."""
    if isinstance(initial, Mapping):
        prov = dict(initial)
    else:
        prov = {v: ANNOTATED for v in initial}
    deps = data_dependencies(program, pts)
    iterations = 0
    while True:
        iterations += 1
        changed = False
        members = set(prov)
        for v in sorted(critical_pointers(members, pts) - members, key=str):
            prov[v] = POINTER
            changed = True
        for v in sorted(members, key=str):
            for d in sorted(deps.get(v, ()), key=str):
                if d not in prov:
                    prov[d] = DEPENDENCY
                    changed = True
        if not changed:
            break
    variables = frozenset(prov)
    return CriticalSet(variables, frozenset(critical_pointers(variables, pts)), prov, iterations)
