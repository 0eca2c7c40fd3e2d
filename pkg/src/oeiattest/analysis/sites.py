"""Instrumentation site selection.

Control sites cover the minimal event set needed to rebuild a path:
conditional branches, indirect calls/jumps and returns inside operation
scopes.  Direct calls and jumps are statically determined and never
instrumented.  Data sites cover every access to a critical variable,
program wide.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..ir import (Branch, CallIndirect, FuncRef, JumpIndirect, LabelRef, Program,
                  Return)
from .access import Access, accesses, all_accesses, entry_accesses
from .cfg import Cfg
from .critical import CriticalSet
from .pointsto import PointsTo
from .scopes import OperationScope, reachable_functions

COND_BRANCH = "cond-branch"
INDIRECT_CALL = "indirect-call"
INDIRECT_JUMP = "indirect-jump"
RETURN = "return"


@dataclass(frozen=True, order=True)
class ControlSite:
    addr: int
    kind: str
    ops: tuple[int, ...] = ()   # operations whose scope contains the site


@dataclass(frozen=True)
class DataSite:
    addr: int
    kind: str   # define | use
    var: object
    mode: str = "direct"

    @property
    def access(self) -> Access:
        return Access(self.kind, self.var, self.mode)


@dataclass(frozen=True)
class SiteList:
    control: tuple[ControlSite, ...] = ()
    data: tuple[DataSite, ...] = ()

    def __len__(self) -> int:
        return len(self.control) + len(self.data)


def _control_kind(ins) -> str | None:
    if isinstance(ins, Branch):
        return COND_BRANCH
    if isinstance(ins, CallIndirect):
        return INDIRECT_CALL
    if isinstance(ins, JumpIndirect):
        return INDIRECT_JUMP
    if isinstance(ins, Return):
        return RETURN
    return None


def _is_critical_access(a: Access, critical: CriticalSet) -> bool:
    if a.mode == "pointer":
        return a.var in critical.pointers
    return a.var in critical.variables


def select_sites(program: Program, scopes: list[OperationScope], critical: CriticalSet,
                 cfgs: dict[str, Cfg] | None = None) -> SiteList:
    """Build the site list.  Interrupt handlers (and what they call) get control
    sites too, since they run as sub-programs of whatever operation they hit."""
    control: dict[int, tuple[str, set]] = {}

    def add(ins, op_id):
        kind = _control_kind(ins)
        if kind is not None:
            entry = control.setdefault(ins.addr, (kind, set()))
            if op_id is not None:
                entry[1].add(op_id)

    for s in scopes:
        f = program.function(s.function)
        for b in f.blocks:
            if b.label in s.blocks:
                add(b.terminator, s.op_id)
        for fname in sorted(s.functions):
            for b in program.function(fname).blocks:
                add(b.terminator, s.op_id)
    if program.vectors and cfgs is not None:
        for fname in sorted(reachable_functions(cfgs, [h for _, h in program.vectors])):
            for b in program.function(fname).blocks:
                add(b.terminator, None)

    data = []
    for addr, a in all_accesses(program):
        if _is_critical_access(a, critical):
            data.append(DataSite(addr, a.kind, a.var, a.mode))
    ctl = tuple(ControlSite(addr, kind, tuple(sorted(ops)))
                for addr, (kind, ops) in sorted(control.items()))
    return SiteList(ctl, tuple(data))


def count_address_based_sites(program: Program) -> int:
    """Sites an address-based checker instruments: every memory read and write."""
    return len(all_accesses(program))


def target_sets(program: Program, pts: PointsTo) -> dict[int, frozenset[int]]:
    """Allowed destinations of every indirect call/jump site."""
    out = {}
    for f in program.functions:
        starts = {b.label: b.start for b in f.blocks}
        for b in f.blocks:
            t = b.terminator
            if isinstance(t, CallIndirect):
                objs = pts.get(t.target, ())
                out[t.addr] = frozenset(program.function(o.name).entry
                                        for o in objs if isinstance(o, FuncRef))
            elif isinstance(t, JumpIndirect):
                objs = pts.get(t.target, ())
                out[t.addr] = frozenset(starts[o.label] for o in objs
                                        if isinstance(o, LabelRef) and o.func == f.name)
    return out


__all__ = ["ControlSite", "DataSite", "SiteList", "select_sites",
           "count_address_based_sites", "target_sets", "accesses", "entry_accesses"]
