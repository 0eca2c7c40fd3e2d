"""Attach measurement tags to a program.

MiniIR is interpreted, so instrumentation is metadata: each site from the
site list becomes one tag keyed by code address.  Tags only tell the
interpreter what to report to the measurement engine; they never change what
the program computes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .analysis import Analysis, CriticalSet, SiteList, accesses, entry_accesses
from .analysis.sites import COND_BRANCH, INDIRECT_CALL, INDIRECT_JUMP, RETURN
from .ir import Branch, CallIndirect, JumpIndirect, Program, Return

RECORDS = {
    COND_BRANCH: "taken/not-taken bit",
    INDIRECT_CALL: "destination address",
    INDIRECT_JUMP: "destination address",
    RETURN: "return address",
    "define": "(VariableID, value)",
    "use": "(VariableID, value)",
}

_CONTROL_TYPES = {
    COND_BRANCH: Branch,
    INDIRECT_CALL: CallIndirect,
    INDIRECT_JUMP: JumpIndirect,
    RETURN: Return,
}


class InstrumentationError(ValueError):
    """The site list does not belong to the program."""


@dataclass(frozen=True)
class Tag:
    kind: str
    addr: int
    ops: tuple[int, ...] = ()     # control sites: operations covering the site
    var: object = None            # data sites: the accessed variable
    mode: str = "direct"

    @property
    def records(self) -> str:
        return RECORDS[self.kind]

    @property
    def is_control(self) -> bool:
        return self.kind in _CONTROL_TYPES


@dataclass(frozen=True)
class InstrumentedProgram:
    program: Program
    sites: SiteList
    tags: dict = field(default_factory=dict)    # addr -> tuple[Tag, ...]
    critical: CriticalSet | None = None
    targets: dict = field(default_factory=dict)

    @property
    def tag_count(self) -> int:
        return sum(len(t) for t in self.tags.values())

    def control_tag(self, addr: int) -> Tag | None:
        for t in self.tags.get(addr, ()):
            if t.is_control:
                return t
        return None

    def data_tags(self, addr: int) -> tuple[Tag, ...]:
        return tuple(t for t in self.tags.get(addr, ()) if not t.is_control)


def instrument(program: Program, sites: SiteList, critical: CriticalSet | None = None,
               targets: dict | None = None) -> InstrumentedProgram:
    amap = program.address_map()
    entries = {f.entry: f for f in program.functions}
    tags: dict[int, list[Tag]] = {}
    for c in sites.control:
        ins = amap.get(c.addr)
        want = _CONTROL_TYPES.get(c.kind)
        if ins is None or want is None or not isinstance(ins, want):
            raise InstrumentationError(f"control site {c.kind} at {c.addr:#x} has no matching "
                                       "instruction")
        tags.setdefault(c.addr, []).append(Tag(c.kind, c.addr, c.ops))
    for d in sites.data:
        ins = amap.get(d.addr)
        legal = accesses(program, ins) if ins is not None else []
        if d.addr in entries:
            legal = legal + entry_accesses(entries[d.addr])
        if d.access not in legal:
            raise InstrumentationError(f"data site {d.kind} {d.var} at {d.addr:#x} does not "
                                       "match the instruction")
        tags.setdefault(d.addr, []).append(Tag(d.kind, d.addr, (), d.var, d.mode))
    frozen = {a: tuple(ts) for a, ts in sorted(tags.items())}
    return InstrumentedProgram(program, sites, frozen, critical, dict(targets or {}))


def instrument_analysis(a: Analysis) -> InstrumentedProgram:
    return instrument(a.program, a.sites, a.critical, a.targets)


def uninstrumented(program: Program) -> InstrumentedProgram:
    """The same program with no tags at all."""
    return InstrumentedProgram(program, SiteList())
