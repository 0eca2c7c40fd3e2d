"""Static analysis: CFGs, dominance, operation scopes, points-to, critical
variables and instrumentation sites."""
from __future__ import annotations

import json
from dataclasses import dataclass

from ..ir import (Branch, Call, CallIndirect, Diagnostic, Halt, Jump, JumpIndirect,
                  Program, Return, validate)
from .access import Access, accesses, all_accesses, entry_accesses
from .cfg import Cfg, Edge, build_cfg
from .critical import (CriticalSet, detect_control_dependent_vars, expand_critical_set,
                       initial_set)
from .dominance import Dominance, compute_dominance
from .pointsto import PointsTo, indirect_targets, points_to
from .scopes import OperationScope, check_operation_scopes
from .sites import (ControlSite, DataSite, SiteList, count_address_based_sites,
                    select_sites, target_sets)

BUNDLE_FORMAT = "oei-cfg-bundle/1"


class AnalysisError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


@dataclass
class Analysis:
    program: Program
    cfgs: dict[str, Cfg]
    scopes: list[OperationScope]
    points_to: PointsTo
    critical: CriticalSet
    sites: SiteList
    targets: dict[int, frozenset[int]]

    def scope(self, op_id: int) -> OperationScope:
        for s in self.scopes:
            if s.op_id == op_id:
                return s
        raise KeyError(op_id)

    def to_bundle(self) -> dict:
        return export_bundle(self)


def analyze(program: Program) -> Analysis:
    """Run the whole static pipeline; raises AnalysisError on invalid input."""
    diags = validate(program)
    if diags:
        raise AnalysisError(diags)
    pts = points_to(program)
    cfgs = build_cfg(program, indirect_targets(program, pts))
    scopes, diags = check_operation_scopes(program, cfgs)
    if diags:
        raise AnalysisError(diags)
    critical = expand_critical_set(program, initial_set(program), pts)
    sites = select_sites(program, scopes, critical, cfgs)
    return Analysis(program, cfgs, scopes, pts, critical, sites, target_sets(program, pts))


def _terminator(program: Program, starts: dict[str, int], t) -> dict:
    if isinstance(t, Branch):
        return {"kind": "branch", "addr": t.addr,
                "taken": starts[t.taken], "not_taken": starts[t.not_taken]}
    if isinstance(t, Call):
        return {"kind": "call", "addr": t.addr, "callee": t.func,
                "callee_entry": program.function(t.func).entry, "cont": starts[t.cont]}
    if isinstance(t, CallIndirect):
        return {"kind": "call_indirect", "addr": t.addr, "cont": starts[t.cont]}
    if isinstance(t, Jump):
        return {"kind": "jump", "addr": t.addr, "target": starts[t.label]}
    if isinstance(t, JumpIndirect):
        return {"kind": "jump_indirect", "addr": t.addr}
    if isinstance(t, Return):
        return {"kind": "ret", "addr": t.addr}
    if isinstance(t, Halt):
        return {"kind": "halt", "addr": t.addr}
    raise TypeError(t)


def export_bundle(a: Analysis) -> dict:
    """The compile-time CFG document the verifier consumes."""
    p = a.program
    functions = []
    for f in p.functions:
        starts = {b.label: b.start for b in f.blocks}
        functions.append({
            "name": f.name,
            "entry": f.entry,
            "params": len(f.params),
            "blocks": [{"label": b.label, "start": b.start, "end": b.terminator.addr,
                        "term": _terminator(p, starts, b.terminator)} for b in f.blocks],
        })
    return {
        "format": BUNDLE_FORMAT,
        "entry": p.entry,
        "functions": functions,
        "operations": [{"id": s.op_id, "function": s.function, "entry": s.entry,
                        "exit": s.exit, "functions": sorted(s.functions)}
                       for s in a.scopes],
        "target_sets": {str(k): sorted(v) for k, v in sorted(a.targets.items())},
        "vectors": {str(v): {"handler": h, "entry": p.function(h).entry}
                    for v, h in p.vectors},
        "critical": {
            "variables": sorted(str(v) for v in a.critical.variables),
            "pointers": sorted(str(v) for v in a.critical.pointers),
        },
        "sites": {
            "control": [[c.addr, c.kind] for c in a.sites.control],
            "data": [[d.addr, d.kind, str(d.var), d.mode] for d in a.sites.data],
        },
    }


def bundle_json(a: Analysis) -> str:
    return json.dumps(export_bundle(a), sort_keys=True, indent=1)


__all__ = [
    "Access", "Analysis", "AnalysisError", "Cfg", "ControlSite", "CriticalSet",
    "DataSite", "Dominance", "Edge", "OperationScope", "SiteList", "accesses",
    "all_accesses", "analyze", "build_cfg", "bundle_json", "check_operation_scopes",
    "compute_dominance", "count_address_based_sites", "detect_control_dependent_vars",
    "entry_accesses", "expand_critical_set", "export_bundle", "initial_set",
    "points_to", "select_sites", "target_sets",
]
