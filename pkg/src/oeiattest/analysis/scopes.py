"""Operation scope checks: begin must dominate end, end must post-dominate
begin, and an operation may not reach another operation."""
from __future__ import annotations

from dataclasses import dataclass

from ..ir import AttestBegin, AttestEnd, Diagnostic, Program, marker_pairs
from .cfg import Cfg
from .dominance import compute_dominance


@dataclass(frozen=True)
class OperationScope:
    op_id: int
    function: str
    entry: int          # address of attest_begin
    exit: int           # address of attest_end
    blocks: frozenset   # blocks of the operation function whose terminator runs in scope
    functions: frozenset  # functions callable while the operation runs


def _locate(program: Program, func: str, addr: int) -> tuple[str, int]:
    for b in program.function(func).blocks:
        for i, ins in enumerate(b.all()):
            if ins.addr == addr:
                return b.label, i
    raise KeyError(addr)


def scope_region(program: Program, cfg: Cfg, begin_addr: int, end_addr: int) -> tuple[set, bool]:
    """Blocks whose terminator executes between begin and end, and whether the
    begin block can be re-entered before end."""
    bb, bi = _locate(program, cfg.function, begin_addr)
    eb, ei = _locate(program, cfg.function, end_addr)
    if bb == eb and bi < ei:
        return set(), False
    seen = {bb}
    stack = [bb]
    reenters = False
    while stack:
        n = stack.pop()
        if n == eb:
            continue
        for s in cfg.succ(n):
            if s == bb:
                reenters = True
            if s not in seen:
                seen.add(s)
                stack.append(s)
    seen.discard(eb)
    return seen, reenters


def reachable_functions(cfgs: dict[str, Cfg], roots) -> set[str]:
    out = set()
    stack = list(roots)
    while stack:
        f = stack.pop()
        if f in out or f not in cfgs:
            continue
        out.add(f)
        for callees in cfgs[f].calls.values():
            stack.extend(callees)
    return out


def check_operation_scopes(program: Program, cfgs: dict[str, Cfg]
                           ) -> tuple[list[OperationScope], list[Diagnostic]]:
    scopes = []
    diags = []
    marker_funcs = {f.name for f, _, _, ins in program.instructions()
                    if isinstance(ins, (AttestBegin, AttestEnd))}
    for op_id, fname, begin, end in marker_pairs(program):
        cfg = cfgs[fname]
        bb, bi = _locate(program, fname, begin.addr)
        eb, ei = _locate(program, fname, end.addr)
        bad = False
        if bb == eb:
            if bi > ei:
                diags.append(Diagnostic(end.line, 1, f"operation {op_id}: attest_end precedes "
                                                     f"attest_begin in block {bb!r}"))
                bad = True
        else:
            dom = compute_dominance(cfg)
            if not dom.dominates(bb, eb):
                diags.append(Diagnostic(begin.line, 1,
                                        f"operation {op_id}: attest_begin does not dominate attest_end"))
                bad = True
            if not dom.post_dominates(eb, bb):
                diags.append(Diagnostic(end.line, 1,
                                        f"operation {op_id}: attest_end does not post-dominate attest_begin"))
                bad = True
        if bad:
            continue
        region, reenters = scope_region(program, cfg, begin.addr, end.addr)
        if reenters:
            diags.append(Diagnostic(begin.line, 1,
                                    f"operation {op_id}: attest_begin is reachable again before attest_end"))
            continue
        callees = set()
        for label in region:
            callees.update(cfg.calls.get(label, ()))
        funcs = reachable_functions(cfgs, callees)
        nested = sorted(funcs & marker_funcs)
        if nested:
            diags.append(Diagnostic(begin.line, 1, f"operation {op_id}: nested operation "
                                                   f"reachable through {', '.join(nested)}"))
            continue
        scopes.append(OperationScope(op_id, fname, begin.addr, end.addr,
                                     frozenset(region), frozenset(funcs)))
    return scopes, diags
