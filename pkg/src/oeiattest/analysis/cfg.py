"""Per-function control-flow graphs over MiniIR basic blocks."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..ir import (AddressOf, Branch, Call, CallIndirect, FuncRef, Halt, Jump,
                  JumpIndirect, LabelRef, Program, Return)

EXIT = "<exit>"


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    kind: str  # taken | not_taken | jump | call | indirect_call | indirect


@dataclass
class Cfg:
    function: str
    root: str
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    # block label -> functions possibly entered by its call terminator
    calls: dict[str, tuple[str, ...]] = field(default_factory=dict)
    exits: tuple[str, ...] = ()
    _out: dict = field(default=None, init=False, repr=False, compare=False)
    _in: dict = field(default=None, init=False, repr=False, compare=False)

    def _index(self) -> None:
        self._out, self._in = {}, {}
        for e in self.edges:
            self._out.setdefault(e.src, []).append(e)
            self._in.setdefault(e.dst, []).append(e)

    def succ(self, node: str) -> list[str]:
        return [e.dst for e in self.out_edges(node)]

    def pred(self, node: str) -> list[str]:
        if self._in is None:
            self._index()
        return [e.src for e in self._in.get(node, ())]

    def out_edges(self, node: str) -> list[Edge]:
        if self._out is None:
            self._index()
        return list(self._out.get(node, ()))


def address_taken(program: Program) -> tuple[set[str], dict[str, set[str]]]:
    """Functions and (per function) labels whose address is taken anywhere."""
    funcs: set[str] = set()
    labels: dict[str, set[str]] = {}
    for d in program.globals:
        funcs.update(v.name for v in d.init if isinstance(v, FuncRef))
    for _, _, _, ins in program.instructions():
        if isinstance(ins, AddressOf):
            if isinstance(ins.target, FuncRef):
                funcs.add(ins.target.name)
            elif isinstance(ins.target, LabelRef):
                labels.setdefault(ins.target.func, set()).add(ins.target.label)
    return funcs, labels


def build_cfg(program: Program, indirect_targets: dict[int, set] | None = None) -> dict[str, Cfg]:
    """Build one Cfg per function.

    Without ``indirect_targets`` (site address -> FuncRef/LabelRef objects),
    indirect transfers conservatively reach every address-taken function or
    label of the same function.
    """
    taken_funcs, taken_labels = address_taken(program)
    cfgs = {}
    for f in program.functions:
        edges: list[Edge] = []
        calls: dict[str, tuple[str, ...]] = {}
        exits = []
        for b in f.blocks:
            t = b.terminator
            if isinstance(t, Branch):
                edges.append(Edge(b.label, t.taken, "taken"))
                edges.append(Edge(b.label, t.not_taken, "not_taken"))
            elif isinstance(t, Jump):
                edges.append(Edge(b.label, t.label, "jump"))
            elif isinstance(t, Call):
                edges.append(Edge(b.label, t.cont, "call"))
                calls[b.label] = (t.func,)
            elif isinstance(t, CallIndirect):
                edges.append(Edge(b.label, t.cont, "indirect_call"))
                if indirect_targets is not None:
                    objs = indirect_targets.get(t.addr, set())
                    callees = sorted(o.name for o in objs if isinstance(o, FuncRef))
                else:
                    callees = sorted(taken_funcs)
                calls[b.label] = tuple(callees)
            elif isinstance(t, JumpIndirect):
                if indirect_targets is not None:
                    objs = indirect_targets.get(t.addr, set())
                    dsts = sorted(o.label for o in objs
                                  if isinstance(o, LabelRef) and o.func == f.name)
                else:
                    dsts = sorted(taken_labels.get(f.name, ()))
                edges.extend(Edge(b.label, d, "indirect") for d in dsts)
            elif isinstance(t, (Return, Halt)):
                exits.append(b.label)
        cfgs[f.name] = Cfg(f.name, f.blocks[0].label, tuple(b.label for b in f.blocks),
                           tuple(edges), calls, tuple(exits))
    return cfgs
