"""Bundled MiniIR programs modelled on small embedded controllers, with
benign inputs and attack scenarios for each."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from ..ir import Program, parse_program
from ..prover.faults import FaultSpec, InterruptEvent

NAMES = ("syringe", "alarm", "remote_move", "rover", "light")


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    faults: tuple[dict, ...]
    expect: tuple[str, ...]
    inputs: tuple[int, ...] | None = None
    interrupts: tuple[dict, ...] | None = None
    description: str = ""


@dataclass(frozen=True)
class CorpusEntry:
    name: str
    source: str
    program: Program
    operation: int
    inputs: tuple[int, ...]
    interrupts: tuple[InterruptEvent, ...] = ()
    scenarios: tuple[Scenario, ...] = field(default=())
    description: str = ""

    def faults(self, scenario: Scenario) -> list[FaultSpec]:
        return build_faults(self.program, scenario.faults)

    def scenario_inputs(self, scenario: Scenario) -> tuple[int, ...]:
        return self.inputs if scenario.inputs is None else scenario.inputs

    def scenario_interrupts(self, scenario: Scenario) -> tuple[InterruptEvent, ...]:
        if scenario.interrupts is None:
            return self.interrupts
        return tuple(InterruptEvent.from_json(e) for e in scenario.interrupts)


def source(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.mir").read_text()


def load(name: str) -> CorpusEntry:
    text = source(name)
    meta = json.loads(resources.files(__name__).joinpath(f"{name}.json").read_text())
    scenarios = tuple(
        Scenario(s["name"], s["kind"], tuple(s.get("faults", ())), tuple(s["expect"]),
                 tuple(s["inputs"]) if "inputs" in s else None,
                 tuple(s["interrupts"]) if "interrupts" in s else None,
                 s.get("description", ""))
        for s in meta.get("scenarios", ()))
    return CorpusEntry(name, text, parse_program(text), int(meta["operation"]),
                       tuple(meta.get("inputs", ())),
                       tuple(InterruptEvent.from_json(e) for e in meta.get("interrupts", ())),
                       scenarios, meta.get("description", ""))


def load_all() -> list[CorpusEntry]:
    return [load(n) for n in NAMES]


def resolve_addr(program: Program, value) -> int:
    """Integers pass through; ``&func`` is a function entry; ``func/label`` a
    block start; ``func/label/i`` the i-th instruction (``term`` for the
    terminator)."""
    if isinstance(value, int):
        return value
    text = str(value)
    if text.startswith("&"):
        return program.function(text[1:]).entry
    if "/" not in text:
        return int(text, 0)
    parts = text.split("/")
    block = program.function(parts[0]).block(parts[1])
    if len(parts) == 2:
        return block.start
    if parts[2] == "term":
        return block.terminator.addr
    return block.all()[int(parts[2])].addr


def build_faults(program: Program, raw) -> list[FaultSpec]:
    out = []
    for d in raw:
        d = dict(d)
        for key in ("trigger", "value", "site"):
            if key in d and d[key] is not None:
                d[key] = resolve_addr(program, d[key])
        out.append(FaultSpec.from_json(d))
    return out
