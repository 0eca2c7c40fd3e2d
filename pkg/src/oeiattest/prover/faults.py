"""Fault and interrupt descriptors for the interpreter."""
from __future__ import annotations

from dataclasses import dataclass

from ..ir import VarRef

OVERWRITE_RETURN = "overwrite_return"
OVERWRITE_VAR = "overwrite_var"
OVERWRITE_INDIRECT_TARGET = "overwrite_indirect_target"
ACTIONS = (OVERWRITE_RETURN, OVERWRITE_VAR, OVERWRITE_INDIRECT_TARGET)


class FaultError(ValueError):
    pass


def parse_var(text: str) -> VarRef:
    """``@g`` for a global, ``func.x`` for a local."""
    if text.startswith("@"):
        return VarRef(None, text[1:])
    func, sep, name = text.partition(".")
    if not sep or not func or not name:
        raise FaultError(f"bad variable reference {text!r}; use @name or func.name")
    return VarRef(func, name)


@dataclass(frozen=True)
class FaultSpec:
    """Memory corruption applied just before the ``occurrence``-th execution
    (1-based) of the instruction at ``trigger``."""

    trigger: int
    occurrence: int
    action: str
    value: int
    var: VarRef | None = None
    index: int = 0
    site: int | None = None

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise FaultError(f"unknown fault action {self.action!r}")
        if self.occurrence < 1:
            raise FaultError("occurrence is 1-based")
        if self.action == OVERWRITE_VAR and self.var is None:
            raise FaultError("overwrite_var needs a variable")
        if self.action == OVERWRITE_INDIRECT_TARGET and self.site is None:
            raise FaultError("overwrite_indirect_target needs a site address")

    @classmethod
    def from_json(cls, d: dict) -> "FaultSpec":
        var = d.get("var")
        return cls(trigger=_int(d["trigger"]), occurrence=int(d.get("occurrence", 1)),
                   action=d["action"], value=_int(d["value"]),
                   var=parse_var(var) if var else None, index=int(d.get("index", 0)),
                   site=_int(d["site"]) if d.get("site") is not None else None)

    def to_json(self) -> dict:
        out = {"trigger": self.trigger, "occurrence": self.occurrence,
               "action": self.action, "value": self.value}
        if self.var is not None:
            out["var"] = str(self.var)
            out["index"] = self.index
        if self.site is not None:
            out["site"] = self.site
        return out


@dataclass(frozen=True)
class InterruptEvent:
    """Raise ``irq`` once ``at`` instructions have executed.  ``handler`` None
    means the vector-table entry; naming another function models a tampered
    vector table."""

    at: int
    irq: int
    handler: str | None = None

    @classmethod
    def from_json(cls, d: dict) -> "InterruptEvent":
        return cls(int(d["at"]), int(d["irq"]), d.get("handler"))

    def to_json(self) -> dict:
        out = {"at": self.at, "irq": self.irq}
        if self.handler is not None:
            out["handler"] = self.handler
        return out


def _int(v) -> int:
    return int(v, 0) if isinstance(v, str) else int(v)
