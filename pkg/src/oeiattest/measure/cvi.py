"""Value-based define-use checking of critical data."""
from __future__ import annotations

from dataclasses import dataclass, field


class UnregisteredPointer(LookupError):
    pass


@dataclass(frozen=True)
class Bounds:
    base: int
    length: int
    tracked: bool = True   # False when the pointee is not critical


def clip(base: int, length: int, access_base: int, access_len: int) -> range:
    """Words of [access_base, access_base+access_len) inside [base, base+length)."""
    lo = max(base, access_base)
    hi = min(base + length, access_base + access_len)
    return range(lo, max(lo, hi))


@dataclass
class CviState:
    values: dict[int, int] = field(default_factory=dict)
    bounds: dict[int, Bounds] = field(default_factory=dict)
    flag: bool = False
    context: list[tuple[int, int]] = field(default_factory=list)

    def define(self, var_id: int, value: int) -> None:
        self.values[var_id] = value

    def use(self, var_id: int, observed: int, return_addr: int) -> bool:
        """Check a use; returns False (and records context) on a mismatch."""
        expected = self.values.get(var_id)
        if expected is None:
            # first observation seeds the map (statically initialized data)
            self.values[var_id] = observed
            return True
        if expected == observed:
            return True
        self.flag = True
        self.context.append((var_id, return_addr))
        return False

    def register_bounds(self, pointer_id: int, base: int, length: int, tracked: bool = True) -> None:
        self.bounds[pointer_id] = Bounds(base, length, tracked)

    def bounds_adjust(self, pointer_id: int, access_base: int, access_len: int = 1) -> range:
        """Effective word ids for an access through a critical pointer.

        In bounds, this is the accessed range itself; a breach is cut down to the
        overlap with the registered pointee (possibly empty).
        """
        try:
            b = self.bounds[pointer_id]
        except KeyError:
            raise UnregisteredPointer(f"no bounds registered for pointer {pointer_id:#x}") from None
        if not b.tracked:
            return range(0)
        return clip(b.base, b.length, access_base, access_len)


def cvi_define(state: CviState, var_id: int, value: int) -> None:
    state.define(var_id, value)


def cvi_use(state: CviState, var_id: int, observed: int, current_return_addr: int) -> bool:
    return state.use(var_id, observed, current_return_addr)


def bounds_adjust(state: CviState, pointer_id: int, access_base: int, access_len: int) -> range:
    return state.bounds_adjust(pointer_id, access_base, access_len)
