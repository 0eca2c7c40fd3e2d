"""Deterministic MiniIR interpreter driving the measurement engine.

Memory is a flat space of 64-bit words.  Globals sit at DATA_BASE in
declaration order.  Each call allocates a frame at the stack pointer holding
the callee's parameters, its locals, and finally the return-address slot, so
an overflow of the last local array runs into the saved return address.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

from ..instrument import InstrumentedProgram, Tag
from ..ir import (AddressOf, Assign, AttestBegin, AttestEnd, BinOp, Branch, Call,
                  CallIndirect, Const, FuncRef, GetElement, Halt, Input, Jump, JumpIndirect,
                  LabelRef, Load, Output, Program, Return, Store, VarRef, wrap64)
from ..analysis.access import accesses, entry_accesses
from ..measure import AttestationBlob, DeviceKey, MeasurementEngine, MeasurementError
from ..measure.cvi import UnregisteredPointer, clip
from ..measure.session import DEFAULT_CAPACITY
from .faults import (OVERWRITE_INDIRECT_TARGET, OVERWRITE_RETURN, OVERWRITE_VAR, FaultError,
                     FaultSpec, InterruptEvent)

DATA_BASE = 0x4000_0000
STACK_BASE = 0x5000_0000
STACK_WORDS = 1 << 20
MAX_DEPTH = 4096
DEFAULT_MAX_STEPS = 500_000
MAX_INPUT_WORDS = 4096


class RuntimeFault(Exception):
    """The modeled program crashed (bad address, division by zero, ...)."""


@dataclass
class Frame:
    func: str
    base: int
    size: int
    dest_addr: int | None = None   # caller word receiving the return value
    call_addr: int | None = None
    irq: int | None = None         # set for interrupt-handler frames
    measured: bool = False         # handler frame opened a child session

    @property
    def ret_slot(self) -> int:
        return self.base + self.size - 1


@dataclass
class Execution:
    """One measured run of an operation."""

    op_id: int
    blobs: list[AttestationBlob]
    path: list[int]
    interrupt_paths: list[list[int]] = field(default_factory=list)
    complete: bool = True


@dataclass(frozen=True)
class AppliedFault:
    fault: FaultSpec
    measured: bool      # a measurement session was open
    previous: int       # word value before the overwrite

    @property
    def changed(self) -> bool:
        return self.previous != self.fault.value


@dataclass
class RunResult:
    outputs: list[int]
    executions: list[Execution]
    steps: int
    fault: str | None = None
    exited: bool = False
    indirect_log: list[tuple[int, int]] = field(default_factory=list)
    cvi_flag_raised: bool = False
    applied_faults: list["AppliedFault"] = field(default_factory=list)

    @property
    def blobs(self) -> list[AttestationBlob]:
        return [b for e in self.executions for b in e.blobs]

    def for_op(self, op_id: int) -> list[Execution]:
        return [e for e in self.executions if e.op_id == op_id]


def _layout(decls) -> tuple[dict[str, int], int]:
    offs, n = {}, 0
    for d in decls:
        offs[d.name] = n
        n += d.size
    return offs, n


class Machine:
    def __init__(self, ip: InstrumentedProgram, *, inputs=(), key: DeviceKey | None = None,
                 nonce: bytes = bytes(16), op_id: int | None = None,
                 faults: list[FaultSpec] = (), interrupts: list[InterruptEvent] = (),
                 capacity: int = DEFAULT_CAPACITY, hash_returns: bool = True,
                 max_steps: int = DEFAULT_MAX_STEPS):
        self.ip = ip
        p: Program = ip.program
        self.program = p
        self.key = key or DeviceKey.generate()
        self.engine = MeasurementEngine(self.key, nonce, capacity, hash_returns)
        self.op_filter = op_id
        self.inputs = list(inputs)
        self.max_steps = max_steps
        self.faults = list(faults)
        self.pending_irqs = sorted(interrupts, key=lambda e: e.at)
        self.fired: dict[int, int] = {}

        self.code = {}
        self.func_of = {}
        self.block_of = {}
        for f, b, _, ins in p.instructions():
            self.code[ins.addr] = ins
            self.func_of[ins.addr] = f.name
            self.block_of[ins.addr] = b
        self.layouts = {}
        for f in p.functions:
            offs, n = _layout(f.params + f.locals)
            self.layouts[f.name] = (offs, n + 1)
        self.starts = {f.name: {b.label: b.start for b in f.blocks} for f in p.functions}

        goffs, gsize = _layout(p.globals)
        self.gaddr = {name: DATA_BASE + o for name, o in goffs.items()}
        self.gsize = gsize
        self.mem: dict[int, int] = {}

        crit = ip.critical
        self.crit_vars = crit.variables if crit else frozenset()
        self.crit_ptrs = crit.pointers if crit else frozenset()
        # objects for pointee lookup: sorted global (base, size, ref)
        self.gobjs = sorted((self.gaddr[d.name], d.size, VarRef(None, d.name))
                            for d in p.globals)
        self.gbases = [o[0] for o in self.gobjs]

        self.ins_tags = {}
        for addr, tags in ip.tags.items():
            ins = self.code[addr]
            legal = accesses(p, ins)
            self.ins_tags[addr] = tuple(t for t in tags if not t.is_control
                                        and (t.kind, t.var, t.mode) in
                                        {(a.kind, a.var, a.mode) for a in legal})
        self.entry_tags = {}
        for f in p.functions:
            legal = {(a.kind, a.var, a.mode) for a in entry_accesses(f)}
            self.entry_tags[f.name] = tuple(t for t in ip.tags.get(f.entry, ())
                                            if (t.kind, t.var, t.mode) in legal)

        self.stack: list[Frame] = []
        self.sp = STACK_BASE
        self.outputs: list[int] = []
        self.steps = 0
        self.cursor = 0
        self.counts: dict[int, int] = {}
        self.applied: list[AppliedFault] = []
        self.executions: list[Execution] = []
        self.current: Execution | None = None
        self.irq_paths: list[list[int]] = []
        self.indirect_log: list[tuple[int, int]] = []
        self.flag_raised = False

    # -- memory -----------------------------------------------------------------

    def _check(self, addr: int) -> None:
        if DATA_BASE <= addr < DATA_BASE + self.gsize:
            return
        if STACK_BASE <= addr < STACK_BASE + STACK_WORDS:
            return
        raise RuntimeFault(f"memory access to unmapped address {addr:#x} at {self.cursor:#x}")

    def read(self, addr: int) -> int:
        self._check(addr)
        return self.mem.get(addr, 0)

    def write(self, addr: int, value: int) -> None:
        self._check(addr)
        self.mem[addr] = wrap64(value)

    @property
    def frame(self) -> Frame:
        return self.stack[-1]

    def var_addr(self, ref: VarRef, frame: Frame | None = None, func: str | None = None) -> int:
        if ref.func is None:
            return self.gaddr[ref.name]
        frame = frame or self.frame
        func = func or self.func_of.get(self.cursor, frame.func)
        offs, _ = self.layouts[func]
        if ref.name not in offs:
            offs, _ = self.layouts[ref.func]
        return frame.base + offs[ref.name]

    def decl(self, ref: VarRef):
        return self.program.decl(ref)

    def value(self, op) -> int:
        if isinstance(op, Const):
            return op.value
        return self.read(self.var_addr(op))

    def object_at(self, addr: int):
        """(base, size, ref) of the variable containing ``addr``, if any."""
        i = bisect_right(self.gbases, addr) - 1
        if i >= 0:
            base, size, ref = self.gobjs[i]
            if base <= addr < base + size:
                return base, size, ref
        for fr in reversed(self.stack):
            if fr.base <= addr < fr.ret_slot:
                fn = self.program.function(fr.func)
                offs, _ = self.layouts[fr.func]
                for d in fn.params + fn.locals:
                    b = fr.base + offs[d.name]
                    if b <= addr < b + d.size:
                        return b, d.size, VarRef(fr.func, d.name)
        return None

    # -- frames -----------------------------------------------------------------

    def push_frame(self, func: str, ret_addr: int, **kw) -> Frame:
        if len(self.stack) >= MAX_DEPTH:
            raise RuntimeFault("call stack overflow")
        _, size = self.layouts[func]
        if self.sp + size > STACK_BASE + STACK_WORDS:
            raise RuntimeFault("stack memory exhausted")
        fr = Frame(func, self.sp, size, **kw)
        for a in range(fr.base, fr.base + size):
            self.mem.pop(a, None)
        self.mem[fr.ret_slot] = wrap64(ret_addr)
        self.sp += size
        self.stack.append(fr)
        return fr

    def pop_frame(self) -> Frame:
        fr = self.stack.pop()
        self.sp = fr.base
        return fr

    # -- measurement hooks ---------------------------------------------------------

    @property
    def session(self):
        return self.engine.session

    def log_arrival(self, addr: int) -> None:
        if self.session is None:
            return
        if self.session.stack:
            self.irq_paths[-1].append(addr)
        else:
            self.current.path.append(addr)

    def control_event(self, addr: int, kind: str, value) -> None:
        if self.session is None or self.ip.control_tag(addr) is None:
            return
        if kind == "branch":
            self.session.record_branch(value)
        elif kind == "indirect":
            self.session.record_indirect(value)
        else:
            self.session.record_return(value)

    def _context_ret(self) -> int:
        if not self.stack:
            return 0
        return self.mem.get(self.frame.ret_slot, 0) & ((1 << 64) - 1)

    def _tag_range(self, t: Tag, ins, frame: Frame | None = None, func: str | None = None) -> range:
        base = self.var_addr(t.var, frame, func)
        if t.mode == "direct":
            return range(base, base + 1)
        length = 1
        if isinstance(ins, Input) and ins.base is not None:
            length = max(0, min(self.value(ins.count), MAX_INPUT_WORDS))
        index = getattr(ins, "index", None)
        idx = self.value(index) if index is not None else 0
        if t.mode == "element":
            return clip(base, self.decl(t.var).size, base + idx, length)
        target = self.read(base) + idx
        try:
            return self.engine.cvi.bounds_adjust(base, target, length)
        except UnregisteredPointer:
            return range(0)

    def _define(self, t: Tag, words: range) -> None:
        cvi = self.engine.cvi
        for w in words:
            v = self.read(w)
            cvi.define(w, v)
            if t.mode != "pointer" and t.var in self.crit_ptrs:
                self._register(w, v)

    def _register(self, ptr_word: int, value: int) -> None:
        obj = self.object_at(value)
        if obj is None:
            self.engine.cvi.register_bounds(ptr_word, value, 0, False)
        else:
            base, size, ref = obj
            self.engine.cvi.register_bounds(ptr_word, base, size, ref in self.crit_vars)

    def _use(self, words: range) -> None:
        cvi = self.engine.cvi
        ret = self._context_ret()
        for w in words:
            if not cvi.use(w, self.read(w), ret):
                self.flag_raised = True

    def pre_data(self, ins, tags) -> list[tuple[Tag, range]]:
        """Run use checks; return define tags with their word ranges."""
        defines = []
        for t in tags:
            r = self._tag_range(t, ins)
            if t.kind == "use":
                self._use(r)
            else:
                defines.append((t, r))
        return defines

    def post_data(self, defines) -> None:
        for t, r in defines:
            self._define(t, r)

    # -- faults and interrupts ---------------------------------------------------------

    def apply_faults(self, addr: int) -> None:
        n = self.counts.get(addr, 0) + 1
        self.counts[addr] = n
        for f in self.faults:
            if f.trigger != addr or f.occurrence != n:
                continue
            if f.action == OVERWRITE_RETURN:
                where = self.frame.ret_slot
            elif f.action == OVERWRITE_VAR:
                where = self._fault_addr(f.var) + f.index
            else:
                ins = self.code.get(f.site)
                if not isinstance(ins, (CallIndirect, JumpIndirect)):
                    raise FaultError(f"no indirect transfer at {f.site:#x}")
                where = self._fault_addr(ins.target)
            self.applied.append(AppliedFault(f, self.session is not None, self.read(where)))
            self.write(where, f.value)

    def _fault_addr(self, ref: VarRef) -> int:
        if ref.func is None:
            if ref.name not in self.gaddr:
                raise FaultError(f"unknown global {ref}")
            return self.gaddr[ref.name]
        for fr in reversed(self.stack):
            if fr.func == ref.func:
                return self.var_addr(ref, fr, fr.func)
        raise FaultError(f"no live frame of {ref.func!r} for {ref}")

    def maybe_interrupt(self) -> None:
        if not self.pending_irqs or self.pending_irqs[0].at > self.steps:
            return
        if any(fr.irq is not None for fr in self.stack):
            return  # handlers are not interruptible; stays pending
        ev = self.pending_irqs.pop(0)
        handler = ev.handler or dict(self.program.vectors).get(ev.irq)
        if handler is None or not self.program.has_function(handler):
            raise RuntimeFault(f"interrupt {ev.irq} has no handler")
        entry = self.program.function(handler).entry
        measured = self.session is not None
        self.push_frame(handler, self.cursor, irq=ev.irq, measured=measured)
        if measured:
            self.session.begin_interrupt(ev.irq, entry, self.cursor)
            self.irq_paths.append([entry])
        self.cursor = entry

    # -- execution -------------------------------------------------------------------

    def start(self) -> None:
        for d in self.program.globals:
            base = self.gaddr[d.name]
            for i, v in enumerate(d.init):
                if isinstance(v, FuncRef):
                    v = self.program.function(v.name).entry
                self.mem[base + i] = wrap64(v)
        for d in self.program.globals:
            ref = VarRef(None, d.name)
            if ref in self.crit_ptrs:
                for w in range(self.gaddr[d.name], self.gaddr[d.name] + d.size):
                    self._register(w, self.mem.get(w, 0))
        main = self.program.function(self.program.entry)
        self.push_frame(main.name, 0)
        self.cursor = main.entry

    def run(self) -> RunResult:
        fault = None
        exited = False
        try:
            self.start()
            while True:
                if self.steps >= self.max_steps:
                    raise RuntimeFault(f"step limit {self.max_steps} reached")
                self.maybe_interrupt()
                if self.cursor not in self.code:
                    raise RuntimeFault(f"control transfer to non-code address {self.cursor:#x}")
                self.apply_faults(self.cursor)
                self.steps += 1
                if self.execute(self.code[self.cursor]):
                    exited = True
                    break
        except (RuntimeFault, MeasurementError) as e:
            fault = str(e)
        if self.session is not None:
            blobs = self.engine.abort()
            self.current.blobs = blobs
            self.current.complete = False
            self.current.interrupt_paths = self.irq_paths
            self.executions.append(self.current)
            self.current = None
        return RunResult(self.outputs, self.executions, self.steps, fault, exited,
                         self.indirect_log, self.flag_raised, self.applied)

    def transfer(self, addr: int) -> None:
        self.cursor = addr
        self.log_arrival(addr)

    def execute(self, ins) -> bool:
        """Execute one instruction; True when the program has finished."""
        addr = ins.addr
        tags = self.ins_tags.get(addr, ())
        if isinstance(ins, (Call, CallIndirect)):
            uses = [t for t in tags if t.kind == "use"]
            self.pre_data(ins, uses)
            return self.call(ins)
        defines = self.pre_data(ins, tags) if tags else []
        nxt = addr + 4
        if isinstance(ins, Assign):
            self.write(self.var_addr(ins.dest), self.value(ins.src))
        elif isinstance(ins, BinOp):
            self.write(self.var_addr(ins.dest),
                       binop(ins.op, self.value(ins.lhs), self.value(ins.rhs), addr))
        elif isinstance(ins, AddressOf):
            t = ins.target
            if isinstance(t, VarRef):
                v = self.var_addr(t)
            elif isinstance(t, FuncRef):
                v = self.program.function(t.name).entry
            else:
                v = self.starts[t.func][t.label]
            self.write(self.var_addr(ins.dest), v)
        elif isinstance(ins, GetElement):
            self.write(self.var_addr(ins.dest), self.element_addr(ins.base, ins.index))
        elif isinstance(ins, Load):
            a = self.element_addr(ins.base, ins.index)
            self.write(self.var_addr(ins.dest), self.read(a))
        elif isinstance(ins, Store):
            self.write(self.element_addr(ins.base, ins.index), self.value(ins.value))
        elif isinstance(ins, Input):
            if ins.dest is not None:
                self.write(self.var_addr(ins.dest), self.next_input())
            else:
                n = self.value(ins.count)
                if n < 0 or n > MAX_INPUT_WORDS:
                    raise RuntimeFault(f"bad input length {n} at {addr:#x}")
                base = self.element_addr(ins.base, Const(0))
                for i in range(n):
                    self.write(base + i, self.next_input())
        elif isinstance(ins, Output):
            self.outputs.append(self.value(ins.value))
        elif isinstance(ins, AttestBegin):
            if self.op_filter is None or self.op_filter == ins.op_id:
                self.engine.attest_begin(ins.op_id)
                self.current = Execution(ins.op_id, [], [addr])
                self.irq_paths = []
        elif isinstance(ins, AttestEnd):
            s = self.session
            if s is not None and s.op_id == ins.op_id and not s.stack:
                self.current.path.append(addr)
                self.current.blobs = self.engine.attest_end(ins.op_id)
                self.current.interrupt_paths = self.irq_paths
                self.executions.append(self.current)
                self.current = None
        elif isinstance(ins, Branch):
            lhs = self.value(ins.lhs)
            cond = lhs != 0 if ins.op is None else binop(ins.op, lhs, self.value(ins.rhs), addr)
            taken = bool(cond)
            self.control_event(addr, "branch", taken)
            f = self.func_of[addr]
            self.transfer(self.starts[f][ins.taken if taken else ins.not_taken])
            return False
        elif isinstance(ins, Jump):
            self.transfer(self.starts[self.func_of[addr]][ins.label])
            return False
        elif isinstance(ins, JumpIndirect):
            dest = self.value(ins.target)
            self.control_event(addr, "indirect", dest)
            self.indirect_log.append((addr, dest))
            if dest not in self.code:
                raise RuntimeFault(f"indirect jump to non-code address {dest:#x}")
            self.transfer(dest)
            return False
        elif isinstance(ins, Return):
            return self.ret(ins)
        elif isinstance(ins, Halt):
            return True
        else:
            raise RuntimeFault(f"cannot execute {ins!r}")
        if defines:
            self.post_data(defines)
        self.cursor = nxt
        return False

    def element_addr(self, base: VarRef, index) -> int:
        d = self.decl(base)
        if d is not None and d.kind == "array":
            a = self.var_addr(base)
        else:
            a = self.read(self.var_addr(base))
        return a + (self.value(index) if index is not None else 0)

    def next_input(self) -> int:
        return wrap64(self.inputs.pop(0)) if self.inputs else 0

    def call(self, ins) -> bool:
        args = [self.value(a) for a in ins.args]
        caller = self.func_of[ins.addr]
        cont = self.starts[caller][ins.cont]
        if isinstance(ins, Call):
            dest = self.program.function(ins.func).entry
        else:
            dest = self.value(ins.target)
            self.control_event(ins.addr, "indirect", dest)
            self.indirect_log.append((ins.addr, dest))
            if dest not in self.code:
                raise RuntimeFault(f"indirect call to non-code address {dest:#x}")
        callee = self.func_of[dest]
        dest_addr = self.var_addr(ins.dest) if ins.dest is not None else None
        fr = self.push_frame(callee, cont, dest_addr=dest_addr, call_addr=ins.addr)
        fn = self.program.function(callee)
        offs, _ = self.layouts[callee]
        for p, v in zip(fn.params, args):
            self.write(fr.base + offs[p.name], v)
        self.cursor = dest
        if dest == fn.entry:
            for t in self.entry_tags[callee]:
                self._define(t, self._tag_range(t, None, fr, callee))
        self.log_arrival(dest)
        return False

    def ret(self, ins) -> bool:
        tags = self.ins_tags.get(ins.addr, ())
        self.pre_data(ins, tags)
        value = self.value(ins.value) if ins.value is not None else 0
        fr = self.frame
        ret_addr = self.read(fr.ret_slot)
        if fr.irq is not None:
            self.pop_frame()
            if fr.measured and self.session is not None and self.session.stack:
                self.session.end_interrupt(ret_addr)
            self.cursor = ret_addr
            return False
        self.control_event(ins.addr, "return", ret_addr)
        self.pop_frame()
        if not self.stack:
            return True
        if fr.dest_addr is not None:
            self.write(fr.dest_addr, value)
            call = self.code.get(fr.call_addr)
            for t in self.ins_tags.get(fr.call_addr, ()):
                if t.kind == "define" and call is not None and t.var == call.dest:
                    self._define(t, range(fr.dest_addr, fr.dest_addr + 1))
        self.transfer(ret_addr)
        return False


def binop(op: str, a: int, b: int, addr: int = 0) -> int:
    if op == "+":
        return wrap64(a + b)
    if op == "-":
        return wrap64(a - b)
    if op == "*":
        return wrap64(a * b)
    if op in ("/", "%"):
        if b == 0:
            raise RuntimeFault(f"division by zero at {addr:#x}")
        return wrap64(a // b if op == "/" else a % b)
    if op == "&":
        return wrap64(a & b)
    if op == "|":
        return wrap64(a | b)
    if op == "^":
        return wrap64(a ^ b)
    if op == "<<":
        return wrap64(a << (b & 63))
    if op == ">>":
        return wrap64(a >> (b & 63))
    return int({"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b,
                "==": a == b, "!=": a != b}[op])


def run(ip: InstrumentedProgram, op_id: int | None = None, inputs=(), nonce: bytes = bytes(16),
        key: DeviceKey | None = None, faults=(), interrupts=(), **kw) -> RunResult:
    """Execute from the entry function.  Every execution of ``op_id`` (or of
    any operation when None) is measured and sealed into signed blobs."""
    return Machine(ip, inputs=inputs, key=key, nonce=nonce, op_id=op_id, faults=faults,
                   interrupts=interrupts, **kw).run()
