"""Random structured MiniIR programs for property tests.

Programs are generated as structured code (sequences, if/else, bounded
counting loops, direct and table-driven indirect calls, computed jumps), so
every program validates, terminates, and has one operation whose markers
sit in ``main`` around a sequence of statements.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

MAX_BLOCKS = 12
MAX_LOOP = 3
ARITH = ("+", "-", "*", "&", "|", "^")
CMP = ("<", "<=", ">", ">=", "==", "!=")


@dataclass
class _Fn:
    name: str
    params: list[str]
    ints: list[str] = field(default_factory=list)
    arrays: dict[str, int] = field(default_factory=dict)
    ptrs: list[str] = field(default_factory=list)
    critical: set[str] = field(default_factory=set)
    blocks: list[tuple[str, list[str]]] = field(default_factory=list)
    cur: list[str] | None = None
    n_labels: int = 0
    reserved: int = 0

    def label(self, hint: str) -> str:
        self.n_labels += 1
        return f"{hint}{self.n_labels}"

    def open(self, label: str) -> None:
        self.cur = []
        self.blocks.append((label, self.cur))

    def emit(self, line: str) -> None:
        self.cur.append(line)


class ProgramGenerator:
    def __init__(self, seed: int, max_blocks: int = MAX_BLOCKS, n_funcs: int | None = None,
                 interrupts: bool | None = None):
        self.rng = random.Random(seed)
        self.max_blocks = max_blocks
        self.n_funcs = n_funcs if n_funcs is not None else self.rng.randint(0, 3)
        self.with_irq = interrupts if interrupts is not None else self.rng.random() < 0.3
        self.globals: list[str] = []
        self.global_ints: list[str] = []
        self.table: list[str] = []

    # -- helpers -----------------------------------------------------------------

    def operand(self, fn: _Fn) -> str:
        r = self.rng.random()
        if r < 0.25:
            return str(self.rng.randint(-3, 9))
        pool = fn.params + fn.ints + self.global_ints
        return self.rng.choice(pool)

    def target(self, fn: _Fn) -> str:
        return self.rng.choice(fn.ints + self.global_ints)

    def blocks_left(self, fn: _Fn) -> int:
        return self.max_blocks - len(fn.blocks) - fn.reserved

    # -- statements -----------------------------------------------------------------

    def simple(self, fn: _Fn, callees: list[_Fn]) -> None:
        rng = self.rng
        kind = rng.choice(["arith", "arith", "input", "array", "pointer", "output", "mod"])
        if kind == "arith":
            fn.emit(f"{self.target(fn)} = {self.operand(fn)} {rng.choice(ARITH)} {self.operand(fn)}")
        elif kind == "mod":
            fn.emit(f"{self.target(fn)} = {self.operand(fn)} % {rng.randint(1, 7)}")
        elif kind == "input":
            fn.emit(f"{self.target(fn)} = input")
        elif kind == "output":
            fn.emit(f"output {self.operand(fn)}")
        elif kind == "array" and fn.arrays:
            name = rng.choice(sorted(fn.arrays))
            t = fn.ints[0]
            fn.emit(f"{t} = {self.operand(fn)} % {fn.arrays[name]}")
            if rng.random() < 0.5:
                fn.emit(f"{name}[{t}] = {self.operand(fn)}")
            else:
                fn.emit(f"{self.target(fn)} = {name}[{t}]")
        elif kind == "pointer" and fn.ptrs:
            p = rng.choice(fn.ptrs)
            choices = [f"&{v}" for v in fn.ints[1:]] + [f"&{g}" for g in self.global_ints]
            fn.emit(f"{p} = {rng.choice(choices)}")
            if rng.random() < 0.5:
                fn.emit(f"store {p} {self.operand(fn)}")
            else:
                fn.emit(f"{self.target(fn)} = load {p}")
        else:
            fn.emit(f"{self.target(fn)} = {self.operand(fn)} + 1")

    def statements(self, fn: _Fn, callees: list[_Fn], count: int, depth: int) -> None:
        for _ in range(count):
            left = self.blocks_left(fn)
            r = self.rng.random()
            if r < 0.15 and depth < 2 and left >= 4:
                self.if_else(fn, callees, depth)
            elif r < 0.27 and depth < 2 and left >= 4:
                self.loop(fn, callees, depth)
            elif r < 0.42 and callees and left >= 2:
                self.call(fn, callees)
            elif r < 0.50 and self.table and left >= 2:
                self.indirect_call(fn)
            elif r < 0.55 and depth < 2 and left >= 7:
                self.computed_jump(fn, callees, depth)
            else:
                self.simple(fn, callees)

    def if_else(self, fn, callees, depth) -> None:
        a, b, j = fn.label("then"), fn.label("else"), fn.label("join")
        fn.emit(f"branch {self.operand(fn)} {self.rng.choice(CMP)} {self.operand(fn)} {a} {b}")
        fn.reserved += 2
        fn.open(a)
        self.statements(fn, callees, self.rng.randint(1, 2), depth + 1)
        fn.emit(f"jump {j}")
        fn.reserved -= 1
        fn.open(b)
        self.statements(fn, callees, self.rng.randint(0, 2), depth + 1)
        fn.emit(f"jump {j}")
        fn.reserved -= 1
        fn.open(j)

    def loop(self, fn, callees, depth) -> None:
        counter = f"c{fn.n_labels}"
        fn.emit(f"{counter} = 0")
        h, body, out = fn.label("head"), fn.label("body"), fn.label("exit")
        bound = self.rng.choice([str(self.rng.randint(1, MAX_LOOP)), "__input__"])
        lim = None
        if bound == "__input__":
            lim = f"n{fn.n_labels}"
            fn.emit(f"{lim} = input")
            fn.emit(f"{lim} = {lim} % {MAX_LOOP + 1}")
            bound = lim
        fn.emit(f"jump {h}")
        fn.open(h)
        fn.emit(f"branch {counter} < {bound} {body} {out}")
        fn.reserved += 1
        fn.open(body)
        self.statements(fn, callees, self.rng.randint(1, 2), depth + 1)
        fn.emit(f"{counter} = {counter} + 1")
        fn.emit(f"jump {h}")
        fn.reserved -= 1
        fn.open(out)
        # the counter and limit join the variable pool only once the loop is
        # closed, so the body never assigns them
        fn.ints.append(counter)
        fn.critical.add(counter)
        if lim is not None:
            fn.ints.append(lim)

    def call(self, fn, callees) -> None:
        g = self.rng.choice(callees)
        args = ", ".join(self.operand(fn) for _ in g.params)
        cont = fn.label("ret")
        fn.emit(f"{self.target(fn)} = call {g.name}({args}) then {cont}")
        fn.open(cont)

    def indirect_call(self, fn) -> None:
        t = fn.ints[0]
        fp = "fp"
        if fp not in fn.ints:
            fn.ints.insert(1, fp)
        fn.emit(f"{t} = {self.operand(fn)} % {len(self.table)}")
        fn.emit(f"{fp} = @tbl[{t}]")
        cont = fn.label("ret")
        fn.emit(f"{self.target(fn)} = call_indirect {fp}({self.operand(fn)}) then {cont}")
        fn.open(cont)

    def computed_jump(self, fn, callees, depth) -> None:
        if "lp" not in fn.ints:
            fn.ints.insert(1, "lp")
        a, b, j = fn.label("pa"), fn.label("pb"), fn.label("dispatch")
        t1, t2, k = fn.label("ta"), fn.label("tb"), fn.label("merge")
        fn.emit(f"branch {self.operand(fn)} {self.rng.choice(CMP)} {self.operand(fn)} {a} {b}")
        fn.open(a)
        fn.emit(f"lp = &&{t1}")
        fn.emit(f"jump {j}")
        fn.open(b)
        fn.emit(f"lp = &&{t2}")
        fn.emit(f"jump {j}")
        fn.open(j)
        fn.emit("jump_indirect lp")
        fn.open(t1)
        self.simple(fn, callees)
        fn.emit(f"jump {k}")
        fn.open(t2)
        self.simple(fn, callees)
        fn.emit(f"jump {k}")
        fn.open(k)

    # -- functions -------------------------------------------------------------------

    def new_fn(self, name: str, n_params: int) -> _Fn:
        rng = self.rng
        fn = _Fn(name, [f"a{i}" for i in range(n_params)])
        fn.ints = ["t"] + [f"v{i}" for i in range(rng.randint(1, 3))]
        if rng.random() < 0.5:
            fn.arrays[f"arr{rng.randint(0, 9)}"] = rng.randint(2, 4)
        if rng.random() < 0.5:
            fn.ptrs.append("p")
        for v in fn.ints[1:]:
            if rng.random() < 0.2:
                fn.critical.add(v)
        return fn

    def prologue(self, fn: _Fn) -> None:
        fn.open("entry")
        for a, n in fn.arrays.items():
            for i in range(n):
                fn.emit(f"{a}[{i}] = 0")
        for p in fn.ptrs:
            fn.emit(f"{p} = &t")

    def render_fn(self, fn: _Fn) -> str:
        params = ", ".join(f"int {p}" for p in fn.params)
        head = f"func {fn.name}({params}) {{" if fn.params else f"func {fn.name} {{"
        lines = [head]
        for v in fn.ints:
            lines.append(f"  local int {v}" + (" critical" if v in fn.critical else ""))
        for a, n in fn.arrays.items():
            lines.append(f"  local array {a}[{n}]")
        for p in fn.ptrs:
            lines.append(f"  local ptr {p}")
        # every scalar local is zeroed first, including those added later
        fn.blocks[0][1][:0] = [f"{v} = 0" for v in fn.ints]
        for label, body in fn.blocks:
            lines.append(f"{label}:")
            lines.extend(f"  {ins}" for ins in body)
        lines.append("}")
        return "\n".join(lines)

    def generate(self) -> str:
        rng = self.rng
        for i in range(rng.randint(1, 3)):
            g = f"g{i}"
            self.global_ints.append(f"@{g}")
            crit = " critical" if rng.random() < 0.3 else ""
            self.globals.append(f"global int @{g} = {rng.randint(0, 5)}{crit}")
        funcs: list[_Fn] = []
        for i in range(self.n_funcs):
            funcs.append(self.new_fn(f"f{i}", rng.randint(0, 2) if i else 1))
        one_arg = [f for f in funcs if len(f.params) == 1]
        if len(one_arg) >= 1 and rng.random() < 0.6:
            self.table = [f.name for f in one_arg]
            self.globals.append(f"global array @tbl[{len(self.table)}] = "
                                + ", ".join(f"&{n}" for n in self.table))
        # build callees first: a function calls only lower-numbered ones,
        # table functions make no indirect calls, so nothing recurses
        saved = self.table
        for i, fn in enumerate(funcs):
            self.table = [] if fn.name in saved else [n for n in saved if int(n[1:]) < i]
            self.prologue(fn)
            self.statements(fn, funcs[:i], rng.randint(1, 4), 0)
            fn.emit(f"ret {self.operand(fn)}")
        self.table = saved

        handler = None
        if self.with_irq:
            handler = _Fn("isr", [])
            handler.ints = ["t"]
            handler.open("entry")
            handler.emit("t = 0")
            self.table, saved = [], self.table
            self.statements(handler, [f for f in funcs if f.name not in saved][:1], 2, 1)
            handler.emit("ret")
            self.table = saved

        main = self.new_fn("main", 0)
        self.prologue(main)
        self.statements(main, funcs, rng.randint(0, 2), 1)
        main.emit("attest_begin 1")
        self.statements(main, funcs, rng.randint(1, 5), 0)
        main.emit("attest_end 1")
        self.statements(main, funcs, rng.randint(0, 1), 1)
        main.emit("halt")

        parts = list(self.globals)
        if handler is not None:
            parts.append("vector 1 isr")
        text = "\n".join(parts) + "\n\n"
        body = [self.render_fn(f) for f in funcs]
        if handler is not None:
            body.append(self.render_fn(handler))
        body.append(self.render_fn(main))
        return text + "\n\n".join(body) + "\n"

    def inputs(self, n: int = 24) -> list[int]:
        return [self.rng.randint(-4, 12) for _ in range(n)]

    def interrupt_schedule(self) -> list[dict]:
        if not self.with_irq:
            return []
        return [{"at": self.rng.randint(1, 40), "irq": 1}]


def random_program(seed: int, **kw) -> tuple[str, list[int], list[dict]]:
    """(source, inputs, interrupt schedule) for one seed."""
    gen = ProgramGenerator(seed, **kw)
    text = gen.generate()
    return text, gen.inputs(), gen.interrupt_schedule()


def chain_program(n: int) -> str:
    """An operation whose path visits ``n`` blocks in a straight line, one
    branch bit per block."""
    lines = ["func main {", "  local int x", "entry:", "  x = 1", "  attest_begin 1",
             "  jump b0"]
    for i in range(n):
        lines += [f"b{i}:", f"  branch x < 5 b{i + 1} b{i + 1}"]
    lines += [f"b{n}:", "  attest_end 1", "  halt", "}"]
    return "\n".join(lines) + "\n"


def call_chain_program(n_calls: int) -> str:
    """An operation making ``n_calls`` direct calls to a branch-free leaf: the
    forward-edge trace is empty whatever ``n_calls`` is."""
    lines = ["func leaf(int a) {", "  local int b", "entry:", "  b = a + 1", "  ret b", "}",
             "", "func main {", "  local int x", "entry:", "  x = 0", "  attest_begin 1",
             "  jump c0"]
    for i in range(n_calls):
        lines += [f"c{i}:", f"  x = call leaf(x) then c{i + 1}"]
    lines += [f"c{n_calls}:", "  attest_end 1", "  output x", "  halt", "}"]
    return "\n".join(lines) + "\n"
