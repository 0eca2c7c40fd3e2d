"""MiniIR: the modeled program language.

A program is a list of functions made of labelled basic blocks, plus global
declarations.  The text format is line oriented::

    global int @mode = 0 critical
    global array @table[2] = &move, &stop
    vector 1 on_timer

    func main(int a) {
      local int x
      local array buf[4]
    entry:
      attest_begin 1
      x = a + 1
      branch x < 3 small big
    small:
      ...
    }

Every instruction gets a fixed code address (``CODE_BASE + 4 * k`` in
declaration order), so addresses are a pure function of the source text.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union

CODE_BASE = 0x1000
CODE_STRIDE = 4
WORD_BITS = 64

BINOPS = ("+", "-", "*", "/", "%", "&", "|", "^", "<<", ">>",
          "<", "<=", ">", ">=", "==", "!=")
KINDS = ("int", "ptr", "array")
KEYWORDS = frozenset({
    "func", "global", "local", "int", "ptr", "array", "critical", "vector",
    "entry", "load", "store", "input", "output", "attest_begin", "attest_end",
    "call", "call_indirect", "jump", "jump_indirect", "branch", "ret", "halt",
    "then",
})


def wrap64(value: int) -> int:
    value &= (1 << WORD_BITS) - 1
    if value >= 1 << (WORD_BITS - 1):
        value -= 1 << WORD_BITS
    return value


# -- operands ---------------------------------------------------------------

@dataclass(frozen=True)
class VarRef:
    """A variable: ``func`` is None for globals."""

    func: str | None
    name: str

    def __str__(self) -> str:
        return f"@{self.name}" if self.func is None else f"{self.func}.{self.name}"

    @property
    def is_global(self) -> bool:
        return self.func is None


@dataclass(frozen=True)
class Const:
    value: int

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class FuncRef:
    name: str

    def __str__(self) -> str:
        return f"&{self.name}"


@dataclass(frozen=True)
class LabelRef:
    func: str
    label: str

    def __str__(self) -> str:
        return f"&&{self.label}"


Operand = Union[VarRef, Const]


def _op(o: Operand) -> str:
    if isinstance(o, VarRef):
        return f"@{o.name}" if o.is_global else o.name
    return str(o.value)


# -- instructions ------------------------------------------------------------

@dataclass(frozen=True)
class Instr:
    addr: int = field(default=0, compare=False, kw_only=True)
    line: int = field(default=0, compare=False, kw_only=True)

    is_terminator = False


@dataclass(frozen=True)
class Assign(Instr):
    dest: VarRef
    src: Operand

    def render(self) -> str:
        return f"{_op(self.dest)} = {_op(self.src)}"


@dataclass(frozen=True)
class BinOp(Instr):
    dest: VarRef
    op: str
    lhs: Operand
    rhs: Operand

    def render(self) -> str:
        return f"{_op(self.dest)} = {_op(self.lhs)} {self.op} {_op(self.rhs)}"


@dataclass(frozen=True)
class AddressOf(Instr):
    dest: VarRef
    target: Union[VarRef, FuncRef, LabelRef]

    def render(self) -> str:
        t = self.target
        if isinstance(t, VarRef):
            return f"{_op(self.dest)} = &{_op(t)}"
        return f"{_op(self.dest)} = {t}"


@dataclass(frozen=True)
class GetElement(Instr):
    """``q = &base[index]``: address arithmetic, no memory access to base."""

    dest: VarRef
    base: VarRef
    index: Operand

    def render(self) -> str:
        return f"{_op(self.dest)} = &{_op(self.base)}[{_op(self.index)}]"


@dataclass(frozen=True)
class Load(Instr):
    """``x = load p`` (index None) or ``x = base[index]``."""

    dest: VarRef
    base: VarRef
    index: Operand | None = None

    def render(self) -> str:
        if self.index is None:
            return f"{_op(self.dest)} = load {_op(self.base)}"
        return f"{_op(self.dest)} = {_op(self.base)}[{_op(self.index)}]"


@dataclass(frozen=True)
class Store(Instr):
    """``store p v`` (index None) or ``base[index] = v``."""

    base: VarRef
    index: Operand | None
    value: Operand

    def render(self) -> str:
        if self.index is None:
            return f"store {_op(self.base)} {_op(self.value)}"
        return f"{_op(self.base)}[{_op(self.index)}] = {_op(self.value)}"


@dataclass(frozen=True)
class AttestBegin(Instr):
    op_id: int

    def render(self) -> str:
        return f"attest_begin {self.op_id}"


@dataclass(frozen=True)
class AttestEnd(Instr):
    op_id: int

    def render(self) -> str:
        return f"attest_end {self.op_id}"


@dataclass(frozen=True)
class Input(Instr):
    """``x = input`` reads one word; ``input p n`` reads n words to memory at p."""

    dest: VarRef | None = None
    base: VarRef | None = None
    count: Operand | None = None

    def render(self) -> str:
        if self.dest is not None:
            return f"{_op(self.dest)} = input"
        return f"input {_op(self.base)} {_op(self.count)}"


@dataclass(frozen=True)
class Output(Instr):
    value: Operand

    def render(self) -> str:
        return f"output {_op(self.value)}"


@dataclass(frozen=True)
class Call(Instr):
    func: str
    args: tuple[Operand, ...]
    dest: VarRef | None
    cont: str

    is_terminator = True

    def render(self) -> str:
        head = f"{_op(self.dest)} = " if self.dest is not None else ""
        args = ", ".join(_op(a) for a in self.args)
        return f"{head}call {self.func}({args}) then {self.cont}"


@dataclass(frozen=True)
class CallIndirect(Instr):
    target: VarRef
    args: tuple[Operand, ...]
    dest: VarRef | None
    cont: str

    is_terminator = True

    def render(self) -> str:
        head = f"{_op(self.dest)} = " if self.dest is not None else ""
        args = ", ".join(_op(a) for a in self.args)
        return f"{head}call_indirect {_op(self.target)}({args}) then {self.cont}"


@dataclass(frozen=True)
class Jump(Instr):
    label: str

    is_terminator = True

    def render(self) -> str:
        return f"jump {self.label}"


@dataclass(frozen=True)
class JumpIndirect(Instr):
    target: VarRef

    is_terminator = True

    def render(self) -> str:
        return f"jump_indirect {_op(self.target)}"


@dataclass(frozen=True)
class Branch(Instr):
    """Conditional branch on ``lhs`` (nonzero) or on ``lhs op rhs``."""

    lhs: Operand
    op: str | None
    rhs: Operand | None
    taken: str
    not_taken: str

    is_terminator = True

    def render(self) -> str:
        cond = _op(self.lhs) if self.op is None else f"{_op(self.lhs)} {self.op} {_op(self.rhs)}"
        return f"branch {cond} {self.taken} {self.not_taken}"


@dataclass(frozen=True)
class Return(Instr):
    value: Operand | None = None

    is_terminator = True

    def render(self) -> str:
        return "ret" if self.value is None else f"ret {_op(self.value)}"


@dataclass(frozen=True)
class Halt(Instr):
    is_terminator = True

    def render(self) -> str:
        return "halt"


Terminator = Union[Call, CallIndirect, Jump, JumpIndirect, Branch, Return, Halt]


# -- declarations and containers ----------------------------------------------

@dataclass(frozen=True)
class VarDecl:
    name: str
    kind: str = "int"
    length: int = 1
    critical: bool = False
    init: tuple[Union[int, FuncRef], ...] = ()
    line: int = field(default=0, compare=False)

    @property
    def size(self) -> int:
        return self.length if self.kind == "array" else 1

    def render(self, prefix: str) -> str:
        name = f"@{self.name}" if prefix == "global" else self.name
        text = f"{prefix} {self.kind} {name}"
        if self.kind == "array":
            text += f"[{self.length}]"
        if self.init:
            text += " = " + ", ".join(str(v) for v in self.init)
        if self.critical:
            text += " critical"
        return text


@dataclass(frozen=True)
class BasicBlock:
    label: str
    instructions: tuple[Instr, ...]
    terminator: Instr

    @property
    def start(self) -> int:
        return self.instructions[0].addr if self.instructions else self.terminator.addr

    def all(self) -> tuple[Instr, ...]:
        return self.instructions + (self.terminator,)


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple[VarDecl, ...]
    locals: tuple[VarDecl, ...]
    blocks: tuple[BasicBlock, ...]
    line: int = field(default=0, compare=False)

    @property
    def entry(self) -> int:
        return self.blocks[0].start

    def block(self, label: str) -> BasicBlock:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def decl(self, name: str) -> VarDecl | None:
        for d in self.params + self.locals:
            if d.name == name:
                return d
        return None


@dataclass(frozen=True)
class Program:
    functions: tuple[Function, ...]
    globals: tuple[VarDecl, ...] = ()
    entry: str = "main"
    vectors: tuple[tuple[int, str], ...] = ()

    def function(self, name: str) -> Function:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def has_function(self, name: str) -> bool:
        return any(f.name == name for f in self.functions)

    def global_decl(self, name: str) -> VarDecl | None:
        for d in self.globals:
            if d.name == name:
                return d
        return None

    def decl(self, ref: VarRef) -> VarDecl | None:
        if ref.func is None:
            return self.global_decl(ref.name)
        if not self.has_function(ref.func):
            return None
        return self.function(ref.func).decl(ref.name)

    def instructions(self) -> Iterator[tuple[Function, BasicBlock, int, Instr]]:
        for f in self.functions:
            for b in f.blocks:
                for i, ins in enumerate(b.all()):
                    yield f, b, i, ins

    def address_map(self) -> dict[int, Instr]:
        return {ins.addr: ins for _, _, _, ins in self.instructions()}

    def variables(self) -> Iterator[tuple[VarRef, VarDecl]]:
        for d in self.globals:
            yield VarRef(None, d.name), d
        for f in self.functions:
            for d in f.params + f.locals:
                yield VarRef(f.name, d.name), d


# -- diagnostics ---------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.message}"


class ParseError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


# -- parser ----------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<comment>\#.*)
  | (?P<labeladdr>&&[A-Za-z_]\w*)
  | (?P<addr>&@?[A-Za-z_]\w*)
  | (?P<num>-?0x[0-9A-Fa-f]+|-?\d+)
  | (?P<glob>@[A-Za-z_]\w*)
  | (?P<ident>[A-Za-z_]\w*)
  | (?P<op><<|>>|<=|>=|==|!=|[-+*/%&|^<>=(),\[\]{}:])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


class _Syntax(Exception):
    def __init__(self, tok_or_pos, message: str):
        if isinstance(tok_or_pos, _Tok):
            self.pos = (tok_or_pos.line, tok_or_pos.col)
        else:
            self.pos = tok_or_pos
        super().__init__(message)


def _lex_line(text: str, lineno: int) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise _Syntax((lineno, pos + 1), f"unexpected character {text[pos]!r}")
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), lineno, pos + 1))
        pos = m.end()
    return toks


def _split_statements(toks: list[_Tok]) -> Iterator[list[_Tok]]:
    """Split one line into statements at ``{``, ``}`` and ``label:`` boundaries."""
    cur: list[_Tok] = []
    i = 0
    while i < len(toks):
        t = toks[i]
        if t.text == "{":
            cur.append(t)
            yield cur
            cur = []
        elif t.text == "}":
            if cur:
                yield cur
            yield [t]
            cur = []
        elif (not cur and t.kind == "ident" and i + 1 < len(toks)
              and toks[i + 1].text == ":"):
            yield [t, toks[i + 1]]
            i += 1
        else:
            cur.append(t)
        i += 1
    if cur:
        yield cur


class _RawFunction:
    def __init__(self, name, params, line):
        self.name = name
        self.params = params
        self.locals: list[VarDecl] = []
        self.blocks: list[tuple[str, list, object, int]] = []
        self.line = line
        self.cur_label: str | None = None
        self.cur_instrs: list = []
        self.cur_line = 0


class _Parser:
    """Two phases: syntax into raw records, then resolution and addressing."""

    def __init__(self, text: str):
        self.text = text
        self.diags: list[Diagnostic] = []
        self.globals: list[VarDecl] = []
        self.vectors: list[tuple[int, str, int]] = []
        self.funcs: list[_RawFunction] = []
        self.entry = "main"
        self.entry_line = 0

    def error(self, pos, message):
        self.diags.append(Diagnostic(pos[0], pos[1], message))

    # phase 1 ------------------------------------------------------------------

    def run(self) -> Program:
        cur: _RawFunction | None = None
        for lineno, raw in enumerate(self.text.splitlines(), start=1):
            try:
                toks = _lex_line(raw, lineno)
            except _Syntax as e:
                self.error(e.pos, str(e))
                continue
            for stmt in _split_statements(toks):
                try:
                    cur = self.statement(stmt, cur)
                except _Syntax as e:
                    self.error(e.pos, str(e))
        if cur is not None:
            self.error((cur.line, 1), f"function {cur.name!r} is missing closing '}}'")
        if self.diags:
            raise ParseError(self.diags)
        program = self.resolve()
        if self.diags:
            raise ParseError(self.diags)
        return program

    def statement(self, stmt: list[_Tok], cur: _RawFunction | None):
        head = stmt[0]
        if cur is None:
            if head.text == "global":
                self.globals.append(self.decl(stmt[1:], glob=True))
            elif head.text == "vector":
                if len(stmt) != 3 or stmt[1].kind != "num" or stmt[2].kind != "ident":
                    raise _Syntax(head, "expected 'vector <id> <function>'")
                self.vectors.append((int(stmt[1].text, 0), stmt[2].text, head.line))
            elif head.text == "entry":
                if len(stmt) != 2 or stmt[1].kind != "ident":
                    raise _Syntax(head, "expected 'entry <function>'")
                self.entry, self.entry_line = stmt[1].text, head.line
            elif head.text == "func":
                return self.func_header(stmt)
            else:
                raise _Syntax(head, f"unexpected {head.text!r} at top level")
            return None
        if head.text == "}":
            self.close_block(cur)
            self.funcs.append(cur)
            return None
        if len(stmt) == 2 and stmt[1].text == ":" and head.kind == "ident":
            self.close_block(cur)
            cur.cur_label, cur.cur_line = head.text, head.line
            return cur
        if head.text == "local":
            if cur.blocks or cur.cur_label is not None:
                raise _Syntax(head, "locals must be declared before the first block")
            cur.locals.append(self.decl(stmt[1:], glob=False))
            return cur
        if cur.cur_label is None:
            raise _Syntax(head, "instruction outside of a labelled block")
        ins = self.instruction(stmt)
        if ins[0] == "term":
            cur.blocks.append((cur.cur_label, cur.cur_instrs, ins, cur.cur_line))
            cur.cur_label, cur.cur_instrs = None, []
        else:
            cur.cur_instrs.append(ins)
        return cur

    def close_block(self, cur: _RawFunction):
        if cur.cur_label is not None:
            self.error((cur.cur_line, 1),
                       f"block {cur.cur_label!r} does not end with a terminator")
            cur.cur_label, cur.cur_instrs = None, []

    def func_header(self, stmt):
        if len(stmt) < 3 or stmt[1].kind != "ident" or stmt[-1].text != "{":
            raise _Syntax(stmt[0], "expected 'func <name>[(params)] {'")
        params: list[VarDecl] = []
        inner = stmt[2:-1]
        if inner:
            if inner[0].text != "(" or inner[-1].text != ")":
                raise _Syntax(inner[0], "malformed parameter list")
            body = inner[1:-1]
            groups: list[list[_Tok]] = [[]]
            for t in body:
                if t.text == ",":
                    groups.append([])
                else:
                    groups[-1].append(t)
            if body:
                for g in groups:
                    if len(g) != 2 or g[0].text not in ("int", "ptr") or g[1].kind != "ident":
                        pos = g[0] if g else stmt[0]
                        raise _Syntax(pos, "parameter must be 'int name' or 'ptr name'")
                    params.append(VarDecl(g[1].text, g[0].text, line=g[1].line))
        return _RawFunction(stmt[1].text, params, stmt[0].line)

    def decl(self, toks: list[_Tok], glob: bool) -> VarDecl:
        if not toks or toks[0].text not in KINDS:
            raise _Syntax(toks[0] if toks else (0, 0), "expected kind int, ptr or array")
        kind = toks[0].text
        if len(toks) < 2:
            raise _Syntax(toks[0], "expected a name")
        name_tok = toks[1]
        if glob:
            if name_tok.kind != "glob":
                raise _Syntax(name_tok, "global names start with '@'")
            name = name_tok.text[1:]
        else:
            if name_tok.kind != "ident" or name_tok.text in KEYWORDS:
                raise _Syntax(name_tok, "invalid local name")
            name = name_tok.text
        rest = toks[2:]
        length = 1
        if kind == "array":
            if len(rest) < 3 or rest[0].text != "[" or rest[1].kind != "num" or rest[2].text != "]":
                raise _Syntax(name_tok, "array needs a length: name[N]")
            length = int(rest[1].text, 0)
            if length <= 0:
                raise _Syntax(rest[1], "array length must be > 0")
            rest = rest[3:]
        critical = False
        if rest and rest[-1].text == "critical":
            critical = True
            rest = rest[:-1]
        init: list = []
        if rest:
            if rest[0].text != "=":
                raise _Syntax(rest[0], "expected '=' or 'critical'")
            if not glob:
                raise _Syntax(rest[0], "locals cannot have initializers")
            for i, t in enumerate(rest[1:]):
                if i % 2 == 1:
                    if t.text != ",":
                        raise _Syntax(t, "expected ','")
                    continue
                if t.kind == "num":
                    init.append(wrap64(int(t.text, 0)))
                elif t.kind == "addr" and not t.text.startswith("&@"):
                    init.append(FuncRef(t.text[1:]))
                else:
                    raise _Syntax(t, "initializer must be an integer or &function")
            if len(init) > length:
                raise _Syntax(rest[0], "too many initializers")
        return VarDecl(name, kind, length, critical, tuple(init), line=name_tok.line)

    # instructions, still unresolved: operands kept as tokens
    def instruction(self, s: list[_Tok]):
        h = s[0]
        texts = [t.text for t in s]
        line = h.line
        if h.text == "halt" and len(s) == 1:
            return ("term", "halt", line, h)
        if h.text == "ret":
            if len(s) > 2:
                raise _Syntax(s[2], "ret takes at most one operand")
            return ("term", "ret", line, s[1] if len(s) == 2 else None)
        if h.text == "jump":
            self.expect_len(s, 2, "jump <label>")
            return ("term", "jump", line, s[1])
        if h.text == "jump_indirect":
            self.expect_len(s, 2, "jump_indirect <var>")
            return ("term", "jump_indirect", line, s[1])
        if h.text == "branch":
            if len(s) == 4:
                return ("term", "branch", line, s[1], None, None, s[2], s[3])
            if len(s) == 6 and s[2].text in BINOPS:
                return ("term", "branch", line, s[1], s[2].text, s[3], s[4], s[5])
            raise _Syntax(h, "expected 'branch <cond> <taken> <not_taken>'")
        if h.text in ("call", "call_indirect"):
            return self.call(None, s, line)
        if h.text in ("attest_begin", "attest_end"):
            if len(s) != 2 or s[1].kind != "num":
                raise _Syntax(h, f"expected '{h.text} <operation id>'")
            return ("instr", h.text, line, int(s[1].text, 0))
        if h.text == "store":
            self.expect_len(s, 3, "store <ptr> <value>")
            return ("instr", "store", line, s[1], None, s[2])
        if h.text == "input":
            self.expect_len(s, 3, "input <ptr> <count>")
            return ("instr", "input_buf", line, s[1], s[2])
        if h.text == "output":
            self.expect_len(s, 2, "output <value>")
            return ("instr", "output", line, s[1])
        # element store: base [ idx ] = value
        if len(s) == 6 and texts[1] == "[" and texts[3] == "]" and texts[4] == "=":
            return ("instr", "store", line, s[0], s[2], s[5])
        if len(s) >= 3 and texts[1] == "=":
            dest = s[0]
            rhs = s[2:]
            rt = [t.text for t in rhs]
            if rt[0] in ("call", "call_indirect"):
                return self.call(dest, rhs, line)
            if len(rhs) == 1:
                t = rhs[0]
                if t.text == "input":
                    return ("instr", "input", line, dest)
                if t.kind == "labeladdr":
                    return ("instr", "addrlabel", line, dest, t)
                if t.kind == "addr":
                    return ("instr", "addrof", line, dest, t)
                return ("instr", "assign", line, dest, t)
            if len(rhs) == 2 and rt[0] == "load":
                return ("instr", "load", line, dest, rhs[1], None)
            if len(rhs) == 3 and rt[1] in BINOPS:
                return ("instr", "binop", line, dest, rt[1], rhs[0], rhs[2])
            if len(rhs) == 4 and rt[1] == "[" and rt[3] == "]":
                if rhs[0].kind == "addr":
                    return ("instr", "gep", line, dest, rhs[0], rhs[2])
                return ("instr", "load", line, dest, rhs[0], rhs[2])
        raise _Syntax(h, f"cannot parse instruction: {' '.join(texts)}")

    def call(self, dest, s, line):
        if len(s) < 6 or s[2].text != "(" or s[-2].text != "then":
            raise _Syntax(s[0], f"expected '{s[0].text} <target>(args) then <label>'")
        close = len(s) - 3
        if s[close].text != ")":
            raise _Syntax(s[close], "expected ')'")
        args = []
        for i, t in enumerate(s[3:close]):
            if i % 2 == 1:
                if t.text != ",":
                    raise _Syntax(t, "expected ','")
            else:
                args.append(t)
        return ("term", s[0].text, line, dest, s[1], args, s[-1])

    @staticmethod
    def expect_len(s, n, usage):
        if len(s) != n:
            raise _Syntax(s[0], f"expected '{usage}'")

    # phase 2 --------------------------------------------------------------------

    def resolve(self) -> Program:
        names = [f.name for f in self.funcs]
        for f in self.funcs:
            if names.count(f.name) > 1 and f is not self._first(f.name):
                self.error((f.line, 1), f"duplicate function {f.name!r}")
        gnames = [g.name for g in self.globals]
        for g in self.globals:
            if gnames.count(g.name) > 1 and gnames.index(g.name) != self.globals.index(g):
                self.error((g.line, 1), f"duplicate global '@{g.name}'")
        for g in self.globals:
            for v in g.init:
                if isinstance(v, FuncRef) and v.name not in names:
                    self.error((g.line, 1), f"unresolved function '{v.name}' in initializer")
        if self.entry not in names:
            self.error((self.entry_line or 1, 1), f"entry function {self.entry!r} not defined")

        addr = CODE_BASE
        functions = []
        for rf in self.funcs:
            self.fn = rf
            self.labels = {label for label, _, _, _ in rf.blocks}
            seen = set()
            for d in rf.params + rf.locals:
                if d.name in seen:
                    self.error((d.line, 1), f"duplicate variable {d.name!r} in {rf.name!r}")
                seen.add(d.name)
            labels_seen = set()
            blocks = []
            if not rf.blocks:
                self.error((rf.line, 1), f"function {rf.name!r} has no blocks")
            for label, raw_instrs, raw_term, bline in rf.blocks:
                if label in labels_seen:
                    self.error((bline, 1), f"duplicate label {label!r} in {rf.name!r}")
                labels_seen.add(label)
                instrs = []
                for raw in raw_instrs:
                    ins = self.build(raw, addr)
                    if ins is not None:
                        instrs.append(ins)
                    addr += CODE_STRIDE
                term = self.build(raw_term, addr)
                addr += CODE_STRIDE
                if term is None:
                    term = Halt(addr=addr - CODE_STRIDE, line=raw_term[2])
                blocks.append(BasicBlock(label, tuple(instrs), term))
            functions.append(Function(rf.name, tuple(rf.params), tuple(rf.locals),
                                      tuple(blocks), line=rf.line))
        for vid, fname, vline in self.vectors:
            if fname not in names:
                self.error((vline, 1), f"unresolved interrupt handler {fname!r}")
        vecs = tuple(sorted((v, f) for v, f, _ in self.vectors))
        if len({v for v, _ in vecs}) != len(vecs):
            self.error((self.vectors[0][2], 1), "duplicate interrupt vector")
        return Program(tuple(functions), tuple(self.globals), self.entry, vecs)

    def _first(self, name):
        return next(f for f in self.funcs if f.name == name)

    def var(self, t: _Tok) -> VarRef:
        if t.kind == "glob":
            name = t.text[1:]
            if not any(g.name == name for g in self.globals):
                raise _Syntax(t, f"unresolved reference to global '@{name}'")
            return VarRef(None, name)
        if t.kind == "ident" and t.text not in KEYWORDS:
            if not any(d.name == t.text for d in self.fn.params + self.fn.locals):
                raise _Syntax(t, f"unresolved reference to variable {t.text!r}")
            return VarRef(self.fn.name, t.text)
        raise _Syntax(t, f"expected a variable, got {t.text!r}")

    def operand(self, t: _Tok) -> Operand:
        if t.kind == "num":
            return Const(wrap64(int(t.text, 0)))
        return self.var(t)

    def label(self, t: _Tok) -> str:
        if t.kind != "ident" or t.text not in self.labels:
            raise _Syntax(t, f"unresolved label {t.text!r}")
        return t.text

    def build(self, raw, addr):
        kind, op, line = raw[0], raw[1], raw[2]
        meta = dict(addr=addr, line=line)
        try:
            if op == "halt":
                return Halt(**meta)
            if op == "ret":
                return Return(self.operand(raw[3]) if raw[3] is not None else None, **meta)
            if op == "jump":
                return Jump(self.label(raw[3]), **meta)
            if op == "jump_indirect":
                return JumpIndirect(self.var(raw[3]), **meta)
            if op == "branch":
                _, _, _, lhs, bop, rhs, tk, nt = raw
                return Branch(self.operand(lhs), bop,
                              self.operand(rhs) if rhs is not None else None,
                              self.label(tk), self.label(nt), **meta)
            if op in ("call", "call_indirect"):
                _, _, _, dest, target, args, cont = raw
                d = self.var(dest) if dest is not None else None
                a = tuple(self.operand(x) for x in args)
                c = self.label(cont)
                if op == "call":
                    if target.kind != "ident" or not any(f.name == target.text for f in self.funcs):
                        raise _Syntax(target, f"unresolved function {target.text!r}")
                    return Call(target.text, a, d, c, **meta)
                return CallIndirect(self.var(target), a, d, c, **meta)
            if op == "attest_begin":
                return AttestBegin(raw[3], **meta)
            if op == "attest_end":
                return AttestEnd(raw[3], **meta)
            if op == "store":
                base = self.var(raw[3])
                idx = self.operand(raw[4]) if raw[4] is not None else None
                return Store(base, idx, self.operand(raw[5]), **meta)
            if op == "input_buf":
                return Input(None, self.var(raw[3]), self.operand(raw[4]), **meta)
            if op == "input":
                return Input(self.var(raw[3]), **meta)
            if op == "output":
                return Output(self.operand(raw[3]), **meta)
            if op == "assign":
                return Assign(self.var(raw[3]), self.operand(raw[4]), **meta)
            if op == "binop":
                return BinOp(self.var(raw[3]), raw[4], self.operand(raw[5]),
                             self.operand(raw[6]), **meta)
            if op == "load":
                idx = self.operand(raw[5]) if raw[5] is not None else None
                return Load(self.var(raw[3]), self.var(raw[4]), idx, **meta)
            if op == "gep":
                base_tok = raw[4]
                base = self.var(_Tok("glob" if base_tok.text.startswith("&@") else "ident",
                                     base_tok.text[1:], base_tok.line, base_tok.col))
                return GetElement(self.var(raw[3]), base, self.operand(raw[5]), **meta)
            if op == "addrlabel":
                return AddressOf(self.var(raw[3]), LabelRef(self.fn.name, self.label(
                    _Tok("ident", raw[4].text[2:], raw[4].line, raw[4].col))), **meta)
            if op == "addrof":
                t = raw[4]
                name = t.text[1:]
                if name.startswith("@"):
                    target = self.var(_Tok("glob", name, t.line, t.col))
                elif any(d.name == name for d in self.fn.params + self.fn.locals):
                    target = VarRef(self.fn.name, name)
                elif any(f.name == name for f in self.funcs):
                    target = FuncRef(name)
                else:
                    raise _Syntax(t, f"unresolved reference {name!r}")
                return AddressOf(self.var(raw[3]), target, **meta)
        except _Syntax as e:
            self.error(e.pos, str(e))
            return None
        raise AssertionError(op)


def parse_program(text: str) -> Program:
    """Parse MiniIR text; raises ParseError carrying located diagnostics."""
    return _Parser(text).run()


def format_program(program: Program) -> str:
    out = []
    if program.entry != "main":
        out.append(f"entry {program.entry}")
    for g in program.globals:
        out.append(g.render("global"))
    for vid, fname in program.vectors:
        out.append(f"vector {vid} {fname}")
    for f in program.functions:
        out.append("")
        params = ", ".join(f"{p.kind} {p.name}" for p in f.params)
        out.append(f"func {f.name}({params}) {{" if f.params else f"func {f.name} {{")
        for d in f.locals:
            out.append("  " + d.render("local"))
        for b in f.blocks:
            out.append(f"{b.label}:")
            for ins in b.all():
                out.append("  " + ins.render())
        out.append("}")
    return "\n".join(out) + "\n"


# -- validation -------------------------------------------------------------------

def _operands(ins: Instr) -> list:
    vals = []
    for name in ("src", "lhs", "rhs", "index", "value", "count", "base", "target", "dest"):
        v = getattr(ins, name, None)
        if v is not None:
            vals.append(v)
    vals.extend(getattr(ins, "args", ()))
    return vals


def validate(program: Program) -> list[Diagnostic]:
    """Structural checks beyond parsing, including attestation marker rules."""
    diags: list[Diagnostic] = []

    def err(ins_or_line, msg):
        line = ins_or_line if isinstance(ins_or_line, int) else ins_or_line.line
        diags.append(Diagnostic(line, 1, msg))

    names = [f.name for f in program.functions]
    for n in set(names):
        if names.count(n) > 1:
            err(0, f"duplicate function {n!r}")
    if program.entry not in names:
        err(0, f"entry function {program.entry!r} not defined")
    for d in program.globals:
        if d.kind == "array" and d.length <= 0:
            err(d, f"array '@{d.name}' must have length > 0")

    begins: dict[int, list[tuple[str, Instr]]] = {}
    ends: dict[int, list[tuple[str, Instr]]] = {}
    for f in program.functions:
        if not f.blocks:
            err(f.line, f"function {f.name!r} has no blocks")
            continue
        labels = {b.label for b in f.blocks}
        for d in f.params + f.locals:
            if d.kind == "array" and d.length <= 0:
                err(d, f"array {d.name!r} must have length > 0")
        open_op: AttestBegin | None = None
        for b in f.blocks:
            if not b.terminator.is_terminator:
                err(b.terminator, f"block {b.label!r} does not end with a terminator")
            for ins in b.instructions:
                if ins.is_terminator:
                    err(ins, f"terminator in the middle of block {b.label!r}")
            for ins in b.all():
                for v in _operands(ins):
                    if isinstance(v, VarRef) and program.decl(v) is None:
                        err(ins, f"unresolved variable {v}")
                if isinstance(ins, (Call, CallIndirect, Branch, Jump)):
                    for lab in (getattr(ins, "cont", None), getattr(ins, "label", None),
                                getattr(ins, "taken", None), getattr(ins, "not_taken", None)):
                        if lab is not None and lab not in labels:
                            err(ins, f"unresolved label {lab!r}")
                if isinstance(ins, Call):
                    if ins.func not in names:
                        err(ins, f"unresolved function {ins.func!r}")
                    elif len(program.function(ins.func).params) != len(ins.args):
                        err(ins, f"call to {ins.func!r} with wrong number of arguments")
                if isinstance(ins, AttestBegin):
                    begins.setdefault(ins.op_id, []).append((f.name, ins))
                    if open_op is not None:
                        err(ins, f"nested operation: attest_begin {ins.op_id} inside "
                                 f"operation {open_op.op_id}")
                    open_op = ins
                elif isinstance(ins, AttestEnd):
                    ends.setdefault(ins.op_id, []).append((f.name, ins))
                    if open_op is not None and open_op.op_id == ins.op_id:
                        open_op = None
    for op_id in sorted(set(begins) | set(ends)):
        b = begins.get(op_id, [])
        e = ends.get(op_id, [])
        if len(b) > 1:
            err(b[1][1], f"operation {op_id} has more than one attest_begin")
        if len(e) > 1:
            err(e[1][1], f"operation {op_id} has more than one attest_end")
        if not b:
            err(e[0][1], f"attest_end {op_id} without attest_begin")
            continue
        if not e:
            err(b[0][1], f"attest_begin {op_id} without attest_end")
            continue
        if b[0][0] != e[0][0]:
            err(e[0][1], f"operation {op_id}: markers span functions "
                         f"({b[0][0]!r} and {e[0][0]!r})")
    for vid, fname in program.vectors:
        if fname not in names:
            err(0, f"unresolved interrupt handler {fname!r}")
        elif program.function(fname).params:
            err(0, f"interrupt handler {fname!r} must not take parameters")
    return diags


def marker_pairs(program: Program) -> list[tuple[int, str, AttestBegin, AttestEnd]]:
    """(op id, function, begin, end) for every complete marker pair."""
    found: dict[int, dict] = {}
    for f, _, _, ins in program.instructions():
        if isinstance(ins, AttestBegin):
            found.setdefault(ins.op_id, {})["begin"] = (f.name, ins)
        elif isinstance(ins, AttestEnd):
            found.setdefault(ins.op_id, {})["end"] = (f.name, ins)
    pairs = []
    for op_id in sorted(found):
        d = found[op_id]
        if "begin" in d and "end" in d and d["begin"][0] == d["end"][0]:
            pairs.append((op_id, d["begin"][0], d["begin"][1], d["end"][1]))
    return pairs
