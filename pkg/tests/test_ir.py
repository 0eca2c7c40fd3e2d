import pytest

from oeiattest import corpus
from oeiattest.ir import (CODE_BASE, CODE_STRIDE, Branch, CallIndirect, ParseError, VarRef,
                          format_program, parse_program, validate, wrap64)

SMALL = """
global int @g = 3 critical
global array @tab[2] = &f, &f

func f(int a) {
  local int b
entry:
  b = a + 1
  ret b
}

func main {
  local int x
  local ptr fp
entry:
  x = input
  attest_begin 7
  fp = @tab[0]
  x = call_indirect fp(x) then back
back:
  branch x < @g yes no
yes:
  output x
  jump done
no:
  jump done
done:
  attest_end 7
  halt
}
"""


def test_addresses_follow_declaration_order():
    p = parse_program(SMALL)
    addrs = [ins.addr for _, _, _, ins in p.instructions()]
    assert addrs == [CODE_BASE + CODE_STRIDE * k for k in range(len(addrs))]
    assert p.function("f").entry == CODE_BASE


def test_parse_structure():
    p = parse_program(SMALL)
    main = p.function("main")
    assert [b.label for b in main.blocks] == ["entry", "back", "yes", "no", "done"]
    assert isinstance(main.block("entry").terminator, CallIndirect)
    assert isinstance(main.block("back").terminator, Branch)
    assert p.global_decl("g").critical
    assert p.decl(VarRef("main", "fp")).kind == "ptr"
    assert validate(p) == []


def test_format_round_trip():
    p = parse_program(SMALL)
    again = parse_program(format_program(p))
    assert format_program(again) == format_program(p)
    assert [i.addr for *_, i in again.instructions()] == [i.addr for *_, i in p.instructions()]


@pytest.mark.parametrize("name", corpus.NAMES)
def test_corpus_round_trips(name):
    p = corpus.load(name).program
    assert format_program(parse_program(format_program(p))) == format_program(p)


@pytest.mark.parametrize("text, fragment", [
    ("func main {\nentry:\n  x = 1\n  halt\n}\n", "unresolved"),
    ("func main {\nentry:\n  jump nowhere\n}\n", "nowhere"),
    ("func main {\nentry:\n  halt\n", "}"),
    ("func main {\nentry:\n  x = = 2\n}\n", ""),
])
def test_parse_errors_are_located(text, fragment):
    with pytest.raises(ParseError) as info:
        p = parse_program(text)
        diags = validate(p)
        if diags:
            raise ParseError(diags)
    assert info.value.diagnostics
    d = info.value.diagnostics[0]
    assert d.line >= 0
    assert fragment in str(info.value) or not fragment


def test_marker_rules():
    two_begins = """
func main {
entry:
  attest_begin 1
  attest_begin 1
  attest_end 1
  halt
}
"""
    msgs = " ".join(str(d) for d in validate(parse_program(two_begins)))
    assert "nested operation" in msgs or "more than one" in msgs
    no_end = "func main {\nentry:\n  attest_begin 2\n  halt\n}\n"
    assert any("without attest_end" in str(d) for d in validate(parse_program(no_end)))


def test_wrap64():
    assert wrap64(2**63) == -(2**63)
    assert wrap64(-1) == -1
    assert wrap64(2**64 + 5) == 5
