import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oeiattest import corpus  # noqa: E402
from oeiattest.analysis import analyze, export_bundle  # noqa: E402
from oeiattest.instrument import instrument_analysis  # noqa: E402
from oeiattest.ir import parse_program  # noqa: E402
from oeiattest.measure import DeviceKey  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def key():
    return DeviceKey.from_seed(bytes(range(32)))


@pytest.fixture(scope="session")
def corpus_entries():
    return corpus.load_all()


class Built:
    def __init__(self, program):
        self.program = program
        self.analysis = analyze(program)
        self.bundle = export_bundle(self.analysis)
        self.ip = instrument_analysis(self.analysis)


def build(source: str) -> Built:
    return Built(parse_program(source))


@pytest.fixture(scope="session")
def built_corpus(corpus_entries):
    return {e.name: (e, Built(e.program)) for e in corpus_entries}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
