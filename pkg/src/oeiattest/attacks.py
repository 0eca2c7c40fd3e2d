"""Replay the bundled attack scenarios and check they are detected."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .analysis import Analysis, analyze, export_bundle
from .corpus import CorpusEntry, Scenario, load_all
from .instrument import instrument_analysis
from .measure import DeviceKey
from .prover import RunResult, run
from .verifier import VerificationReport, verify


@dataclass
class AttackOutcome:
    program: str
    scenario: Scenario
    report: VerificationReport
    result: RunResult

    @property
    def detected(self) -> bool:
        return not self.report.passed and self.report.failure in self.scenario.expect

    def line(self) -> str:
        status = "detected" if self.detected else "MISSED"
        got = self.report.failure or "pass"
        return (f"{self.program:12s} {self.scenario.name:22s} {self.scenario.kind:20s} "
                f"{status:8s} {got} (expected {'/'.join(self.scenario.expect)})")


def scenario_nonce(program: str, scenario: str) -> bytes:
    return hashlib.blake2s(f"{program}/{scenario}".encode(), digest_size=16).digest()


def run_scenario(entry: CorpusEntry, scenario: Scenario, key: DeviceKey,
                 analysis: Analysis | None = None) -> AttackOutcome:
    """Run with every operation measured, then verify for the requested one."""
    a = analysis or analyze(entry.program)
    nonce = scenario_nonce(entry.name, scenario.name)
    result = run(instrument_analysis(a), None, entry.scenario_inputs(scenario), nonce=nonce,
                 key=key, faults=entry.faults(scenario),
                 interrupts=entry.scenario_interrupts(scenario))
    report = verify(result.blobs, export_bundle(a), entry.operation, nonce, key.public_bytes)
    return AttackOutcome(entry.name, scenario, report, result)


def run_suite(key: DeviceKey | None = None, entries=None) -> list[AttackOutcome]:
    key = key or DeviceKey.from_seed(bytes(32))
    out = []
    for entry in entries or load_all():
        a = analyze(entry.program)
        for s in entry.scenarios:
            out.append(run_scenario(entry, s, key, a))
    return out
