from __future__ import annotations

import re

import pytest

from longctx_synth.backend import MockBackend
from longctx_synth.chunk_tree import ChunkPolicy

CRITERIA = {
    1: "chunk reconstruction",
    2: "walk branch statistics",
    3: "multi-hop rate",
    4: "composition counts vs enumerator",
    5: "revisit expectation",
    6: "recipe reproduction at desk scale",
    7: "ablation presets",
    8: "format fidelity",
    9: "backend concurrency",
    10: "determinism across worker counts",
}
_outcomes: dict[int, str] = {}


@pytest.fixture
def mock():
    return MockBackend(seed=7)


@pytest.fixture
def tiny_policy():
    return ChunkPolicy(small_tokens=64, medium_tokens=192)


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes[n] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n in _outcomes:
            terminalreporter.write_line(f"criterion {n:2d} {_outcomes[n]}  {name}")
