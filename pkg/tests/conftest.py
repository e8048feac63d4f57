from __future__ import annotations

import random
from pathlib import Path

import pytest

from twinledger.consortium import Consortium
from twinledger.payloads import Role
from twinledger.sim import load_config

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def scenario(name: str):
    return load_config(SCENARIOS / f"{name}.yaml")


def make_consortium(seed: bytes = b"test-consortium", batch_size: int = 8) -> Consortium:
    c = Consortium(seed, "regulator", batch_size=batch_size, rng=random.Random(7))
    c.enroll("twin", Role.TWIN_SERVICE)
    c.enroll("gw1", Role.GATEWAY, b"\x01" * 32)
    c.enroll("gw2", Role.GATEWAY, b"\x02" * 32)
    c.enroll("press-1", Role.MACHINE, b"\x03" * 32)
    c.enroll("s1", Role.SENSOR, b"\x04" * 32)
    c.enroll("alice", Role.HUMAN)
    return c


@pytest.fixture
def consortium() -> Consortium:
    return make_consortium()


_RUNS: dict = {}


def scenario_run(name: str):
    """Run a corpus scenario once per session and reuse the result."""
    from twinledger.sim import run_full
    if name not in _RUNS:
        _RUNS[name] = run_full(scenario(name))
    return _RUNS[name]


CORPUS = sorted(p.stem for p in SCENARIOS.glob("*.yaml"))


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
