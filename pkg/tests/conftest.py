import numpy as np
import pytest

from basepar.dynamics import assemble_observation
from basepar.model import load_mechanism
from basepar.numeric_base import certify_rank
from basepar.precision import PrecisionLevel
from basepar.sla import FIXTURES, sla_defaults
from basepar.symbolic_base import run_plan

P30, P60 = PrecisionLevel(30), PrecisionLevel(60)


@pytest.fixture(scope="session")
def sla():
    return sla_defaults()


@pytest.fixture(scope="session")
def sla_symbolic(sla):
    return run_plan(sla.mechanism, sla.plan)


@pytest.fixture(scope="session")
def sla_ridge(sla):
    """Observation matrices and spectra at 30 and 60 digits (the slow part of the suite)."""
    cache = {}

    def build(level):
        obs = assemble_observation(sla.mechanism, sla.trajectory, level)
        cache[level] = obs
        return obs

    report = certify_rank(build, [P30, P60])
    report.observations = cache
    return report


@pytest.fixture(scope="session")
def sla_dp(sla):
    return assemble_observation(sla.mechanism, sla.trajectory, PrecisionLevel.native())


@pytest.fixture(scope="session")
def pendulum():
    return load_mechanism(FIXTURES / "pendulum")


@pytest.fixture(scope="session")
def twolink():
    return load_mechanism(FIXTURES / "twolink")


@pytest.fixture(scope="session")
def fourbar():
    return load_mechanism(FIXTURES / "fourbar")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
