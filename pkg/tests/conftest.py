import numpy as np
import pytest

from qreadout import HypothesisModel, TimeGrid


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for the acceptance summary."""

    def _report(criterion: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        request.config._acceptance_lines.append(line)
        print(line)

    return _report


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid():
    return TimeGrid(1.0, 400)


@pytest.fixture
def decaying():
    return HypothesisModel("decaying", decay=1.2, excitation=0.0, amplitude=2.0, initial_prob=(0.2, 0.8))


@pytest.fixture
def mixing():
    return HypothesisModel("mixing", decay=1.0, excitation=0.7, amplitude=-1.5, initial_prob=(0.6, 0.4))
