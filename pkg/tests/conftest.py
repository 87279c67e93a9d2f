import numpy as np
import pytest

from nilflow.algebra import LieStructure
from nilflow.flow import random_state
from nilflow.grid import Grid


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion (echoed in the terminal summary)."""
    def log(name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        request.config._acceptance_lines.append(line)
        print(line)
        return ok
    return log


@pytest.fixture
def heis():
    return LieStructure.heisenberg(1.0)


@pytest.fixture
def generic_state(heis):
    return random_state(Grid(64, method="spectral"), heis, seed=1, modes=3, h0=0.7)


def rel_err(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / max(np.max(np.abs(b)), 1e-300))
