from pathlib import Path

import numpy as np
import pytest

from syncsde.dynamics import make_system
from syncsde.noise import TimeGrid, build_ou_paths, sample_wiener

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    """Record one pass/fail line for the end-of-run acceptance summary."""
    def record(criterion, passed, detail):
        line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def benchmark_spec():
    """Linear benchmark: N=4, L=1, forcing 1, one driver with c=0.5."""
    return make_system([1.0] * 4, [[0.5]], 1.0, forcing=1.0)


@pytest.fixture
def zero_ou():
    def make(grid, N=4):
        noise = sample_wiener(0, grid, 1)
        return noise, build_ou_paths(noise, np.zeros((N, 1)), init=np.zeros(N))
    return make


@pytest.fixture
def stochastic_paths():
    def make(seed, grid, coeffs):
        noise = sample_wiener(seed, grid, np.atleast_2d(coeffs).shape[1])
        return noise, build_ou_paths(noise, coeffs)
    return make


@pytest.fixture
def unit_grid():
    return TimeGrid(0.0, 1.0, 1e-3)
