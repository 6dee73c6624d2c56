import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_measure(rng, atoms, grid=None):
    from dgmlab.graph_limits import DiscreteMeasure1D

    pos = rng.random(atoms) if grid is None else rng.integers(0, grid + 1, atoms) / grid
    return DiscreteMeasure1D(pos, rng.random(atoms) * 2)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion and return the verdict."""
    lines = request.config.stash[ACCEPTANCE]

    def record(criterion: int, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  criterion {criterion:2d}: {detail}"
        print(line)
        lines.append((criterion, line))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
