import numpy as np
import pytest

from auxseg.data import make_splits


@pytest.fixture(scope="session")
def tiny_splits():
    """16x16 scenes: enough to exercise training without the full-size cost."""
    return make_splits(3, 24, 8, 16, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, title, passed, detail)``."""
    def record(n: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {n}: {title}" + (f" ({detail})" if detail else "")
        print(line)
        request.config.stash[_ACCEPTANCE].append((n, line))
        return passed
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
