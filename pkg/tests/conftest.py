import numpy as np
import pytest

from fairgrad.data import Dataset


def make_dataset(n=40, d=3, L=2, S=2, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % L
    s = (np.arange(n) // L) % S
    return Dataset(rng.normal(size=(n, d)), y, s, L, S)


@pytest.fixture
def small_ds():
    return make_dataset()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
