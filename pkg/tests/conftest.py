import numpy as np
import pytest
from hypothesis import settings

from chaoslab.gridfn import Grid, GridFunction

settings.register_profile("chaoslab", max_examples=40, deadline=None)
settings.load_profile("chaoslab")


@pytest.fixture
def grid1():
    return Grid(1, 8.0, 512)


@pytest.fixture
def gauss1(grid1):
    return GridFunction.from_callable(grid1, lambda x: np.exp(-x * x / 2) / np.sqrt(2 * np.pi), density=True)


# one line per acceptance criterion, printed after the run whatever the capture mode
ACCEPTANCE: dict = {}


@pytest.fixture
def criterion():
    def record(num: int, title: str, ok: bool, detail: str):
        ACCEPTANCE[num] = (title, bool(ok), detail)
        assert ok, f"criterion {num} ({title}): {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {title}: {detail}")
