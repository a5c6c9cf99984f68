"""Shared fixtures and the acceptance summary printed at the end of the run."""
from __future__ import annotations

import pytest

from negcount.core import ModelSpec

ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def z1():
    return ModelSpec.z1()


@pytest.fixture
def z2():
    return ModelSpec.z2()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
