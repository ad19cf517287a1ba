import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_LINES = {}


@pytest.fixture
def record():
    """``record(number, passed, detail)`` stores one acceptance line."""

    def _record(number, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
        _LINES[number] = line
        print(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_LINES):
        terminalreporter.write_line(_LINES[number])
