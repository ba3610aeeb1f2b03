import os

import pytest

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")

# (criterion number, passed, summary) appended by test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[int, bool, str]] = []


@pytest.fixture
def golden():
    return lambda name: os.path.join(GOLDEN, name)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, summary in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {summary}")
