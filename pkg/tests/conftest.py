"""Shared pytest plumbing: the acceptance-criteria summary block.

test_acceptance.py registers one line per criterion through the
`acceptance` fixture; the terminal-summary hook prints them after the
test run so the pass/fail verdicts survive output capturing.
"""

import pytest

_LINES = {}


@pytest.fixture(scope="session")
def acceptance():
    def record(criterion, passed, detail):
        verdict = "PASS" if passed else "FAIL"
        _LINES[criterion] = f"criterion {criterion}: {verdict} - {detail}"
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_LINES):
            terminalreporter.write_line(_LINES[k])
