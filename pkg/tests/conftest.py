"""Shared pytest glue: an always-visible acceptance-criteria summary.

test_acceptance.py records one line per criterion through the
`acceptance_log` fixture; the terminal-summary hook prints them after the
test results, whether or not output capturing swallowed the in-test
prints.
"""

import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    def record(line: str) -> None:
        print(line, flush=True)
        _ACCEPTANCE_LINES.append(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
