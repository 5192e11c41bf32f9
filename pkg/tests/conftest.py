"""Shared pytest plumbing: collect acceptance pass/fail lines and print them
after the run, outside stdout capture."""

import pytest

_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """Callable that records one summary line for the acceptance report."""

    def record(line: str) -> None:
        _LINES.append(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
