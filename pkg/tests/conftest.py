"""Shared pytest wiring: collects acceptance-gate result lines.

The acceptance tests each record one ``[criterion N] PASS/FAIL`` line
through the ``acceptance_log`` fixture; the hook below replays them in
the terminal summary so the verdicts stay visible even when per-test
output is captured.
"""

from __future__ import annotations

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
