"""Shared fixtures plus the acceptance-criterion result board.

Acceptance tests register one line per criterion; the summary hook prints
them all at the end of the run so pass/fail status is visible even when
pytest captures stdout.
"""

import numpy as np
import pytest

CRITERION_RESULTS = []


def record_criterion(number: int, title: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    line = f"[{status}] criterion {number}: {title}"
    if detail:
        line += f" ({detail})"
    CRITERION_RESULTS.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERION_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(CRITERION_RESULTS):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
