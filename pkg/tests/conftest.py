"""Shared test infrastructure.

The acceptance suite records one pass/fail line per criterion; the lines
are echoed immediately and repeated in the terminal summary so they stay
visible under pytest's output capture.
"""

import pytest

_ACCEPTANCE_LINES: list[tuple[int, str]] = []


def _record(number: int, name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    line = f"ACCEPTANCE {number:02d} {name}: {status}"
    if detail:
        line += f" ({detail})"
    _ACCEPTANCE_LINES.append((number, line))
    print(line)


@pytest.fixture(scope="session")
def acceptance():
    """Recorder: acceptance(number, name, passed, detail) prints and asserts."""

    def check(number, name, passed, detail=""):
        _record(number, name, bool(passed), detail)
        assert passed, f"criterion {number} ({name}) failed: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
