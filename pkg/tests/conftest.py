"""Collects one pass/fail line per acceptance criterion and prints them at the end."""

import pytest

_LINES: list[str] = []


@pytest.fixture
def report(request, capsys):
    def _report(criterion: int, passed: bool, detail: str) -> None:
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        _LINES.append(line)
        with capsys.disabled():
            print(f"\n[acceptance] {line}")

    return _report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
