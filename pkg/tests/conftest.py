import pytest

_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line and assert it."""

    def record(number, ok, detail):
        _LINES.append((number, f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"))
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
