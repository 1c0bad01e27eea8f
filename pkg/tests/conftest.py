import sys, pathlib

import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line, then fail the test if the criterion failed."""

    def record(number, ok, detail):
        line = f"acceptance {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
