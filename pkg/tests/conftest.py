import pytest

RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Store a PASS/FAIL line for an acceptance criterion, then assert it."""

    def _record(number: int, passed: bool, detail: str):
        RESULTS[number] = (bool(passed), detail)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        assert passed, detail

    return _record


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        ok, detail = RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
