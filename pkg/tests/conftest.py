import pytest

# one line per acceptance criterion, printed after the run
VERDICTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[k])


@pytest.fixture
def verdict():
    def record(k: int, ok: bool, detail: str):
        VERDICTS[k] = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(VERDICTS[k])
        assert ok, VERDICTS[k]
    return record
