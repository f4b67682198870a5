import pytest

RESULTS: dict = {}


def record(num, ok, detail):
    RESULTS[num] = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[num])


@pytest.fixture
def criterion():
    return record


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[num])
