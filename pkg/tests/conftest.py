import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion and print it."""

    def record(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"[criterion {number}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
