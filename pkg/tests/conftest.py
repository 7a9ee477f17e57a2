import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line: ``verdict(passed, detail)``; the test's own assert decides the outcome."""

    def record(passed: bool, detail: str) -> None:
        name = request.node.name.removeprefix("test_")
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
