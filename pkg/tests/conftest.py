import pytest

_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(name, passed, detail)``; the
    lines are printed together at the end of the run."""

    def record(name: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
