import pytest

from ramplab.scenarios import run_suite

_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def suite():
    """Default scenario suite, run once per session."""
    return run_suite()


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; the lines are repeated in the terminal summary."""

    def report(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
