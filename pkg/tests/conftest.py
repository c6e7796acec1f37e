import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; returns ``report(n, ok, detail)``."""

    def report(n: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
        _CRITERIA[n] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
