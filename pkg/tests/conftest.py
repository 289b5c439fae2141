import pytest

N_CRITERIA = 11
_outcomes: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance outcome, then assert it."""

    def record(number: int, title: str, passed: bool, detail: str = ""):
        _outcomes[number] = (bool(passed), title, detail)
        assert passed, f"criterion {number} ({title}): {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        passed, title, detail = _outcomes.get(n, (False, "not run to completion", ""))
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {n:2d}. {title}: {detail}".rstrip(": "))
