import pytest

_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record the outcome of an acceptance criterion for the end-of-run summary."""

    def record(number: int, passed: bool, detail: str = ""):
        _CRITERIA[number] = (bool(passed), detail)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    number = getattr(item.function, "criterion_number", None)
    if number is not None and rep.when == "call" and rep.failed and number not in _CRITERIA:
        _CRITERIA[number] = (False, f"error: {call.excinfo.typename}: {call.excinfo.value}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
