import pytest

_ACCEPTANCE = {}


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])


def pytest_runtest_logreport(report):
    # a criterion test that crashed before recording still gets a FAIL line
    name = report.nodeid.rsplit("::", 1)[-1]
    if report.when == "call" and report.failed and name.startswith("test_criterion_"):
        number = int(name.split("_")[2])
        _ACCEPTANCE.setdefault(number, f"criterion {number}: FAIL  (error: see traceback)")
