import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, name: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        _LINES[number] = line
        print(line)
        assert ok, line

    return record


def pytest_runtest_logreport(report):
    # a criterion that errored before recording still gets a line
    if report.when == "call" and report.failed and "test_acceptance" in report.nodeid:
        num = report.nodeid.split("criterion_")[-1].split("_")[0]
        if num.isdigit() and int(num) not in _LINES:
            _LINES[int(num)] = f"criterion {int(num):2d} FAIL  {report.nodeid.split('::')[-1]}  (error)"


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_LINES):
            terminalreporter.write_line(_LINES[k])
