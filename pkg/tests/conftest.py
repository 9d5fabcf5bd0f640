import pytest

_criteria: dict[int, list[str]] = {}


def pytest_runtest_logreport(report):
    marker = dict(report.user_properties).get("criterion")
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _criteria.setdefault(marker, []).append(report.outcome)


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        item.user_properties.append(("criterion", int(m.args[0])))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        outcomes = _criteria[n]
        ok = all(o == "passed" for o in outcomes)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({len(outcomes)} checks)")
