"""Prints one PASS/FAIL line per acceptance criterion at the end of the session."""

_results: dict[int, tuple[str, bool]] = {}


def pytest_runtest_logreport(report):
    marker = report.user_properties and dict(report.user_properties).get("criterion")
    if not marker:
        return
    n, title = marker
    ok = _results.get(n, (title, True))[1] and not report.failed
    if report.when == "call" or report.failed:
        _results[n] = (title, ok)


def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m:
        item.user_properties.append(("criterion", tuple(m.args)))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        title, ok = _results[n]
        terminalreporter.write_line(f"criterion {n} [PRIMARY] {title}: {'PASS' if ok else 'FAIL'}")
