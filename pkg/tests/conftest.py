import pytest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().user_properties.append(("criterion", marker.args))


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, in criterion order."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(report, "user_properties", ()))
            if "criterion" not in props:
                continue
            number, title = props["criterion"]
            status = "PASS" if outcome == "passed" and lines.get(number, ("PASS",))[0] == "PASS" else "FAIL"
            lines[number] = (status, title)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        status, title = lines[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")
