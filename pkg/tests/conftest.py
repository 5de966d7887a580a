"""Collect acceptance outcomes and print one line per criterion at the end of the session."""

import pytest

_outcomes: dict[int, dict] = {}


@pytest.fixture
def detail(request):
    """Append a short measured-value note to the criterion line."""

    def add(text: str) -> None:
        request.node.user_properties.append(("detail", text))

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _outcomes.setdefault(number, {"title": title, "passed": True, "seen": False, "details": []})
    if report.when == "call" or report.failed:
        entry["seen"] = True
        entry["passed"] &= report.passed
    if report.when == "call":
        entry["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_outcomes):
        e = _outcomes[number]
        if not e["seen"]:
            status = "SKIP"
        else:
            status = "PASS" if e["passed"] else "FAIL"
        line = f"criterion {number:2d}: {status}  {e['title']}"
        if e["details"]:
            line += "  [" + "; ".join(e["details"]) + "]"
        tr.write_line(line)
