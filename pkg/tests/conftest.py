"""Collect acceptance outcomes and print one line per criterion at the end."""

from __future__ import annotations

import pytest

_OUTCOMES: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when == "teardown" and report.passed:
        return
    number, title = marker.args
    entry = _OUTCOMES.setdefault(number, {"title": title, "status": "PASS", "seconds": 0.0})
    # fixture setup (e.g. a shared benchmark run) counts towards the criterion
    entry["seconds"] += report.duration
    if report.failed:
        entry["status"] = "FAIL"
    elif report.skipped and entry["status"] != "FAIL":
        entry["status"] = "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        e = _OUTCOMES[number]
        terminalreporter.write_line(f"criterion {number}: {e['status']}  {e['title']}  ({e['seconds']:.1f}s)")
