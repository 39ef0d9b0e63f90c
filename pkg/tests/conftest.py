"""Collects outcomes of tests marked ``criterion(n)`` and prints one line per criterion."""

import collections

import pytest

_outcomes = collections.defaultdict(list)
_titles = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    _titles.setdefault(n, mark.kwargs.get("title", ""))
    # a passing setup is not a result; a failing or skipping one is
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _outcomes[n].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        results = _outcomes[n]
        if "failed" in results:
            status = "FAIL"
        elif all(r == "skipped" for r in results):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {n}: {status}  {_titles[n]} ({len(results)} checks)")
