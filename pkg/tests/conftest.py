"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_results: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n, title = mark.args
    entry = _results.setdefault(n, {"title": title, "status": "PASS", "detail": []})
    if rep.failed:
        entry["status"] = "FAIL"
    elif rep.skipped and hasattr(rep, "wasxfail"):
        entry["status"] = "SOFT-FAIL" if entry["status"] == "PASS" else entry["status"]
    elif rep.skipped:
        entry["status"] = "SKIP"
    entry["detail"] += [v for k, v in item.user_properties if k == "detail"] if rep.when == "call" else []


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        r = _results[n]
        detail = "; ".join(r["detail"])
        terminalreporter.write_line(f"criterion {n:2d} {r['status']:9s} {r['title']}" + (f" ({detail})" if detail else ""))
