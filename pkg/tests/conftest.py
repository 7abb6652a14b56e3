import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one of the numbered acceptance criteria")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, title = mark.args
    entry = _RESULTS.setdefault(number, {"title": title, "parts": []})
    if rep.when == "setup" and not rep.failed:
        return
    if hasattr(rep, "wasxfail"):
        status = "known-fail"
    elif rep.passed:
        status = "pass"
    elif rep.skipped:
        status = "skipped"
    else:
        status = "fail"
    entry["parts"].append((item.name, status))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        statuses = [s for _, s in entry["parts"]]
        ok = bool(statuses) and all(s == "pass" for s in statuses)
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {entry['title']}"
        bad = [f"{name}: {s}" for name, s in entry["parts"] if s != "pass"]
        if bad:
            line += "  [" + "; ".join(bad) + "]"
        tr.write_line(line)
