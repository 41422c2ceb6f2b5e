"""Collects acceptance-criterion outcomes and prints one line per criterion."""

_outcomes: dict[int, list[bool]] = {}
_titles: dict[int, str] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            n = mark.args[0]
            _outcomes.setdefault(n, [])
            if len(mark.args) > 1:
                _titles[n] = mark.args[1]


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        _outcomes[mark.args[0]].append(call.excinfo is None)


def pytest_terminal_summary(terminalreporter):
    ran = {n: results for n, results in _outcomes.items() if results}
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ran):
        status = "PASS" if all(ran[n]) else "FAIL"
        detail = f"{sum(ran[n])}/{len(ran[n])} checks"
        terminalreporter.write_line(f"criterion {n}: {status}  {_titles.get(n, '')} ({detail})")
