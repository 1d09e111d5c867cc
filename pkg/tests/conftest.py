"""Per-criterion PASS/FAIL summary for tests marked ``@pytest.mark.criterion(n, title)``."""

from __future__ import annotations

_CRITERIA: dict[str, tuple[int, str]] = {}
_RESULTS: dict[int, dict[str, str]] = {}
_TITLES: dict[int, str] = {}


def pytest_collection_modifyitems(config, items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            n = int(mark.args[0])
            _CRITERIA[item.nodeid] = (n, mark.args[1] if len(mark.args) > 1 else "")
            _TITLES.setdefault(n, _CRITERIA[item.nodeid][1])


def pytest_runtest_logreport(report):
    hit = _CRITERIA.get(report.nodeid)
    if hit is None:
        return
    outcomes = _RESULTS.setdefault(hit[0], {})
    if report.failed:
        outcomes[report.nodeid] = "failed"
    elif report.when == "call":
        outcomes.setdefault(report.nodeid, report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        outcomes = _RESULTS[n]
        failed = [nid.split("::")[-1] for nid, o in outcomes.items() if o == "failed"]
        status = "FAIL" if failed else "PASS"
        line = f"criterion {n}: {status}  {_TITLES[n]}"
        if failed:
            line += f"  (failed: {', '.join(failed)})"
        terminalreporter.write_line(line)
