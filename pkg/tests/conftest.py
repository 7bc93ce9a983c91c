import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        _criteria[report.nodeid.split("::")[-1]] = (report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name in sorted(_criteria):
        outcome, detail = _criteria[name]
        # test_criterion_07_speedup -> 7 speedup
        _, _, num, *words = name.split("_")
        status = {"passed": "PASS", "skipped": "SKIP"}.get(outcome, "FAIL")
        tr.write_line(f"{status} criterion {int(num)} ({' '.join(words)}): {detail}")
