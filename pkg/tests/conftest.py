import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    reports = [
        r for key in ("passed", "failed")
        for r in terminalreporter.stats.get(key, [])
        if r.when == "call" and "test_acceptance.py::test_criterion_" in r.nodeid
    ]
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    for r in sorted(reports, key=lambda r: int(r.nodeid.split("test_criterion_")[1].split("_")[0])):
        number = r.nodeid.split("test_criterion_")[1].split("_")[0]
        detail = dict(r.user_properties).get("detail", "no measurement recorded")
        terminalreporter.write_line(f"criterion {number}: {'PASS' if r.passed else 'FAIL'}  {detail}")
