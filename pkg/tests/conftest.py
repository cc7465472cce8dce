import re

_CRITERIA: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    match = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not match:
        return
    if report.when != "call" and report.outcome == "passed":
        return
    entry = _CRITERIA.setdefault(int(match.group(1)), {"name": match.group(2), "ok": True, "notes": []})
    if report.outcome != "passed":
        entry["ok"] = False
    for key, value in report.user_properties:
        entry["notes"].append(f"{key}={value:.4g}" if isinstance(value, float) else f"{key}={value}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        entry = _CRITERIA[num]
        status = "PASS" if entry["ok"] else "FAIL"
        notes = ", ".join(entry["notes"])
        terminalreporter.write_line(f"criterion {num} {entry['name']}: {status}" + (f"  [{notes}]" if notes else ""))
