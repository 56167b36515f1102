"""Shared acceptance-result recording.

Acceptance tests register one entry per criterion; the terminal summary
prints a single PASS/FAIL line for each so a run's verdict is readable
without scrolling through tracebacks.
"""

import pytest

ACCEPTANCE_RESULTS = []
CRITERION_COUNT = 12


@pytest.fixture
def record_criterion():
    def _record(num: int, label: str, ok: bool, detail: str):
        ACCEPTANCE_RESULTS.append({"num": num, "label": label, "ok": bool(ok), "detail": detail})
        assert ok, f"criterion {num} ({label}): {detail}"
    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    seen = {e["num"]: e for e in ACCEPTANCE_RESULTS}
    for num in range(1, CRITERION_COUNT + 1):
        entry = seen.get(num)
        if entry is None:
            terminalreporter.write_line(f"criterion {num:2d} NOT RUN")
            continue
        status = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(
            f"criterion {num:2d} {status}  {entry['label']}: {entry['detail']}"
        )
