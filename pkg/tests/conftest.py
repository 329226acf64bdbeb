"""Shared pytest hooks: collects acceptance verdicts and prints one line each."""

import pytest

ACCEPTANCE_IDS = range(1, 10)
_verdicts = {}


@pytest.fixture
def verdict():
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""

    def record(criterion, checks, detail):
        passed = all(checks.values())
        failed = [name for name, ok in checks.items() if not ok]
        _verdicts[criterion] = (passed, detail, failed)
        return passed, failed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in ACCEPTANCE_IDS:
        if k not in _verdicts:
            tr.write_line(f"criterion {k}: NOT RUN")
            continue
        passed, detail, failed = _verdicts[k]
        status = "PASS" if passed else "FAIL"
        extra = f" [failed: {', '.join(failed)}]" if failed else ""
        tr.write_line(f"criterion {k}: {status}  {detail}{extra}")
