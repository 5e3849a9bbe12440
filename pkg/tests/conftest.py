from collections import OrderedDict

import pytest

_RECORDS = OrderedDict()


@pytest.fixture
def record():
    """``record(criterion, label, ok, detail)`` stores a line for the end-of-run summary."""

    def _record(criterion, label, ok, detail=""):
        _RECORDS.setdefault(criterion, []).append((label, bool(ok), detail))
        print(f"criterion {criterion} [{label}]: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RECORDS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for criterion in sorted(_RECORDS):
        checks = _RECORDS[criterion]
        ok = all(c[1] for c in checks)
        parts = "; ".join(f"{label}: {'pass' if good else 'FAIL'} {detail}".strip() for label, good, detail in checks)
        tr.write_line(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({parts})")
