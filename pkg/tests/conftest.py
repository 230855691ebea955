from collections import defaultdict

import pytest

_ACCEPTANCE = defaultdict(list)


@pytest.fixture
def criterion():
    """``criterion(n, part, ok, detail)`` records one acceptance check."""

    def record(n, part, ok, detail=""):
        _ACCEPTANCE[n].append((part, bool(ok), detail))
        print(f"AC{n} {part}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[n]
        ok = all(p[1] for p in parts)
        failed = [p[0] for p in parts if not p[1]]
        tail = f" (failed: {', '.join(failed)})" if failed else ""
        tr.write_line(f"AC{n}: {'PASS' if ok else 'FAIL'} [{len(parts)} checks]{tail}")
        for part, pok, detail in parts:
            tr.write_line(f"    {'ok  ' if pok else 'FAIL'} {part}: {detail}")
