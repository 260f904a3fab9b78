"""Shared test plumbing: the acceptance gate's pass/fail line registry.

Acceptance tests record one verdict per criterion through the
``record_criterion`` fixture; the terminal summary prints them as a block so
the run's final output always carries one line per criterion, whatever order
pytest ran things in.
"""

import pytest

ACCEPTANCE_RESULTS: list[tuple[str, str, str]] = []


@pytest.fixture
def record_criterion():
    def _record(name: str, ok: bool | None, detail: str = ""):
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        ACCEPTANCE_RESULTS.append((name, status, detail))
        if ok is None:
            pytest.skip(f"{name}: {detail}")
        assert ok, f"{name}: {detail}"

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in sorted(ACCEPTANCE_RESULTS):
        line = f"{name} {status}"
        if detail:
            line += f"  {detail}"
        terminalreporter.write_line(line)
