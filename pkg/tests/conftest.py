import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_acceptance():
    """Store ``(criterion, passed, detail)``; printed in the terminal summary."""
    def record(criterion: int, passed: bool, detail: str):
        ACCEPTANCE_RESULTS[criterion] = (bool(passed), detail)
        print(f"ACCEPTANCE criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"ACCEPTANCE criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
