from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``record(k, title, passed, detail)``."""

    def record(k: int, title: str, passed: bool, detail: str = "") -> bool:
        _CRITERIA[k] = (title, "PASS" if passed else "FAIL", detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d} {status}  {title}: {detail}")
