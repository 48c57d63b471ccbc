import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> list of (part, passed, detail)
_CRITERIA: dict[int, list] = {}


@pytest.fixture
def criterion():
    def record(number: int, part: str, passed: bool, detail: str = "") -> bool:
        _CRITERIA.setdefault(number, []).append((part, bool(passed), detail))
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        parts = _CRITERIA[number]
        ok = all(p[1] for p in parts)
        tr.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}")
        for part, passed, detail in parts:
            tr.write_line(f"    {'PASS' if passed else 'FAIL'} {part}" + (f" ({detail})" if detail else ""))
