import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


import contextlib
import time

import pytest

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Context manager recording one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(_RESULTS, [])

    @contextlib.contextmanager
    def check(number: int, title: str):
        start = time.perf_counter()
        try:
            yield
        except BaseException as exc:
            line = f"FAIL criterion {number:>2}: {title} ({type(exc).__name__})"
            lines.append(line)
            print(line)
            raise
        line = f"PASS criterion {number:>2}: {title} [{time.perf_counter() - start:.2f}s]"
        lines.append(line)
        print(line)

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
