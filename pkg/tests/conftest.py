"""Shared pytest wiring.

Repeats the acceptance-criteria result lines in the terminal summary so they
are visible even when per-test stdout is captured, and pins a deterministic
hypothesis profile (compiled kernels make wall-clock deadlines meaningless).
"""

import sys

from hypothesis import HealthCheck, settings

settings.register_profile(
    "pinned",
    deadline=None,
    max_examples=60,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("pinned")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None) if mod is not None else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
