import pytest

from wimaxiptv.cli import resolve_scenario
from wimaxiptv.scenario.model import read_scenario, with_overrides


def shipped(name, duration_s=None, **changes):
    s = read_scenario(resolve_scenario(name))
    if duration_s is not None:
        changes["duration_us"] = int(duration_s * 1_000_000)
    return with_overrides(s, **changes) if changes else s


@pytest.fixture
def short_svc():
    """paper_svc cut to 12 s of streaming (2 s after warm-up)."""
    return shipped("paper_svc", 82)


# criterion number -> (passed, detail), filled in by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
