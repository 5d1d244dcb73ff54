import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(20240611)


_ACCEPTANCE = pytest.StashKey()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion.

    Tests call ``acceptance(number, detail)`` after their checks; a test that
    fails before reaching that call is logged as FAIL with its error.
    """
    log = request.config.stash.setdefault(_ACCEPTANCE, {})
    seen = {}

    def record(number, detail=""):
        seen[number] = detail

    yield record
    if request.node.stash.get(_FAILED, False):
        return  # already logged with the error by the report hook
    for number, detail in seen.items():
        log[number] = ("PASS", detail)


_FAILED = pytest.StashKey()


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    if report.when == "call" and report.failed:
        item.stash[_FAILED] = True
        log = item.config.stash.setdefault(_ACCEPTANCE, {})
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            log[marker.args[0]] = ("FAIL", str(call.excinfo.value).splitlines()[0][:200] if call.excinfo else "")
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_ACCEPTANCE, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(log):
        status, detail = log[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
