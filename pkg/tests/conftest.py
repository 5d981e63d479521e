import numpy as np
import pytest

from derdolab.energy_model import SpecificEnergies
from derdolab.synth import synthetic_clip


@pytest.fixture(scope="session")
def energies():
    return SpecificEnergies.default()


@pytest.fixture(scope="session")
def small_clip():
    # 48x32 luma, three frames: one intra frame and two inter frames
    return synthetic_clip(48, 32, 3, "pan", seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance criteria report: tests marked ``criterion(n, title)`` get one
# PASS/FAIL line each in the terminal summary, with any details recorded
# through ``record_property("detail", ...)``.

_CRITERIA_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")
    config.stash[_CRITERIA_KEY] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.skipped:
        return
    if report.when == "call" or report.failed:
        number, title = marker.args
        details = [str(v) for k, v in item.user_properties if k == "detail"]
        results = item.config.stash[_CRITERIA_KEY]
        passed = report.passed and results.get(number, (True,))[0]
        results[number] = (passed, title, "; ".join(details))


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_CRITERIA_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, title, detail = results[number]
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
