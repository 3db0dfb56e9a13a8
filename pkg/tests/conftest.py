import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "cmlab", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "cmlab"))

# criterion number -> {"title": str, "outcomes": [(nodeid, outcome)], "details": [str]}
_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")
    config.addinivalue_line("markers", "slow: long Monte Carlo run")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call" and not (call.when == "setup" and call.excinfo):
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "outcomes": [], "details": []})
    if call.excinfo is None:
        outcome = "passed"
    elif call.excinfo.errisinstance(pytest.skip.Exception):
        outcome = "skipped"
    else:
        outcome = "failed"
    entry["outcomes"].append((item.nodeid, outcome))
    for key, value in item.user_properties:
        if key == "detail":
            entry["details"].append(str(value))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        outcomes = [o for _, o in entry["outcomes"]]
        if "failed" in outcomes:
            status = "FAIL"
        elif outcomes and all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "SKIP"
        detail = "; ".join(entry["details"])
        tr.write_line(f"criterion {n}: {status}  {entry['title']}" + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
