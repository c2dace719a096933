import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

import pytest

CRITERIA = {
    1: "Phi exactness",
    2: "H1 exponents",
    3: "H2 exponents",
    4: "noise isometry",
    5: "additive end-to-end",
    6: "Malliavin adjoint",
    7: "derivative scaling",
    8: "Hoelder exponents",
    9: "Gaussian envelope",
    10: "ellipticity",
    11: "determinism",
}
_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


@pytest.fixture
def criterion():
    """record(k, ok, detail): log one sub-result of acceptance criterion k."""
    def record(k, ok, detail):
        _results.setdefault(k, []).append((bool(ok), detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for k, name in CRITERIA.items():
        parts = _results.get(k)
        if parts is None:
            terminalreporter.write_line(f"criterion {k:2d} {name}: NOT RUN")
            continue
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{d}{'' if ok else ' [fail]'}" for ok, d in parts)
        terminalreporter.write_line(f"criterion {k:2d} {name}: {status} | {detail}")
