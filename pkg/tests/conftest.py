import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("fermizones", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fermizones")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance outcomes, one line per criterion, printed after the run
ACCEPTANCE = {}


def record_acceptance(k, passed, detail):
    ACCEPTANCE[k] = f"ACCEPTANCE criterion {k}: {'PASS' if passed else 'FAIL'}: {detail}"
    print(ACCEPTANCE[k])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
