import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mudich.rates import rate_from_name
from mudich.scenarios import make_scenario

settings.register_profile(
    "mudich", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("mudich")

RATE_NAMES = ("poly", "log", "exp")

# exponential S3 keeps the nonuniformity small; larger eps0 drives entries past e**40
S3_EPS = {"poly": 0.1, "log": 0.1, "exp": 0.02}


@functools.lru_cache(maxsize=None)
def scenario(preset, rate, **kw):
    if preset == "S3":
        kw.setdefault("eps0", S3_EPS[rate])
    return make_scenario(preset, rate_from_name(rate), **kw)


@pytest.fixture(params=RATE_NAMES)
def rate_name(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
