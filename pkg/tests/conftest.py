import numpy as np
import pytest

from perpetual_insider import REFERENCE_CALL, REFERENCE_PUT, OptionSpec, build_boundaries, build_params

# acceptance lines collected during the run and echoed in the terminal summary
ACCEPTANCE_LINES = []

_CACHE = {}


@pytest.fixture(scope="session")
def put_params():
    return build_params(**REFERENCE_PUT)


@pytest.fixture(scope="session")
def call_params():
    return build_params(**REFERENCE_CALL)


def params_for(side):
    return build_params(**(REFERENCE_PUT if side == "put" else REFERENCE_CALL))


def boundary_set(family, side, strike=1.0):
    """Shared boundary sets; the extremal solves are the slow part of the suite."""
    key = (family, side, strike)
    if key not in _CACHE:
        spec = OptionSpec(family, side, strike)
        _CACHE[key] = build_boundaries(spec, params_for(side))
    return _CACHE[key]


@pytest.fixture(scope="session")
def boundaries():
    return boundary_set


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
