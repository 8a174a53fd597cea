import numpy as np
import pytest

from fedel import selector
from fedel.model import build_model
from fedel.profiler import TensorTiming

BACKENDS = ["python"] + (["cython"] if selector.BACKEND == "cython" else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def grid_timing(rng, n, max_units=30, nb=1):
    """Timing whose entries sit exactly on the selector's grid."""
    t_g = rng.integers(0, max_units, size=n) * selector.QUANTUM
    t_w = rng.integers(0, max_units, size=n) * selector.QUANTUM
    return TensorTiming(t_g, t_w, np.zeros(nb), np.zeros(nb))


@pytest.fixture
def tiny_model():
    return build_model(4, [5, 3, 4], 3, seed=7)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
