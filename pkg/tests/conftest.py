import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sddelab import fbm
from sddelab.sdde import make_model, solve

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def gaussian_model():
    """sigma = 1, b = 0: X_t = B^H_t on (0, r]."""
    return make_model(0.75, 1.0, 1.0, "1", "0", steps_per_delay=32,
                      scan_points=1001)


@pytest.fixture(scope="session")
def tanh_model():
    return make_model(0.75, 2.0, 1.0, "1 + 0.25*tanh(x)", "0.1*sin(x)",
                      steps_per_delay=128)


@pytest.fixture(scope="session")
def tanh_solution(tanh_model):
    grid = tanh_model.time_grid(1.5)
    B = fbm.sample(grid, tanh_model.hurst, 1000, seed=7)
    return solve(tanh_model, B)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion; printed at session end."""
    def record(number, passed, detail, seconds):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail} ({seconds:.1f} s)"
        _ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
