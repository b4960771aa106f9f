import numpy as np
import pytest

from cakecut.measure import PiecewiseConstantMeasure


@pytest.fixture
def half_density():
    """Density 2 on [0, 0.5], zero on (0.5, 1]."""
    return PiecewiseConstantMeasure([0.0, 0.5, 1.0], [2.0, 0.0])


def random_stochastic(rng, n):
    x = rng.exponential(size=(n, n))
    return x / x.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        passed, detail = mod.RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
