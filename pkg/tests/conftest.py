import numpy as np
import pytest

from pidboost.forecasters import BaseForecaster, SeasonalNaive
from pidboost.series import Series


class Offset(BaseForecaster):
    """Test forecaster: another forecaster's output plus a constant bias."""

    name = "Offset"

    def __init__(self, inner, bias):
        super().__init__()
        self.inner = inner
        self.bias = float(bias)
        self.lag_spec = inner.lag_spec
        self.fitted = True

    def get_params(self):
        return self.inner.get_params()

    def _predict_flat(self, x):
        return self.inner._predict_flat(x) + self.bias


def periodic_values(period, cycles, *, noise=0.0, seed=0, level=100.0, amp=10.0):
    t = np.arange(period)
    cycle = level + amp * np.sin(2 * np.pi * t / period) + 0.3 * amp * np.cos(4 * np.pi * t / period)
    # tiled so the signal repeats bit-for-bit
    shape = np.tile(cycle, cycles)
    if noise:
        shape = shape + np.random.default_rng(seed).normal(0.0, noise, len(shape))
    return shape


def make_series(values, period, interval=3600, start=1_600_000_000 - 1_600_000_000 % 86400):
    values = np.asarray(values, dtype=float)
    return Series(values, start + interval * np.arange(len(values)), period)


@pytest.fixture
def biased_naive():
    def factory(period, bias):
        return Offset(SeasonalNaive(period), bias)

    return factory


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(module.RESULTS):
        title, parts = module.RESULTS[number]
        failed = [detail for ok, detail in parts if not ok]
        status = "FAIL" if failed else "PASS"
        line = f"criterion {number:>2} {status}  {title}"
        if failed:
            line += "  [" + "; ".join(failed) + "]"
        terminalreporter.write_line(line)
