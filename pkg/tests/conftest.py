import sys

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Surface the one-line acceptance verdicts collected by test_acceptance."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "CRITERION_LINES", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line)


def finite_difference(f, x, h=1e-5):
    """Central finite differences of scalar f w.r.t. array x, elementwise."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
        it.iternext()
    return g


def relative_error(a, b, floor=1e-8):
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return np.max(np.abs(a - b) / denom)


def norm_relative_error(a, b, floor=1e-12):
    """Whole-array relative error; robust when single entries sit near zero."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / scale
