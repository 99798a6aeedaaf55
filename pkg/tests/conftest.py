import functools

import numpy as np
import pytest

from surfgbpm.surfaces import Sphere
from surfgbpm.tube_grid import GridSpec, initialize_tube

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


@functools.lru_cache(maxsize=8)
def _sphere_tube(dx, radius=1.0, tube_radius=1.5):
    half = radius + 0.6
    grid = GridSpec.from_bounds((-half,) * 3, (half,) * 3, dx)
    return initialize_tube(Sphere((0, 0, 0), radius), grid, tube_radius)


@pytest.fixture
def sphere_tube():
    """Factory for unit-sphere tubes; returns a fresh copy each call."""

    def make(dx, radius=1.0, tube_radius=1.5):
        return _sphere_tube(float(dx), float(radius), float(tube_radius)).copy()

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
