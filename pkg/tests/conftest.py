import sys

import numpy as np
import pytest

from guidedsr.grid import GeoTransform, Grid2D


def make_grid(values, valid=None, lon_min=20.0, lat_max=70.0, cell=0.01, units="K"):
    values = np.asarray(values, dtype=np.float64)
    if valid is None:
        valid = np.ones(values.shape, dtype=bool)
    geo = GeoTransform(lon_min, lat_max, cell, *values.shape)
    return Grid2D(geo, values, np.asarray(valid, dtype=bool), units)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(results):
        terminalreporter.write_line(results[cid])
