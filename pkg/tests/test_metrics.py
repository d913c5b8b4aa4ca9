import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guidedsr.errors import EmptySample, GeoMismatch, ParseError
from guidedsr.grid import GeoTransform, Grid2D
from guidedsr.metrics import (
    RSD_FACTOR,
    PairedSample,
    Station,
    compute_report,
    grid_difference_report,
    histogram,
    load_stations,
    matchup,
    report_from_differences,
)

from conftest import make_grid


def from_d(d):
    return compute_report(PairedSample(np.zeros(len(d)), d))


def brute(d):
    """Loop-based reference implementation."""
    n = len(d)
    s = sorted(d)
    med = s[n // 2] if n % 2 else 0.5 * (s[n // 2 - 1] + s[n // 2])
    dev = sorted(abs(x - med) for x in d)
    mad = dev[n // 2] if n % 2 else 0.5 * (dev[n // 2 - 1] + dev[n // 2])
    return {
        "mae": sum(abs(x) for x in d) / n,
        "rmse": math.sqrt(sum(x * x for x in d) / n),
        "md": med,
        "rsd": 1.4826 * mad,
    }


class TestReport:
    def test_hand_minus_one_zero_one(self):
        r = from_d([-1.0, 0.0, 1.0])
        assert r.md == 0.0
        assert r.mae == pytest.approx(2 / 3, rel=1e-15)
        assert r.rmse == pytest.approx(0.8165, abs=5e-5)
        assert r.rsd == 1.4826

    def test_zeros(self):
        r = from_d([0.0, 0.0, 0.0])
        assert (r.md, r.mae, r.rmse, r.rsd, r.bias_mean) == (0, 0, 0, 0, 0)

    def test_three_four(self):
        r = from_d([3.0, 4.0])
        assert r.rmse == math.sqrt(12.5)
        assert r.rmse == pytest.approx(3.5355, abs=5e-5)
        assert r.mae == 3.5

    def test_sign_convention(self):
        r = compute_report(PairedSample([280.0], [281.5]))
        assert r.md == 1.5

    def test_empty(self):
        with pytest.raises(EmptySample):
            compute_report(PairedSample([], []))

    def test_sample_validation(self):
        with pytest.raises(ValueError):
            PairedSample([1.0, 2.0], [1.0])
        with pytest.raises(ValueError):
            PairedSample([np.nan], [1.0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=200))
    def test_against_brute_force(self, d):
        r = from_d(d)
        b = brute(d)
        for k, v in b.items():
            assert getattr(r, k) == pytest.approx(v, rel=1e-12, abs=1e-12)
        assert r.rsd >= 0
        assert r.rmse >= abs(r.bias_mean) - 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=100), st.floats(0.01, 100))
    def test_scale_equivariance(self, d, k):
        a, b = from_d(d), from_d([k * x for x in d])
        for name in ("mae", "rmse", "md", "rsd"):
            assert getattr(b, name) == pytest.approx(k * getattr(a, name), rel=1e-9, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=100), st.floats(-20, 20))
    def test_shift(self, d, c):
        a, b = from_d(d), from_d([x + c for x in d])
        assert b.md == pytest.approx(a.md + c, abs=1e-9)
        assert b.bias_mean == pytest.approx(a.bias_mean + c, abs=1e-9)
        assert b.rsd == pytest.approx(a.rsd, abs=1e-9)

    def test_robustness(self, rng):
        d = rng.normal(0.5, 1.0, 1001)
        clean = report_from_differences(d)
        d2 = d.copy()
        d2[:400] = 1e6
        dirty = report_from_differences(d2)
        assert dirty.rmse > 1e5
        # outliers on one side move the median by well under 1.3 sigma
        assert abs(dirty.md - clean.md) < 1.3
        assert dirty.rsd < 5 * clean.rsd


class TestHistogram:
    def test_degenerate_single_bin(self):
        edges, counts = histogram(np.zeros(5), 0.5)
        assert edges.tolist() == [-0.25, 0.25] and counts.tolist() == [5]

    def test_covers_range(self, rng):
        d = rng.normal(size=500)
        edges, counts = histogram(d, 0.3)
        assert edges[0] == d.min() and edges[-1] >= d.max()
        np.testing.assert_allclose(np.diff(edges), 0.3)
        assert counts.sum() == 500

    def test_text_two_columns(self):
        r = from_d([0.0, 1.0, 1.0])
        lines = r.histogram_text().splitlines()
        assert all(len(l.split("\t")) == 2 for l in lines)
        assert sum(int(l.split("\t")[1]) for l in lines) == 3


class TestMatchup:
    def station(self, lat, lon):
        return Station("X", "x", "T", lat, lon, 0.0, "")

    def test_corner(self):
        geo = GeoTransform.pan_arctic()
        assert geo.cell_of(-179.995, 89.995) == (0, 0)
        g = Grid2D(GeoTransform(-180.0, 90.0, 0.01, 3, 3), np.full((3, 3), 270.0), np.ones((3, 3), bool))
        assert matchup(g, self.station(89.995, -179.995)) == 270.0

    def test_outside(self):
        g = Grid2D(GeoTransform(-180.0, 90.0, 1.0, 40, 360), np.full((40, 360), 270.0),
                   np.ones((40, 360), bool))
        assert matchup(g, self.station(40.0519, -88.3733)) is None

    def test_invalid_cell(self):
        g = make_grid([[280.0]], [[False]])
        assert matchup(g, self.station(69.995, 20.005)) is None


class TestGridDifference:
    def test_identical(self, rng):
        a = make_grid(rng.normal(280, 3, (5, 5)))
        r = grid_difference_report(a, a)
        assert (r.md, r.rmse, r.rsd, r.mae) == (0, 0, 0, 0)
        assert len(r.counts) == 1

    def test_constant_shift(self, rng):
        a = make_grid(rng.normal(280, 3, (5, 5)))
        b = make_grid(a.values + 1.13)
        assert grid_difference_report(a, b).md == pytest.approx(-1.13, abs=1e-12)

    def test_disjoint(self):
        m = np.array([[True, False]])
        r = grid_difference_report(make_grid([[1.0, 2.0]], m), make_grid([[1.0, 2.0]], ~m))
        assert r.is_empty and r.n == 0

    def test_geo_mismatch(self):
        with pytest.raises(GeoMismatch):
            grid_difference_report(make_grid([[1.0]]), make_grid([[1.0]], lon_min=0.0))


class TestStations:
    def test_bundled_table(self):
        st_ = load_stations()
        assert len(st_) == 17
        ids = {s.id for s in st_}
        assert {"BND", "SFA", "TBL"} <= ids
        bnd = next(s for s in st_ if s.id == "BND")
        assert bnd.lat == pytest.approx(40.0519)

    def test_parse_error_line(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("id,name,network,lat,lon,elevation,lccs\nA,a,N,1,2,3,x\nB,b,N,oops,2,3,x\n")
        with pytest.raises(ParseError, match="line 3"):
            load_stations(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("id,lat\n")
        with pytest.raises(ParseError, match="line 1"):
            load_stations(p)

    def test_coordinate_bounds(self):
        with pytest.raises(ValueError):
            Station("X", "x", "T", 91.0, 0.0, 0.0, "")


def test_rsd_factor():
    assert RSD_FACTOR == 1.4826
