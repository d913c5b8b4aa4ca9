import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from guidedsr.errors import DimensionNotDivisible, ShapeMismatch
from guidedsr.grid import (
    GeoTransform,
    Grid2D,
    ScaleParams,
    apply_mask,
    coarsen_nan_aware,
    minmax_scale,
    minmax_unscale,
    replicate_nearest,
    upsample_bicubic,
)

from conftest import make_grid


class TestGeoTransform:
    def test_pan_arctic_shape(self):
        geo = GeoTransform.pan_arctic()
        assert geo.shape == (4000, 36000)
        assert geo.lon_max == pytest.approx(180.0)
        assert geo.lat_min == pytest.approx(50.0)

    def test_center_convention(self):
        geo = GeoTransform(-180.0, 90.0, 0.01, 10, 10)
        lon, lat = geo.center(0, 0)
        assert lon == pytest.approx(-179.995)
        assert lat == pytest.approx(89.995)
        lon, lat = geo.center(3, 7)
        assert lon == pytest.approx(-180 + 7.5 * 0.01)
        assert lat == pytest.approx(90 - 3.5 * 0.01)

    def test_cell_of_corner_and_outside(self):
        geo = GeoTransform.pan_arctic()
        assert geo.cell_of(-179.995, 89.995) == (0, 0)
        assert geo.cell_of(-88.37, 40.05) is None

    def test_refine_coarsen_round_trip(self):
        geo = GeoTransform(20.0, 70.0, 0.05, 12, 8)
        assert geo.refined(5).coarsened(5).matches(geo)
        with pytest.raises(DimensionNotDivisible):
            GeoTransform(20.0, 70.0, 0.01, 12, 8).coarsened(5)

    def test_offset_of(self):
        big = GeoTransform(20.0, 70.0, 0.01, 100, 100)
        sub = big.subset(10, 25, 20, 30)
        assert big.offset_of(sub) == (10, 25)
        assert big.offset_of(big.subset(90, 0, 20, 10)) is None
        assert big.offset_of(GeoTransform(20.005, 70.0, 0.01, 5, 5)) is None

    @pytest.mark.parametrize("bad", [dict(cell_size=0), dict(n_rows=0)])
    def test_invalid_geometry(self, bad):
        kw = dict(lon_min=0.0, lat_max=0.0, cell_size=1.0, n_rows=1, n_cols=1)
        kw.update(bad)
        with pytest.raises(ValueError):
            GeoTransform(**kw)


class TestGrid2D:
    def test_shape_mismatch(self):
        geo = GeoTransform(0, 0, 1, 2, 2)
        with pytest.raises(ShapeMismatch):
            Grid2D(geo, np.zeros((2, 3)), np.ones((2, 3), bool))

    def test_invalid_cells_have_no_value(self):
        g = make_grid([[1.0, 2.0]], [[True, False]])
        assert g.values[0, 1] == 0.0
        assert np.isnan(g.filled()[0, 1])

    def test_from_array_nan_is_invalid(self):
        g = Grid2D.from_array([[1.0, np.nan]])
        assert g.valid.tolist() == [[True, False]]

    def test_immutable(self):
        g = make_grid([[1.0]])
        with pytest.raises(ValueError):
            g.values[0, 0] = 2.0


class TestCoarsen:
    def test_partial_block(self):
        g = make_grid([[1, 3], [0, 0]], [[True, True], [False, False]])
        c = coarsen_nan_aware(g, 2)
        assert c.valid[0, 0] and c.values[0, 0] == 2.0

    def test_all_invalid_block(self):
        g = make_grid(np.zeros((5, 5)), np.zeros((5, 5), bool))
        c = coarsen_nan_aware(g, 5)
        assert c.shape == (1, 1) and not c.valid[0, 0]

    def test_constant(self):
        c = coarsen_nan_aware(make_grid(np.full((10, 10), 280.0)), 5)
        assert c.shape == (2, 2)
        assert np.all(c.values == 280.0)
        assert c.geo.cell_size == pytest.approx(0.05)

    def test_not_divisible(self):
        with pytest.raises(DimensionNotDivisible):
            coarsen_nan_aware(make_grid(np.zeros((7, 10))), 5)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (6, 9), elements=st.floats(-1e4, 1e4)),
           arrays(np.bool_, (6, 9)))
    def test_pooling_bounds(self, values, valid):
        c = coarsen_nan_aware(make_grid(values, valid), 3)
        for i in range(2):
            for j in range(3):
                blk = np.s_[3 * i:3 * i + 3, 3 * j:3 * j + 3]
                vv = values[blk][valid[blk]]
                assert c.valid[i, j] == (vv.size > 0)
                if vv.size:
                    assert vv.min() <= c.values[i, j] <= vv.max()
                    assert c.values[i, j] == pytest.approx(vv.mean(), rel=1e-12, abs=1e-9)


class TestReplicate:
    def test_single_cell(self):
        r = replicate_nearest(make_grid([[7.0]]), 5)
        assert r.shape == (5, 5) and np.all(r.values == 7.0)

    def test_factor_one_identity(self):
        g = make_grid([[1.0, 2.0], [3.0, 4.0]], [[True, False], [True, True]])
        assert replicate_nearest(g, 1).equals(g)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(150, 400)),
           st.integers(1, 6))
    def test_coarsen_replicate_identity(self, values, f):
        g = make_grid(values)
        back = coarsen_nan_aware(replicate_nearest(g, f), f)
        np.testing.assert_allclose(back.values, g.values, rtol=1e-12)
        assert back.valid.all()


class TestBicubic:
    def test_constant(self):
        g = make_grid(np.full((4, 6), 273.15))
        u = upsample_bicubic(g, 5)
        assert u.shape == (20, 30)
        np.testing.assert_allclose(u.values, 273.15, rtol=0, atol=1e-10)
        assert u.valid.all()

    def test_factor_one(self, rng):
        g = make_grid(rng.normal(280, 5, (5, 7)))
        np.testing.assert_allclose(upsample_bicubic(g, 1).values, g.values, rtol=0, atol=1e-12)

    def test_linear_ramp_interior(self):
        # f(x) = 2x + 1 sampled at coarse centers x = c + 0.5
        n = 10
        cols = np.arange(n) + 0.5
        g = make_grid(np.tile(2 * cols + 1, (4, 1)))
        u = upsample_bicubic(g, 2)
        x_fine = (np.arange(2 * n) + 0.5) / 2
        expected = 2 * x_fine + 1
        # away from the two outermost coarse cells the kernel sees only ramp samples
        inner = slice(4, 2 * n - 4)
        np.testing.assert_allclose(u.values[:, inner], np.tile(expected[inner], (8, 1)), atol=1e-10)

    def test_invalid_support_falls_back(self):
        vals = np.full((6, 6), 280.0)
        vals[:, 3:] = 290.0
        valid = np.ones((6, 6), bool)
        valid[2, 2] = False
        u = upsample_bicubic(make_grid(vals, valid), 5)
        # the hole is bridged by the valid-support bilinear fallback, except at
        # its exact center where the only non-zero bilinear weight is the hole
        invalid = np.argwhere(~u.valid)
        assert invalid.tolist() == [[12, 12]]
        # bilinear fallback stays inside the data range (cubic may ring at the step)
        hole = u.values[10:15, 10:15][u.valid[10:15, 10:15]]
        assert hole.min() >= 280.0 - 1e-9 and hole.max() <= 290.0 + 1e-9
        np.testing.assert_allclose(u.values[10:15, 10:12][u.valid[10:15, 10:12]], 280.0)

    def test_isolated_cell(self):
        valid = np.zeros((3, 3), bool)
        valid[1, 1] = True
        u = upsample_bicubic(make_grid(np.full((3, 3), 5.0), valid), 3)
        assert u.valid[3:6, 3:6].all()
        assert not u.valid[0, 0] and not u.valid[8, 8]
        np.testing.assert_allclose(u.values[u.valid], 5.0)

    def test_no_valid_support(self):
        u = upsample_bicubic(make_grid(np.zeros((3, 3)), np.zeros((3, 3), bool)), 2)
        assert not u.valid.any()


class TestScaling:
    @pytest.mark.parametrize("x, expected", [(200, 0.0), (360, 1.0), (280, 0.5)])
    def test_examples(self, x, expected):
        s = minmax_scale(make_grid([[x]]), ScaleParams(200, 360))
        assert s.values[0, 0] == expected

    def test_degenerate(self):
        s = minmax_scale(make_grid([[280.0, 280.0]]), ScaleParams(280, 280))
        assert np.all(s.values == 0.5)

    def test_hi_below_lo(self):
        with pytest.raises(ValueError):
            ScaleParams(2.0, 1.0)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-1e3, 1e3)),
           st.floats(-500, 500), st.floats(1e-3, 1e3))
    def test_round_trip(self, values, lo, width):
        p = ScaleParams(lo, lo + width)
        g = make_grid(values)
        back = minmax_unscale(minmax_scale(g, p), p)
        np.testing.assert_allclose(back.values, values, rtol=1e-12, atol=1e-12 * (abs(lo) + width))


class TestApplyMask:
    def test_all_false(self, rng):
        g = make_grid(rng.normal(size=(4, 4)))
        assert apply_mask(g, np.zeros((4, 4), bool)).equals(g)

    def test_all_true(self):
        g = apply_mask(make_grid(np.ones((4, 4))), np.ones((4, 4), bool))
        assert not g.valid.any()

    def test_checkerboard(self):
        mask = (np.add.outer(np.arange(8), np.arange(8)) % 2).astype(bool)
        g = apply_mask(make_grid(np.full((8, 8), 3.0)), mask)
        assert g.valid.sum() == 32

    def test_never_revalidates(self, rng):
        valid = rng.random((6, 6)) > 0.5
        g = apply_mask(make_grid(rng.normal(size=(6, 6)), valid), rng.random((6, 6)) > 0.5)
        assert not (g.valid & ~valid).any()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            apply_mask(make_grid(np.ones((2, 2))), np.ones((3, 3), bool))
