from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guidedsr.errors import OutOfBounds, PatchTooLarge, PlanError, PlanMismatch
from guidedsr.grid import GeoTransform, Grid2D
from guidedsr.tiler import Window, axis_positions, extract, plan, stitch_average

from conftest import make_grid


def covered_counts(tp):
    """Brute-force count of windows covering each cell."""
    counts = np.zeros((tp.n_rows, tp.n_cols), dtype=np.int64)
    for w in tp.windows:
        counts[w.row0:w.row0 + w.height, w.col0:w.col0 + w.width] += 1
    return counts


class TestPlan:
    def test_sixteen(self):
        assert len(plan(960, 960, 240, 240, 240, 240)) == 16

    def test_single(self):
        tp = plan(240, 240, 240, 240, 240, 240)
        assert list(tp.windows) == [Window(0, 0, 240, 240)]

    def test_clamped_positions(self):
        assert axis_positions(500, 240, 200) == [0, 200, 260]
        assert len(plan(500, 500, 240, 240, 200, 200)) == 9

    def test_row_major_sorted_unique(self):
        tp = plan(500, 700, 240, 240, 200, 150)
        assert list(tp.windows) == sorted(set(tp.windows))

    def test_patch_too_large(self):
        with pytest.raises(PatchTooLarge):
            plan(100, 100, 120, 50, 10, 10)

    def test_stride_larger_than_patch(self):
        with pytest.raises(PlanError):
            axis_positions(100, 20, 30)

    def test_zero_stride(self):
        with pytest.raises(PlanError):
            axis_positions(100, 20, 0)

    @pytest.mark.parametrize("n", [1, 2, 7, 31, 64])
    def test_coverage_exhaustive_small(self, n):
        for patch in range(1, n + 1):
            for stride in range(1, patch + 1):
                pos = axis_positions(n, patch, stride)
                mark = np.zeros(n, bool)
                for p in pos:
                    mark[p:p + patch] = True
                assert mark.all(), (n, patch, stride)
                assert pos == sorted(set(pos)) and pos[0] == 0 and pos[-1] == n - patch

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_counts_match_stitch(self, data):
        n_r = data.draw(st.integers(1, 30))
        n_c = data.draw(st.integers(1, 30))
        ph, pw = data.draw(st.integers(1, n_r)), data.draw(st.integers(1, n_c))
        sv, sh = data.draw(st.integers(1, ph)), data.draw(st.integers(1, pw))
        tp = plan(n_r, n_c, ph, pw, sv, sh)
        g = make_grid(np.ones((n_r, n_c)))
        patches = [extract(g, w) for w in tp.windows]
        out, counts = stitch_average(tp, patches, g.geo, return_counts=True)
        np.testing.assert_array_equal(counts, covered_counts(tp))
        assert (counts >= 1).all()


class TestExtract:
    def test_full_window(self, rng):
        g = make_grid(rng.normal(size=(5, 6)))
        assert extract(g, Window(0, 0, 5, 6)).equals(g)

    def test_single_cell_center(self):
        g = make_grid(np.arange(20.0).reshape(4, 5))
        p = extract(g, Window(2, 3, 1, 1))
        assert p.values[0, 0] == 13.0
        assert p.geo.center(0, 0) == pytest.approx(g.geo.center(2, 3))

    def test_invalid_region(self):
        valid = np.ones((4, 4), bool)
        valid[:2, :2] = False
        p = extract(make_grid(np.ones((4, 4)), valid), Window(0, 0, 2, 2))
        assert not p.valid.any()

    @pytest.mark.parametrize("w", [Window(-1, 0, 2, 2), Window(3, 3, 2, 2), Window(0, 0, 0, 1)])
    def test_out_of_bounds(self, w):
        with pytest.raises(OutOfBounds):
            extract(make_grid(np.ones((4, 4))), w)

    def test_scaled_down_alignment(self):
        assert Window(10, 20, 30, 40).scaled_down(5) == Window(2, 4, 6, 8)
        with pytest.raises(PlanError):
            Window(1, 0, 5, 5).scaled_down(5)


class TestStitch:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_reconstruction_exact(self, seed):
        rng = np.random.default_rng(seed)
        n_r, n_c = rng.integers(5, 40, 2)
        ph, pw = rng.integers(1, n_r + 1), rng.integers(1, n_c + 1)
        sv, sh = rng.integers(1, ph + 1), rng.integers(1, pw + 1)
        valid = rng.random((n_r, n_c)) > 0.1
        g = make_grid(rng.normal(280, 20, (n_r, n_c)), valid)
        tp = plan(n_r, n_c, ph, pw, sv, sh)
        out = stitch_average(tp, [extract(g, w) for w in tp.windows], g.geo)
        np.testing.assert_array_equal(out.valid, valid)
        np.testing.assert_array_equal(out.values, g.values)

    def test_midpoint(self):
        tp = plan(1, 3, 1, 2, 1, 1)
        geo = GeoTransform(0, 0, 1, 1, 3)
        a = Grid2D(geo.subset(0, 0, 1, 2), [[1.0, 280.0]], np.ones((1, 2), bool))
        b = Grid2D(geo.subset(0, 1, 1, 2), [[282.0, 5.0]], np.ones((1, 2), bool))
        out = stitch_average(tp, [a, b], geo)
        assert out.values.tolist() == [[1.0, 281.0, 5.0]]

    def test_valid_wins_over_invalid(self):
        tp = plan(1, 3, 1, 2, 1, 1)
        geo = GeoTransform(0, 0, 1, 1, 3)
        a = Grid2D(geo.subset(0, 0, 1, 2), [[1.0, 280.0]], np.ones((1, 2), bool))
        b = Grid2D(geo.subset(0, 1, 1, 2), [[0.0, 5.0]], [[False, True]])
        out = stitch_average(tp, [a, b], geo)
        assert out.values.tolist() == [[1.0, 280.0, 5.0]]

    def test_uncovered_valid_is_invalid(self):
        tp = plan(1, 2, 1, 1, 1, 1)
        geo = GeoTransform(0, 0, 1, 1, 2)
        a = Grid2D(geo.subset(0, 0, 1, 1), [[0.0]], [[False]])
        b = Grid2D(geo.subset(0, 1, 1, 1), [[2.0]], [[True]])
        out = stitch_average(tp, [a, b], geo)
        assert out.valid.tolist() == [[False, True]]

    def test_order_invariance(self, rng):
        tp = plan(30, 30, 12, 12, 5, 7)
        geo = GeoTransform(0, 0, 1, 30, 30)
        patches = [Grid2D(geo.subset(w.row0, w.col0, 12, 12), rng.normal(280, 3, (12, 12)),
                          rng.random((12, 12)) > 0.2) for w in tp.windows]
        ref = stitch_average(tp, patches, geo)
        perm = rng.permutation(len(patches))
        shuffled = replace(tp, windows=tuple(tp.windows[i] for i in perm))
        out = stitch_average(shuffled, [patches[i] for i in perm], geo)
        np.testing.assert_array_equal(out.values, ref.values)

    def test_plan_mismatch(self):
        tp = plan(4, 4, 2, 2, 2, 2)
        geo = GeoTransform(0, 0, 1, 4, 4)
        with pytest.raises(PlanMismatch):
            stitch_average(tp, [], geo)
        with pytest.raises(PlanMismatch):
            stitch_average(tp, [make_grid(np.ones((3, 3)))] * 4, geo)
