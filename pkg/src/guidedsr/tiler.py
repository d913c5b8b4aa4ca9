"""
Patch planning, extraction and overlap-average stitching.

Windows start at multiples of the stride; when the last regular window stops
short of the raster edge, one more window is placed flush against the edge.
Windows therefore always have the full patch size.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import OutOfBounds, PatchTooLarge, PlanError, PlanMismatch
from .grid import GeoTransform, Grid2D

__all__ = ["Window", "TilePlan", "axis_positions", "plan", "extract", "stitch_average"]


@dataclass(frozen=True, order=True)
class Window:
    row0: int
    col0: int
    height: int
    width: int

    @property
    def slices(self):
        return np.s_[self.row0:self.row0 + self.height, self.col0:self.col0 + self.width]

    def scaled_down(self, factor: int) -> "Window":
        """The same window on a grid ``factor`` times coarser; must be block-aligned."""
        if any(v % factor for v in (self.row0, self.col0, self.height, self.width)):
            raise PlanError(f"{self} is not aligned to factor {factor}")
        return Window(self.row0 // factor, self.col0 // factor,
                      self.height // factor, self.width // factor)


@dataclass(frozen=True)
class TilePlan:
    windows: tuple
    patch_h: int
    patch_w: int
    stride_v: int
    stride_h: int
    n_rows: int
    n_cols: int

    def __len__(self):
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)


def axis_positions(extent: int, patch: int, stride: int) -> list[int]:
    """Start offsets along one axis."""
    if patch > extent:
        raise PatchTooLarge(f"patch {patch} exceeds raster extent {extent}")
    if patch < 1 or stride < 1:
        raise PlanError(f"patch and stride must be >= 1, got {patch}, {stride}")
    if stride > patch:
        raise PlanError(f"stride {stride} larger than patch {patch} would leave gaps")
    pos = list(range(0, extent - patch + 1, stride))
    if pos[-1] + patch < extent:
        pos.append(extent - patch)
    return pos


def plan(n_rows: int, n_cols: int, patch_h: int, patch_w: int,
         stride_v: int, stride_h: int) -> TilePlan:
    """Row-major cross product of the per-axis window positions."""
    rows = axis_positions(n_rows, patch_h, stride_v)
    cols = axis_positions(n_cols, patch_w, stride_h)
    windows = tuple(Window(r, c, patch_h, patch_w) for r in rows for c in cols)
    return TilePlan(windows, patch_h, patch_w, stride_v, stride_h, n_rows, n_cols)


def extract(g: Grid2D, w: Window) -> Grid2D:
    """Copy a window out of ``g`` with a correspondingly shifted geometry."""
    n_r, n_c = g.shape
    if w.row0 < 0 or w.col0 < 0 or w.height < 1 or w.width < 1 \
            or w.row0 + w.height > n_r or w.col0 + w.width > n_c:
        raise OutOfBounds(f"{w} is not inside a {n_r}x{n_c} raster")
    sl = w.slices
    geo = g.geo.subset(w.row0, w.col0, w.height, w.width)
    flags = None
    if g.flags:
        flags = {k: np.asarray(v)[sl].copy() for k, v in g.flags.items()}
    return Grid2D(geo, g.values[sl].copy(), g.valid[sl].copy(), g.units, flags=flags)


def stitch_average(tile_plan: TilePlan, patches: Sequence[Grid2D], target_geo: GeoTransform,
                   return_counts: bool = False):
    """
    Merge patches by averaging all valid contributions per cell.

    Contributions are accumulated in row-major window order whatever order
    the pairs arrive in, as a reference value plus a sum of deviations from
    it, so identical contributions reproduce their value exactly.

    Raises
    ------
    PlanMismatch
        If the patches do not correspond one-to-one with the plan windows.
    """
    windows = list(tile_plan.windows)
    if len(windows) != len(patches):
        raise PlanMismatch(f"{len(patches)} patches for {len(windows)} windows")
    if target_geo.shape != (tile_plan.n_rows, tile_plan.n_cols):
        raise PlanMismatch(
            f"target shape {target_geo.shape} differs from planned raster "
            f"{(tile_plan.n_rows, tile_plan.n_cols)}"
        )
    order = sorted(range(len(windows)), key=lambda i: windows[i])
    shape = target_geo.shape
    ref = np.zeros(shape)
    dev = np.zeros(shape)
    count = np.zeros(shape, dtype=np.int64)
    units = ""
    for i in order:
        w, p = windows[i], patches[i]
        if p.shape != (w.height, w.width):
            raise PlanMismatch(f"patch {i} has shape {p.shape}, window is {w}")
        units = units or p.units
        sl = w.slices
        ok = p.valid
        first = ok & (count[sl] == 0)
        ref[sl] = np.where(first, p.values, ref[sl])
        dev[sl] += np.where(ok, p.values - ref[sl], 0.0)
        count[sl] += ok
    have = count > 0
    out = np.where(have, ref + dev / np.maximum(count, 1), 0.0)
    g = Grid2D(target_geo, out, have, units)
    return (g, count) if return_counts else g
