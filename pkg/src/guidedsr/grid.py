"""
Georeferenced 2-D fields with explicit validity masks.

Invalid cells ("no observation", e.g. cloud) are tracked by a boolean mask
and never by sentinel values.  Every operation here is a pure function that
returns a new :class:`Grid2D`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import DimensionNotDivisible, GeoMismatch, ShapeMismatch

__all__ = [
    "GeoTransform",
    "Grid2D",
    "ScaleParams",
    "coarsen_nan_aware",
    "block_mean",
    "upsample_bicubic",
    "minmax_scale",
    "minmax_unscale",
    "scale_params_of",
    "apply_mask",
    "replicate_nearest",
    "replicate_mask",
]

_GEO_RTOL = 1e-9


@dataclass(frozen=True)
class GeoTransform:
    """Plain lat-lon raster geometry with square cells, rows running north to south."""

    lon_min: float
    lat_max: float
    cell_size: float
    n_rows: int
    n_cols: int

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError(f"empty geometry {self.n_rows}x{self.n_cols}")

    @classmethod
    def pan_arctic(cls, cell_size: float = 0.01) -> "GeoTransform":
        """The circumpolar product grid: 180W-180E, 50N-90N."""
        return cls(
            lon_min=-180.0,
            lat_max=90.0,
            cell_size=cell_size,
            n_rows=int(round(40.0 / cell_size)),
            n_cols=int(round(360.0 / cell_size)),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def lon_max(self) -> float:
        return self.lon_min + self.n_cols * self.cell_size

    @property
    def lat_min(self) -> float:
        return self.lat_max - self.n_rows * self.cell_size

    def center(self, row, col):
        """Return (lon, lat) of the pixel center(s)."""
        lon = self.lon_min + (np.asarray(col) + 0.5) * self.cell_size
        lat = self.lat_max - (np.asarray(row) + 0.5) * self.cell_size
        if np.ndim(lon) == 0:
            return float(lon), float(lat)
        return lon, lat

    def cell_of(self, lon: float, lat: float) -> Optional[tuple[int, int]]:
        """Row/col of the cell containing a coordinate, or None when outside."""
        row = math.floor((self.lat_max - lat) / self.cell_size)
        col = math.floor((lon - self.lon_min) / self.cell_size)
        if 0 <= row < self.n_rows and 0 <= col < self.n_cols:
            return row, col
        return None

    def coarsened(self, factor: int) -> "GeoTransform":
        if self.n_rows % factor or self.n_cols % factor:
            raise DimensionNotDivisible(
                f"shape {self.shape} is not divisible by factor {factor}"
            )
        return GeoTransform(
            self.lon_min,
            self.lat_max,
            self.cell_size * factor,
            self.n_rows // factor,
            self.n_cols // factor,
        )

    def refined(self, factor: int) -> "GeoTransform":
        return GeoTransform(
            self.lon_min,
            self.lat_max,
            self.cell_size / factor,
            self.n_rows * factor,
            self.n_cols * factor,
        )

    def subset(self, row0: int, col0: int, height: int, width: int) -> "GeoTransform":
        return GeoTransform(
            self.lon_min + col0 * self.cell_size,
            self.lat_max - row0 * self.cell_size,
            self.cell_size,
            height,
            width,
        )

    def matches(self, other: "GeoTransform") -> bool:
        """Equality up to floating-point noise in the georeferencing."""
        if self.shape != other.shape:
            return False
        tol = _GEO_RTOL * max(abs(self.cell_size), abs(other.cell_size))
        return (
            math.isclose(self.cell_size, other.cell_size, rel_tol=_GEO_RTOL)
            and abs(self.lon_min - other.lon_min) <= tol * 1e3
            and abs(self.lat_max - other.lat_max) <= tol * 1e3
        )

    def offset_of(self, other: "GeoTransform") -> Optional[tuple[int, int]]:
        """
        Row/col offset of ``other`` inside this geometry, if ``other`` has the
        same cell size, is aligned on this lattice and lies fully inside it.
        """
        if not math.isclose(self.cell_size, other.cell_size, rel_tol=_GEO_RTOL):
            return None
        r = (self.lat_max - other.lat_max) / self.cell_size
        c = (other.lon_min - self.lon_min) / self.cell_size
        ri, ci = int(round(r)), int(round(c))
        if abs(r - ri) > 1e-6 or abs(c - ci) > 1e-6:
            return None
        if ri < 0 or ci < 0:
            return None
        if ri + other.n_rows > self.n_rows or ci + other.n_cols > self.n_cols:
            return None
        return ri, ci


def require_same_geo(a: GeoTransform, b: GeoTransform, what: str = "grid"):
    if not a.matches(b):
        raise GeoMismatch(f"{what}: geometry {b} does not match {a}")


@dataclass(frozen=True, eq=False)
class Grid2D:
    """
    A 2-D physical field plus validity mask.

    Values under invalid cells are normalized to 0.0 on construction so that
    no arithmetic ever sees a sentinel.  ``flags`` optionally names special
    conditions (e.g. ``"cloud"``) as boolean masks over invalid cells; the
    codec uses them to round-trip declared special codes.
    """

    geo: GeoTransform
    values: np.ndarray
    valid: np.ndarray
    units: str = ""
    flags: Optional[Mapping[str, np.ndarray]] = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.shape != valid.shape:
            raise ShapeMismatch(
                f"values {values.shape} and mask {valid.shape} differ in shape"
            )
        if values.shape != self.geo.shape:
            raise ShapeMismatch(
                f"array shape {values.shape} does not match geometry {self.geo.shape}"
            )
        if not valid.all():
            values = np.where(valid, values, 0.0)
        values.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, values, geo: Optional[GeoTransform] = None, valid=None,
                   units: str = "") -> "Grid2D":
        """Build a grid treating non-finite values as invalid unless a mask is given."""
        values = np.asarray(values, dtype=np.float64)
        if geo is None:
            geo = GeoTransform(0.0, float(values.shape[0]), 1.0, *values.shape)
        if valid is None:
            valid = np.isfinite(values)
        return cls(geo, values, valid, units)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def filled(self, fill: float = np.nan) -> np.ndarray:
        return np.where(self.valid, self.values, fill)

    def with_values(self, values, valid=None) -> "Grid2D":
        return Grid2D(self.geo, values, self.valid if valid is None else valid, self.units)

    def equals(self, other: "Grid2D") -> bool:
        return (
            self.geo.matches(other.geo)
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class ScaleParams:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi >= self.lo:
            raise ValueError(f"hi ({self.hi}) < lo ({self.lo})")


def _check_factor(factor):
    if int(factor) != factor or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor!r}")
    return int(factor)


def block_mean(values: np.ndarray, valid: np.ndarray, factor: int):
    """
    NaN-aware block mean on raw arrays.

    Returns ``(mean, count)`` where ``mean`` is 0 wherever ``count`` is 0.
    """
    r, c = values.shape
    f = factor
    w = np.where(valid, values, 0.0).reshape(r // f, f, c // f, f)
    n = valid.reshape(r // f, f, c // f, f).sum(axis=(1, 3))
    s = w.sum(axis=(1, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(n > 0, s / np.maximum(n, 1), 0.0)
    return mean, n


def coarsen_nan_aware(g: Grid2D, factor: int) -> Grid2D:
    """
    Average-pool ``g`` over ``factor`` x ``factor`` blocks ignoring invalid cells.

    A block is invalid only if it holds no valid cell.  Means are clipped to
    the block's valid range so rounding can never leave it.

    Raises
    ------
    DimensionNotDivisible
        If the grid shape is not a multiple of ``factor``.
    """
    f = _check_factor(factor)
    geo = g.geo.coarsened(f)
    if f == 1:
        return Grid2D(geo, g.values, g.valid, g.units)
    r, c = g.shape
    mean, n = block_mean(g.values, g.valid, f)
    blocks = g.values.reshape(r // f, f, c // f, f)
    vb = g.valid.reshape(r // f, f, c // f, f)
    lo = np.where(vb, blocks, np.inf).min(axis=(1, 3))
    hi = np.where(vb, blocks, -np.inf).max(axis=(1, 3))
    ok = n > 0
    mean = np.where(ok, np.clip(mean, np.where(ok, lo, 0), np.where(ok, hi, 0)), 0.0)
    return Grid2D(geo, mean, ok, g.units)


def replicate_nearest(g: Grid2D, factor: int) -> Grid2D:
    """Copy every cell's value and validity into its ``factor`` x ``factor`` block."""
    f = _check_factor(factor)
    geo = g.geo.refined(f) if f > 1 else g.geo
    values = np.repeat(np.repeat(g.values, f, axis=0), f, axis=1)
    return Grid2D(geo, values, replicate_mask(g.valid, f), g.units)


def replicate_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(np.asarray(mask, dtype=bool), factor, axis=0), factor, axis=1)


def _cubic_weights(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Cubic-convolution weights for taps at offsets -1, 0, 1, 2."""
    def k(x):
        x = np.abs(x)
        return np.where(
            x <= 1,
            (a + 2) * x**3 - (a + 3) * x**2 + 1,
            np.where(x < 2, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0),
        )

    return np.stack([k(t + 1), k(t), k(1 - t), k(2 - t)], axis=-1)


def _axis_taps(n_in: int, factor: int):
    """Tap indices, cubic weights and linear weights for one axis."""
    pos = (np.arange(n_in * factor) + 0.5) / factor - 0.5
    i0 = np.floor(pos).astype(int)
    t = pos - i0
    idx = np.clip(i0[:, None] + np.arange(-1, 3)[None, :], 0, n_in - 1)
    cubic = _cubic_weights(t)
    linear = np.stack([np.zeros_like(t), 1 - t, t, np.zeros_like(t)], axis=-1)
    return idx, cubic, linear


def _separable(a: np.ndarray, rows, cols) -> np.ndarray:
    """Apply (idx, weights) tap sets along axis 0 then axis 1."""
    ridx, rw = rows
    cidx, cw = cols
    tmp = np.zeros((ridx.shape[0], a.shape[1]))
    for k in range(4):
        tmp += rw[:, k, None] * a[ridx[:, k], :]
    out = np.zeros((ridx.shape[0], cidx.shape[0]))
    for k in range(4):
        out += cw[None, :, k] * tmp[:, cidx[:, k]]
    return out


def upsample_bicubic(g: Grid2D, factor: int) -> Grid2D:
    """
    Cubic-convolution upsampling (Keys kernel, a = -0.5) with edge clamping.

    Output cells whose non-zero-weight cubic support touches an invalid input
    cell fall back to bilinear interpolation over the valid cells of their
    2x2 support; they are invalid if that support has no valid cell.
    """
    f = _check_factor(factor)
    if f == 1:
        return Grid2D(g.geo, g.values, g.valid, g.units)
    n_r, n_c = g.shape
    ridx, rcub, rlin = _axis_taps(n_r, f)
    cidx, ccub, clin = _axis_taps(n_c, f)

    vals = g.values
    cubic = _separable(vals, (ridx, rcub), (cidx, ccub))

    invalid = (~g.valid).astype(np.float64)
    touched = _separable(
        invalid, (ridx, (rcub != 0).astype(float)), (cidx, (ccub != 0).astype(float))
    ) > 0

    out = cubic
    valid = np.ones(out.shape, dtype=bool)
    if touched.any():
        vmask = g.valid.astype(np.float64)
        num = _separable(vals * vmask, (ridx, rlin), (cidx, clin))
        den = _separable(vmask, (ridx, rlin), (cidx, clin))
        has = den > 1e-12
        with np.errstate(invalid="ignore", divide="ignore"):
            fallback = np.where(has, num / np.where(has, den, 1.0), 0.0)
        out = np.where(touched, fallback, cubic)
        valid = np.where(touched, has, True)
    return Grid2D(g.geo.refined(f), out, valid, g.units)


def scale_params_of(g: Grid2D) -> ScaleParams:
    """Min-max range over the valid cells (0, 0 for an all-invalid grid)."""
    if not g.valid.any():
        return ScaleParams(0.0, 0.0)
    v = g.values[g.valid]
    return ScaleParams(float(v.min()), float(v.max()))


def minmax_scale(g: Grid2D, p: ScaleParams) -> Grid2D:
    """Map ``[lo, hi]`` onto ``[0, 1]``; a degenerate range maps everything to 0.5."""
    if p.hi > p.lo:
        values = (g.values - p.lo) / (p.hi - p.lo)
    else:
        values = np.full(g.shape, 0.5)
    return Grid2D(g.geo, values, g.valid, "")


def minmax_unscale(g: Grid2D, p: ScaleParams, units: str = "") -> Grid2D:
    """Inverse of :func:`minmax_scale`; the degenerate branch shifts 0.5 back to ``lo``."""
    if p.hi > p.lo:
        values = g.values * (p.hi - p.lo) + p.lo
    else:
        values = g.values - 0.5 + p.lo
    return Grid2D(g.geo, values, g.valid, units)


def apply_mask(g: Grid2D, mask) -> Grid2D:
    """Invalidate every cell where ``mask`` is true."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != g.shape:
        raise ShapeMismatch(f"mask shape {mask.shape} does not match grid {g.shape}")
    return Grid2D(g.geo, g.values, g.valid & ~mask, g.units)
