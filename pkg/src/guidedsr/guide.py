"""
High-resolution guide assembly and guide-to-conductance mapping.

The guide has three channels: categorical land cover, elevation and canopy
height.  Conductances live on the edges of the high-resolution lattice and
are stored as two full-size arrays: ``c_horizontal[r, c]`` couples (r, c) to
(r, c + 1) and ``c_vertical[r, c]`` couples (r, c) to (r + 1, c).  The last
column of ``c_horizontal`` and the last row of ``c_vertical`` have no edge
and are always zero.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Optional, Union

import numpy as np

from .codec import make_header, pack, read_npg, write_npg
from .errors import CorruptData, DimensionNotDivisible, EmptyGuide, GeoMismatch
from .grid import GeoTransform, Grid2D, ScaleParams, minmax_scale

logger = logging.getLogger(__name__)

__all__ = [
    "GuideStack",
    "NormalizedGuide",
    "CoefficientField",
    "GuideParams",
    "mode_downsample_landcover",
    "build_guide",
    "normalize_guide",
    "edge_coefficients",
    "export_coefficients",
    "import_coefficients",
]


@dataclass(frozen=True, eq=False)
class GuideStack:
    geo: GeoTransform
    landcover: Grid2D
    elevation: Grid2D
    canopy: Grid2D
    valid: np.ndarray

    def crop(self, row0: int, col0: int, height: int, width: int) -> "GuideStack":
        sl = np.s_[row0:row0 + height, col0:col0 + width]
        geo = self.geo.subset(row0, col0, height, width)

        def cut(g):
            return Grid2D(geo, g.values[sl], g.valid[sl], g.units)

        return GuideStack(geo, cut(self.landcover), cut(self.elevation),
                          cut(self.canopy), self.valid[sl])


@dataclass(frozen=True, eq=False)
class NormalizedGuide:
    """Guide channels ready for conductance computation; continuous ones in [0, 1]."""

    geo: GeoTransform
    landcover: np.ndarray
    elevation: np.ndarray
    canopy: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True, eq=False)
class CoefficientField:
    geo: GeoTransform
    c_horizontal: np.ndarray
    c_vertical: np.ndarray
    # entries clamped into [0, 1] when read from a file
    n_clamped: int = 0

    def __post_init__(self):
        for name in ("c_horizontal", "c_vertical"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if a.shape != self.geo.shape:
                raise GeoMismatch(f"{name} shape {a.shape} does not match {self.geo.shape}")
            object.__setattr__(self, name, a)

    @classmethod
    def uniform(cls, geo: GeoTransform, value: float = 1.0) -> "CoefficientField":
        ch = np.full(geo.shape, float(value))
        cv = np.full(geo.shape, float(value))
        ch[:, -1] = 0.0
        cv[-1, :] = 0.0
        return cls(geo, ch, cv)

    def crop(self, row0: int, col0: int, height: int, width: int) -> "CoefficientField":
        sl = np.s_[row0:row0 + height, col0:col0 + width]
        ch = self.c_horizontal[sl].copy()
        cv = self.c_vertical[sl].copy()
        ch[:, -1] = 0.0
        cv[-1, :] = 0.0
        return CoefficientField(self.geo.subset(row0, col0, height, width), ch, cv)


@dataclass(frozen=True)
class GuideParams:
    kappa: float = 0.1
    w_landcover: float = 1 / 3
    w_elevation: float = 1 / 3
    w_canopy: float = 1 / 3
    g_form: str = "EXPONENTIAL"

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        w = (self.w_landcover, self.w_elevation, self.w_canopy)
        if min(w) < 0 or sum(w) <= 0:
            raise ValueError(f"channel weights must be non-negative with positive sum, got {w}")
        if self.g_form not in ("EXPONENTIAL", "RATIONAL"):
            raise ValueError(f"g_form must be EXPONENTIAL or RATIONAL, got {self.g_form!r}")

    def normalized_weights(self) -> tuple[float, float, float]:
        s = self.w_landcover + self.w_elevation + self.w_canopy
        return self.w_landcover / s, self.w_elevation / s, self.w_canopy / s


def mode_downsample_landcover(lc: Grid2D, factor: int) -> Grid2D:
    """
    Most frequent valid class per ``factor`` x ``factor`` block.

    Ties go to the smallest class code; blocks without valid cells are invalid.
    """
    r, c = lc.shape
    if r % factor or c % factor:
        raise DimensionNotDivisible(f"shape {lc.shape} is not divisible by factor {factor}")
    f = factor
    codes = lc.values.astype(np.int64)
    classes = np.unique(codes[lc.valid])
    geo = lc.geo.coarsened(f)
    if classes.size == 0:
        return Grid2D(geo, np.zeros(geo.shape), np.zeros(geo.shape, bool), lc.units)
    blocks = codes.reshape(r // f, f, c // f, f)
    vb = lc.valid.reshape(r // f, f, c // f, f)
    counts = np.stack([((blocks == k) & vb).sum(axis=(1, 3)) for k in classes])
    # argmax returns the first maximum, i.e. the smallest code since classes are sorted
    winner = classes[np.argmax(counts, axis=0)]
    ok = counts.sum(axis=0) > 0
    return Grid2D(geo, winner.astype(np.float64), ok, lc.units)


def build_guide(landcover: Grid2D, elevation: Grid2D, canopy: Grid2D) -> GuideStack:
    """Stack the channels and intersect their validity masks."""
    for name, ch in (("elevation", elevation), ("canopy", canopy)):
        if not ch.geo.matches(landcover.geo):
            raise GeoMismatch(
                f"guide channel {name!r} has geometry {ch.geo}, expected {landcover.geo}"
            )
    joint = landcover.valid & elevation.valid & canopy.valid
    if not joint.any():
        logger.warning("guide channels have no jointly valid cell")
    return GuideStack(landcover.geo, landcover, elevation, canopy, joint)


def _scale_channel(g: Grid2D, valid: np.ndarray) -> np.ndarray:
    v = g.values[valid]
    p = ScaleParams(float(v.min()), float(v.max()))
    return np.where(valid, minmax_scale(g, p).values, 0.0)


def normalize_guide(stack: GuideStack) -> NormalizedGuide:
    """Min-max scale elevation and canopy over jointly valid cells; land cover stays categorical."""
    valid = stack.valid
    if not valid.any():
        raise EmptyGuide("guide has no jointly valid cell")
    return NormalizedGuide(
        geo=stack.geo,
        landcover=np.where(valid, stack.landcover.values, -1).astype(np.int64),
        elevation=_scale_channel(stack.elevation, valid),
        canopy=_scale_channel(stack.canopy, valid),
        valid=valid.copy(),
    )


def edge_stopping(x, form: str = "EXPONENTIAL"):
    """Map scaled dissimilarity to conductance; g(0) = 1, decreasing to 0."""
    x = np.asarray(x, dtype=np.float64)
    if form == "EXPONENTIAL":
        return np.exp(-(x * x))
    if form == "RATIONAL":
        return 1.0 / (1.0 + x * x)
    raise ValueError(f"unknown edge-stopping form {form!r}")


def edge_coefficients(stack: Union[GuideStack, NormalizedGuide],
                      p: Optional[GuideParams] = None) -> CoefficientField:
    """
    Per-edge conductances from guide dissimilarity.

    The dissimilarity across an edge is a weighted sum of a land-cover change
    indicator and absolute differences of the scaled elevation and canopy
    channels.  A :class:`GuideStack` is normalized first.
    """
    if p is None:
        p = GuideParams()
    if isinstance(stack, GuideStack):
        stack = normalize_guide(stack)
    w_lc, w_el, w_ca = p.normalized_weights()
    lc, el, ca, ok = stack.landcover, stack.elevation, stack.canopy, stack.valid

    def conductance(a, b):
        d = (
            w_lc * (lc[a] != lc[b])
            + w_el * np.abs(el[a] - el[b])
            + w_ca * np.abs(ca[a] - ca[b])
        )
        c = edge_stopping(d / p.kappa, p.g_form)
        return np.where(ok[a] & ok[b], c, 0.0)

    ch = np.zeros(stack.geo.shape)
    cv = np.zeros(stack.geo.shape)
    ch[:, :-1] = conductance(np.s_[:, :-1], np.s_[:, 1:])
    cv[:-1, :] = conductance(np.s_[:-1, :], np.s_[1:, :])
    return CoefficientField(stack.geo, ch, cv)


def export_coefficients(field: CoefficientField, path, timestamp: Optional[datetime] = None):
    """Write a coefficient field as two packed variables."""
    ts = timestamp or datetime(2000, 1, 1, tzinfo=timezone.utc)
    grids = []
    for name in ("c_horizontal", "c_vertical"):
        a = getattr(field, name)
        h = make_header(name, field.geo, timestamp=ts)
        grids.append(pack(Grid2D(field.geo, a, np.ones(a.shape, bool)), h))
    return write_npg(path, grids)


def import_coefficients(path, geo: Optional[GeoTransform] = None) -> CoefficientField:
    """
    Read conductances produced externally (e.g. by a learned extractor).

    Values are clamped to [0, 1]; the number of clamped entries is kept in
    ``n_clamped``.  Fill codes read as zero conductance.
    """
    grids = read_npg(path)
    arrays = {}
    clamped = 0
    for name in ("c_horizontal", "c_vertical"):
        if name not in grids:
            raise CorruptData(f"{path}: missing variable {name!r}")
        p = grids[name]
        h = p.header
        raw = h.to_physical(p.data)
        raw = np.where(p.data == h.fill_code, 0.0, raw)
        out = np.clip(raw, 0.0, 1.0)
        clamped += int(np.count_nonzero(out != raw))
        arrays[name] = out
    field_geo = grids["c_horizontal"].header.geo
    if not grids["c_vertical"].header.geo.matches(field_geo):
        raise GeoMismatch(f"{path}: c_horizontal and c_vertical geometries differ")
    if geo is not None and not geo.matches(field_geo):
        raise GeoMismatch(f"{path}: coefficient geometry {field_geo} does not match {geo}")
    if clamped:
        logger.warning("%s: clamped %d conductances into [0, 1]", path, clamped)
    ch, cv = arrays["c_horizontal"], arrays["c_vertical"]
    ch[:, -1] = 0.0
    cv[-1, :] = 0.0
    return CoefficientField(field_geo, ch, cv, n_clamped=clamped)
