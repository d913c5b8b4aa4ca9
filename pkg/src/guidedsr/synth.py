"""Synthetic guide-correlated temperature scenes with known ground truth."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.ndimage import fourier_gaussian
from scipy.spatial import cKDTree

from .errors import InvalidParams
from .grid import GeoTransform, Grid2D, coarsen_nan_aware, replicate_mask
from .guide import GuideStack, build_guide

__all__ = ["SynthParams", "SynthScene", "generate", "LCCS_CODES"]

# a subset of LCCS class codes used to label synthetic land cover
LCCS_CODES = (10, 30, 60, 70, 90, 100, 120, 130, 140, 150, 160, 180, 200, 210, 220)


@dataclass(frozen=True)
class SynthParams:
    seed: int = 0
    # varies noise and clouds while keeping the landscape (and guide) of ``seed``
    weather_seed: int = 0
    n_rows: int = 600
    n_cols: int = 600
    n_classes: int = 6
    lapse_rate: float = 6.5  # K per km
    class_offset_range: float = 6.0
    noise_sigma: float = 0.3
    terrain_roughness: float = 1.5  # relief in km
    t0: float = 285.0
    sites_per_class: int = 3
    cloud_fraction: float = 0.0
    lon_min: float = 20.0
    lat_max: float = 70.0
    cell_size: float = 0.01

    def validate(self, factor: int):
        if self.n_rows < 1 or self.n_cols < 1:
            raise InvalidParams(f"empty scene {self.n_rows}x{self.n_cols}")
        if self.n_rows % factor or self.n_cols % factor:
            raise InvalidParams(
                f"scene {self.n_rows}x{self.n_cols} is not divisible by factor {factor}"
            )
        if self.n_classes < 1 or self.n_classes > len(LCCS_CODES):
            raise InvalidParams(f"n_classes must be in [1, {len(LCCS_CODES)}]")
        if self.noise_sigma < 0 or self.terrain_roughness < 0 or self.class_offset_range < 0:
            raise InvalidParams("noise_sigma, terrain_roughness and class_offset_range must be >= 0")
        if not 0 <= self.cloud_fraction < 1:
            raise InvalidParams(f"cloud_fraction must be in [0, 1), got {self.cloud_fraction}")


class SynthScene(NamedTuple):
    truth: Grid2D
    guide: GuideStack
    source: Grid2D


def _voronoi_classes(rng, n_rows, n_cols, n_classes, sites_per_class):
    n_sites = n_classes * sites_per_class
    sites = rng.uniform((0, 0), (n_rows, n_cols), size=(n_sites, 2))
    rr, cc = np.mgrid[0:n_rows, 0:n_cols]
    _, nearest = cKDTree(sites).query(np.column_stack([rr.ravel() + 0.5, cc.ravel() + 0.5]))
    return (nearest % n_classes).reshape(n_rows, n_cols)


def _smooth_field(rng, shape, sigma):
    # periodic Gaussian smoothing in the frequency domain; cost independent of sigma
    freq = fourier_gaussian(np.fft.rfft2(rng.standard_normal(shape)), sigma, n=shape[1])
    z = np.fft.irfft2(freq, s=shape)
    span = z.max() - z.min()
    return (z - z.min()) / span if span > 0 else np.zeros(shape)


def _cloud_mask(rng, shape, fraction):
    """Random discs added until they cover at least ``fraction`` of the coarse grid."""
    mask = np.zeros(shape, dtype=bool)
    if fraction <= 0:
        return mask
    n_r, n_c = shape
    rr, cc = np.mgrid[0:n_r, 0:n_c]
    r_max = max(1.5, 0.1 * min(n_r, n_c))
    while mask.mean() < fraction:
        r0, c0 = rng.uniform(0, n_r), rng.uniform(0, n_c)
        rad = rng.uniform(1.0, r_max)
        mask |= (rr - r0) ** 2 + (cc - c0) ** 2 <= rad**2
    return mask


def generate(p: Optional[SynthParams] = None, factor: int = 5) -> SynthScene:
    """
    Build a scene whose truth follows elevation (lapse rate) and land cover
    (per-class offsets) plus white noise.  The source is the NaN-aware
    coarsening of the truth; clouded source cells also blank the truth.
    """
    if p is None:
        p = SynthParams()
    p.validate(factor)
    rng = np.random.default_rng(p.seed)
    wx = np.random.default_rng([p.seed, p.weather_seed])
    shape = (p.n_rows, p.n_cols)
    geo = GeoTransform(p.lon_min, p.lat_max, p.cell_size, *shape)
    full = np.ones(shape, dtype=bool)

    cls = _voronoi_classes(rng, p.n_rows, p.n_cols, p.n_classes, p.sites_per_class)
    codes = np.asarray(LCCS_CODES[:p.n_classes], dtype=np.float64)

    scale = max(p.n_rows, p.n_cols)
    relief = 0.7 * _smooth_field(rng, shape, scale / 8) + 0.3 * _smooth_field(rng, shape, scale / 40)
    elevation_m = 1000.0 * p.terrain_roughness * relief

    base_height = rng.uniform(0.0, 25.0, size=p.n_classes)
    canopy = np.clip(base_height[cls] + rng.normal(0.0, 0.5, size=shape), 0.0, None)

    offsets = rng.uniform(-0.5, 0.5, size=p.n_classes) * p.class_offset_range
    truth = (
        p.t0
        - p.lapse_rate * elevation_m / 1000.0
        + offsets[cls]
        + wx.normal(0.0, 1.0, size=shape) * p.noise_sigma
    )

    guide = build_guide(
        Grid2D(geo, codes[cls], full, "class"),
        Grid2D(geo, elevation_m, full, "m"),
        Grid2D(geo, canopy, full, "m"),
    )
    truth_g = Grid2D(geo, truth, full, "K")
    clouds = _cloud_mask(wx, (p.n_rows // factor, p.n_cols // factor), p.cloud_fraction)
    if clouds.any():
        truth_g = Grid2D(geo, truth, ~replicate_mask(clouds, factor), "K")
    source = coarsen_nan_aware(truth_g, factor)
    return SynthScene(truth_g, guide, source)
