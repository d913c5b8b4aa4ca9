"""
Validation statistics for paired temperature samples.

Differences are always ``estimate - reference``.  The robust spread is the
normal-consistent scaled median absolute deviation about the median
difference.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptySample, GeoMismatch, ParseError
from .grid import Grid2D

__all__ = [
    "RSD_FACTOR",
    "PairedSample",
    "ValidationReport",
    "Station",
    "compute_report",
    "report_from_differences",
    "histogram",
    "matchup",
    "grid_difference_report",
    "load_stations",
]

# 1 / Phi^-1(3/4): makes the MAD a consistent sigma estimate for normal data
RSD_FACTOR = 1.4826


@dataclass(frozen=True)
class PairedSample:
    reference: np.ndarray
    estimate: np.ndarray
    tags: Optional[tuple] = None

    def __post_init__(self):
        ref = np.asarray(self.reference, dtype=np.float64).ravel()
        est = np.asarray(self.estimate, dtype=np.float64).ravel()
        if ref.shape != est.shape:
            raise ValueError(f"reference ({ref.size}) and estimate ({est.size}) lengths differ")
        if not (np.isfinite(ref).all() and np.isfinite(est).all()):
            raise ValueError("paired samples must be finite")
        if self.tags is not None and len(self.tags) != ref.size:
            raise ValueError("tags must have one entry per sample")
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "estimate", est)
        if self.tags is not None:
            object.__setattr__(self, "tags", tuple(self.tags))

    def __len__(self):
        return self.reference.size

    @property
    def differences(self) -> np.ndarray:
        return self.estimate - self.reference

    def subset(self, tag) -> "PairedSample":
        if self.tags is None:
            raise ValueError("sample has no tags")
        keep = np.array([t == tag for t in self.tags], dtype=bool)
        return PairedSample(self.reference[keep], self.estimate[keep],
                            tuple(t for t in self.tags if t == tag))


@dataclass
class ValidationReport:
    n: int
    mae: float
    rmse: float
    md: float
    rsd: float
    bias_mean: float
    bin_edges: np.ndarray = field(default_factory=lambda: np.zeros(0))
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def empty(cls) -> "ValidationReport":
        nan = float("nan")
        return cls(0, nan, nan, nan, nan, nan)

    @property
    def is_empty(self) -> bool:
        return self.n == 0

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "mae": self.mae,
            "rmse": self.rmse,
            "md": self.md,
            "rsd": self.rsd,
            "bias_mean": self.bias_mean,
        }

    def summary_line(self) -> str:
        return (f"n={self.n} MD={self.md:.3f} K RMSE={self.rmse:.3f} K "
                f"RSD={self.rsd:.3f} K MAE={self.mae:.3f} K mean={self.bias_mean:.3f} K")

    def histogram_text(self) -> str:
        """Two columns: bin center and count."""
        if self.counts.size == 0:
            return ""
        centers = 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])
        return "".join(f"{c:.6f}\t{int(k)}\n" for c, k in zip(centers, self.counts))


def histogram(d: np.ndarray, bin_width: float):
    """
    Fixed-width bins from ``min(d)``, extended until ``max(d)`` is covered.

    A sample with zero spread gets one bin centered on its value.
    """
    if not bin_width > 0:
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    d = np.asarray(d, dtype=np.float64)
    lo, hi = float(d.min()), float(d.max())
    if hi == lo:
        edges = np.array([lo - bin_width / 2, lo + bin_width / 2])
    else:
        n_bins = max(1, math.ceil((hi - lo) / bin_width))
        edges = lo + bin_width * np.arange(n_bins + 1)
        if edges[-1] < hi:
            edges = np.append(edges, edges[-1] + bin_width)
    counts, _ = np.histogram(d, bins=edges)
    return edges, counts


def report_from_differences(d, bin_width: float = 0.5) -> ValidationReport:
    d = np.asarray(d, dtype=np.float64).ravel()
    if d.size == 0:
        raise EmptySample("no paired samples")
    md = float(np.median(d))
    edges, counts = histogram(d, bin_width)
    return ValidationReport(
        n=int(d.size),
        mae=float(np.mean(np.abs(d))),
        rmse=float(np.sqrt(np.mean(d * d))),
        md=md,
        rsd=float(RSD_FACTOR * np.median(np.abs(d - md))),
        bias_mean=float(np.mean(d)),
        bin_edges=edges,
        counts=counts,
    )


def compute_report(s: PairedSample, bin_width: float = 0.5) -> ValidationReport:
    """
    MAE, RMSE, median deviation (MD), robust standard deviation (RSD) and a
    difference histogram for a paired sample.

    Raises
    ------
    EmptySample
        If the sample is empty.
    """
    return report_from_differences(s.differences, bin_width)


@dataclass(frozen=True)
class Station:
    id: str
    name: str
    network: str
    lat: float
    lon: float
    elevation: float
    lccs: str

    def __post_init__(self):
        if abs(self.lat) > 90 or abs(self.lon) > 180:
            raise ValueError(f"station {self.id}: coordinates ({self.lat}, {self.lon}) out of range")


def matchup(g: Grid2D, station: Station) -> Optional[float]:
    """Value of the valid cell containing the station, or None."""
    cell = g.geo.cell_of(station.lon, station.lat)
    if cell is None or not g.valid[cell]:
        return None
    return float(g.values[cell])


def grid_difference_report(a: Grid2D, b: Grid2D, bin_width: float = 0.5) -> ValidationReport:
    """Statistics of ``a - b`` over cells valid in both; an empty overlap gives ``n == 0``."""
    if not a.geo.matches(b.geo):
        raise GeoMismatch(f"geometries differ: {a.geo} vs {b.geo}")
    both = a.valid & b.valid
    if not both.any():
        return ValidationReport.empty()
    return report_from_differences(a.values[both] - b.values[both], bin_width)


_STATION_COLUMNS = ("id", "name", "network", "lat", "lon", "elevation", "lccs")


def load_stations(path=None) -> list[Station]:
    """
    Read a station table (CSV with header ``id,name,network,lat,lon,elevation,lccs``).

    Without a path, the bundled table of validation sites is used.
    """
    if path is None:
        text = resources.files("guidedsr").joinpath("data/stations.csv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    reader = csv.reader(io.StringIO(text))
    stations = []
    header = None
    for row in reader:
        line = reader.line_num
        if not row or row[0].startswith("#"):
            continue
        if header is None:
            header = [h.strip() for h in row]
            if tuple(header) != _STATION_COLUMNS:
                raise ParseError(f"expected columns {','.join(_STATION_COLUMNS)}", line=line)
            continue
        if len(row) != len(_STATION_COLUMNS):
            raise ParseError(f"expected {len(_STATION_COLUMNS)} fields, got {len(row)}", line=line)
        try:
            stations.append(Station(
                id=row[0].strip(), name=row[1].strip(), network=row[2].strip(),
                lat=float(row[3]), lon=float(row[4]), elevation=float(row[5]),
                lccs=row[6].strip(),
            ))
        except ValueError as exc:
            raise ParseError(str(exc), line=line) from None
    if header is None:
        raise ParseError("empty station table", line=1)
    return stations
