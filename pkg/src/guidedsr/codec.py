"""
Scale/offset packed int16 storage in a small self-describing container.

File layout (all integers little-endian)::

    b"NPG1"
    uint32   number of variables
    repeated per variable:
        uint32   header length in bytes
        bytes    UTF-8 header, one ``key=value`` line per field
        int16[]  n_rows * n_cols codes, row-major, north-to-south

Physical values are ``code * scale + offset``.  The fill code marks missing
data; declared special codes (e.g. cloud) also decode as invalid cells but are
kept apart through :attr:`Grid2D.flags` so re-packing reproduces them.

NetCDF-4 mapping: each variable record corresponds to a NetCDF variable of
the same name with attributes ``long_name``, ``units``, ``scale_factor``
(= scale), ``add_offset`` (= offset), ``valid_min``/``valid_max`` (packed
codes), ``_FillValue`` (= fill_code) and ``flag_values``/``flag_meanings``
(= special codes); the geometry becomes ``lat``/``lon`` coordinate vectors of
cell centers and timestamp/satellite/version/node become global attributes.
"""
from __future__ import annotations

import math
import re
import struct
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import CorruptData, GeoMismatch, ParseError, ValueOutOfRange
from .grid import GeoTransform, Grid2D

__all__ = [
    "PackedHeader",
    "PackedGrid",
    "PROFILES",
    "make_header",
    "pack",
    "unpack",
    "round_half_away",
    "encode",
    "decode",
    "write_npg",
    "read_npg",
    "FilenameFields",
    "format_filename",
    "parse_filename",
    "CLOUD_CODE",
]

MAGIC = b"NPG1"
INT16_MIN, INT16_MAX = -32768, 32767
DEFAULT_FILL = -32768
CLOUD_CODE = -11000  # -110 degC under the LST profile

_HEADER_KEYS = (
    "variable_name", "long_name", "units", "scale", "offset",
    "valid_min_physical", "valid_max_physical", "fill_code", "special_codes",
    "lon_min", "lat_max", "cell_size", "n_rows", "n_cols",
    "timestamp", "satellite", "version", "node",
)

_NO_RANGE = (-32767 * 0.01, 32767 * 0.01)

# name -> (long_name, units, scale, offset, valid_min, valid_max, special codes)
PROFILES = {
    "LST": ("enhanced daytime land surface temperature (0.01 deg GSD)", "K",
            0.01, 273.15, 200.0, 360.0, ()),
    "LST_GAC": ("daytime land surface temperature (0.05 deg GSD)", "K",
                0.01, 273.15, 200.0, 360.0, ((CLOUD_CODE, "cloud"),)),
    "scanline_time": ("scanline time as fractional hours of the day", "h",
                      0.01, 0.0, 0.0, 240.0, ()),
    "satzen": ("Satellite Zenith Angle", "degrees", 0.01, 0.0, 0.0, 180.0, ()),
    "sunzen": ("Sun Zenith Angle", "degrees", 0.01, 0.0, 0.0, 75.0, ()),
    "test_mae": ("Mean Absolute Error (MAE) value of GSW algorithm performances",
                 "K", 0.01, 0.0, *_NO_RANGE, ()),
    "r2": ("R2 value of GSW algorithm performances", "-", 0.01, 0.0, *_NO_RANGE, ()),
    "c_horizontal": ("diffusion conductance to the east neighbor", "1",
                     1e-4, 0.0, 0.0, 1.0, ()),
    "c_vertical": ("diffusion conductance to the south neighbor", "1",
                   1e-4, 0.0, 0.0, 1.0, ()),
    "landcover": ("land cover class (LCCS)", "class", 1.0, 0.0, 0.0, 255.0, ()),
    "elevation": ("surface elevation", "m", 1.0, 0.0, -500.0, 9000.0, ()),
    "canopy": ("canopy height", "m", 0.01, 0.0, 0.0, 100.0, ()),
}

QUALITY_LAYERS = ("scanline_time", "satzen", "sunzen", "test_mae", "r2")


def round_half_away(x):
    """Round to the nearest integer, ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class PackedHeader:
    variable_name: str
    long_name: str
    units: str
    scale: float
    offset: float
    valid_min_physical: float
    valid_max_physical: float
    fill_code: int
    special_codes: tuple
    geo: GeoTransform
    timestamp: datetime
    satellite: str = "SYNTH"
    version: str = "v1.0"
    node: str = "DAY"

    def __post_init__(self):
        object.__setattr__(
            self, "special_codes",
            tuple((int(c), str(m)) for c, m in self.special_codes),
        )
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.node not in ("DAY", "NIGHT"):
            raise ValueError(f"node must be DAY or NIGHT, got {self.node!r}")
        if self.timestamp.tzinfo is None:
            object.__setattr__(self, "timestamp", self.timestamp.replace(tzinfo=timezone.utc))
        lo, hi = self.code_range
        if lo > hi:
            raise ValueError("empty packed range")
        if lo < INT16_MIN or hi > INT16_MAX:
            raise ValueError(f"packed range [{lo}, {hi}] does not fit int16")
        for code in (self.fill_code, *(c for c, _ in self.special_codes)):
            if not INT16_MIN <= code <= INT16_MAX:
                raise ValueError(f"code {code} does not fit int16")
            if lo <= code <= hi:
                raise ValueError(f"code {code} lies inside the packed valid range [{lo}, {hi}]")
        for text in (self.variable_name, self.long_name, self.units, self.satellite, self.version):
            if "\n" in text:
                raise ValueError(f"illegal character in header field {text!r}")

    @property
    def code_range(self) -> tuple[int, int]:
        lo = int(round_half_away((self.valid_min_physical - self.offset) / self.scale))
        hi = int(round_half_away((self.valid_max_physical - self.offset) / self.scale))
        return lo, hi

    def to_physical(self, code):
        return np.asarray(code, dtype=np.float64) * self.scale + self.offset

    def to_text(self) -> str:
        g = self.geo
        fields = {
            "variable_name": self.variable_name,
            "long_name": self.long_name,
            "units": self.units,
            "scale": repr(float(self.scale)),
            "offset": repr(float(self.offset)),
            "valid_min_physical": repr(float(self.valid_min_physical)),
            "valid_max_physical": repr(float(self.valid_max_physical)),
            "fill_code": str(self.fill_code),
            "special_codes": ",".join(f"{c}:{m}" for c, m in self.special_codes),
            "lon_min": repr(float(g.lon_min)),
            "lat_max": repr(float(g.lat_max)),
            "cell_size": repr(float(g.cell_size)),
            "n_rows": str(g.n_rows),
            "n_cols": str(g.n_cols),
            "timestamp": self.timestamp.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
            "satellite": self.satellite,
            "version": self.version,
            "node": self.node,
        }
        return "".join(f"{k}={fields[k]}\n" for k in _HEADER_KEYS)

    @classmethod
    def from_text(cls, text: str) -> "PackedHeader":
        kv = {}
        for line in text.splitlines():
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CorruptData(f"malformed header line {line!r}")
            kv[key] = value
        missing = [k for k in _HEADER_KEYS if k not in kv]
        if missing:
            raise CorruptData(f"header lacks fields {missing}")
        try:
            specials = []
            if kv["special_codes"]:
                for item in kv["special_codes"].split(","):
                    code, _, meaning = item.partition(":")
                    specials.append((int(code), meaning))
            geo = GeoTransform(
                float(kv["lon_min"]), float(kv["lat_max"]), float(kv["cell_size"]),
                int(kv["n_rows"]), int(kv["n_cols"]),
            )
            ts = datetime.strptime(kv["timestamp"], "%Y-%m-%dT%H:%M:%SZ").replace(
                tzinfo=timezone.utc
            )
            return cls(
                variable_name=kv["variable_name"],
                long_name=kv["long_name"],
                units=kv["units"],
                scale=float(kv["scale"]),
                offset=float(kv["offset"]),
                valid_min_physical=float(kv["valid_min_physical"]),
                valid_max_physical=float(kv["valid_max_physical"]),
                fill_code=int(kv["fill_code"]),
                special_codes=tuple(specials),
                geo=geo,
                timestamp=ts,
                satellite=kv["satellite"],
                version=kv["version"],
                node=kv["node"],
            )
        except (ValueError, TypeError) as exc:
            if isinstance(exc, CorruptData):
                raise
            raise CorruptData(f"invalid header value: {exc}") from exc


def make_header(variable: str, geo: GeoTransform, timestamp: Optional[datetime] = None,
                satellite: str = "SYNTH", version: str = "v1.0", node: str = "DAY",
                fill_code: int = DEFAULT_FILL, **overrides) -> PackedHeader:
    """Header for one of the standard :data:`PROFILES` variables."""
    try:
        long_name, units, scale, offset, vmin, vmax, specials = PROFILES[variable]
    except KeyError:
        raise KeyError(f"no packing profile for variable {variable!r}") from None
    if timestamp is None:
        timestamp = datetime(2000, 1, 1, tzinfo=timezone.utc)
    h = PackedHeader(
        variable_name=variable, long_name=long_name, units=units, scale=scale,
        offset=offset, valid_min_physical=vmin, valid_max_physical=vmax,
        fill_code=fill_code, special_codes=specials, geo=geo, timestamp=timestamp,
        satellite=satellite, version=version, node=node,
    )
    return replace(h, **overrides) if overrides else h


@dataclass(frozen=True, eq=False)
class PackedGrid:
    header: PackedHeader
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype != np.int16:
            data = data.astype(np.int16)
        if data.shape != self.header.geo.shape:
            raise CorruptData(
                f"payload shape {data.shape} does not match header geometry {self.header.geo.shape}"
            )
        object.__setattr__(self, "data", data)

    def to_bytes(self) -> bytes:
        head = self.header.to_text().encode("utf-8")
        return struct.pack("<I", len(head)) + head + self.data.astype("<i2").tobytes(order="C")

    def __eq__(self, other):
        return isinstance(other, PackedGrid) and self.to_bytes() == other.to_bytes()

    __hash__ = None


def pack(g: Grid2D, h: PackedHeader, tol: float = 1e-9) -> PackedGrid:
    """
    Quantize a grid to int16 codes under ``h``.

    Valid cells whose value equals a special code's physical value, and
    cells named by a matching entry in ``g.flags``, are stored as that
    special code.  Other invalid cells become the fill code.

    Raises
    ------
    GeoMismatch
        When the grid geometry differs from the header's.
    ValueOutOfRange
        When a valid value lies outside the header's physical valid range.
    """
    if not g.geo.matches(h.geo):
        raise GeoMismatch(f"grid geometry {g.geo} does not match header geometry {h.geo}")
    values, valid = g.values, g.valid
    data = np.full(g.shape, h.fill_code, dtype=np.int16)
    regular = valid.copy()
    for code, meaning in h.special_codes:
        phys = float(h.to_physical(code))
        hit = valid & (np.abs(values - phys) <= h.scale / 2)
        if g.flags and meaning in g.flags:
            hit |= np.asarray(g.flags[meaning], dtype=bool) & ~valid
        data[hit] = code
        regular &= ~hit

    v = values[regular]
    slack = tol * max(1.0, abs(h.valid_min_physical), abs(h.valid_max_physical))
    bad = (v < h.valid_min_physical - slack) | (v > h.valid_max_physical + slack) | ~np.isfinite(v)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(regular)[np.flatnonzero(bad)[0]])
        raise ValueOutOfRange(
            f"{h.variable_name}: value {values[idx]!r} at cell {idx} outside "
            f"[{h.valid_min_physical}, {h.valid_max_physical}]",
            index=idx, value=float(values[idx]),
        )
    lo, hi = h.code_range
    codes = np.clip(round_half_away((v - h.offset) / h.scale), lo, hi)
    data[regular] = codes.astype(np.int16)
    return PackedGrid(h, data)


def unpack(p: PackedGrid, strict: bool = True) -> Grid2D:
    """
    Decode codes to physical values.

    Fill and special codes become invalid cells; special codes are also
    reported in ``flags``.  An undeclared out-of-range code raises
    :class:`CorruptData` when ``strict``; otherwise it is invalidated with a
    warning.
    """
    h = p.header
    data = p.data
    lo, hi = h.code_range
    in_range = (data >= lo) & (data <= hi)
    flags = {}
    known = data == h.fill_code
    for code, meaning in h.special_codes:
        m = data == code
        flags[meaning] = flags.get(meaning, np.zeros(data.shape, bool)) | m
        known |= m
    rogue = ~in_range & ~known
    if rogue.any():
        idx = tuple(int(i) for i in np.argwhere(rogue)[0])
        msg = (f"{h.variable_name}: {int(rogue.sum())} undeclared out-of-range codes, "
               f"first {int(data[idx])} at cell {idx}")
        if strict:
            raise CorruptData(msg)
        warnings.warn(msg + "; invalidated", RuntimeWarning, stacklevel=2)
    values = h.to_physical(data)
    return Grid2D(h.geo, values, in_range, h.units, flags=flags or None)


def encode(grids: Sequence[PackedGrid]) -> bytes:
    return MAGIC + struct.pack("<I", len(grids)) + b"".join(p.to_bytes() for p in grids)


def decode(buf: bytes) -> dict[str, PackedGrid]:
    """Parse a container into an ordered ``{variable_name: PackedGrid}`` mapping."""
    if buf[:4] != MAGIC:
        raise CorruptData(f"bad magic {buf[:4]!r}")
    if len(buf) < 8:
        raise CorruptData("truncated container")
    (count,) = struct.unpack_from("<I", buf, 4)
    pos = 8
    out = {}
    for _ in range(count):
        if pos + 4 > len(buf):
            raise CorruptData("truncated container")
        (hlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        try:
            text = buf[pos:pos + hlen].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptData(f"header is not UTF-8: {exc}") from exc
        pos += hlen
        header = PackedHeader.from_text(text)
        n = header.geo.n_rows * header.geo.n_cols
        if pos + 2 * n > len(buf):
            raise CorruptData(f"truncated payload for {header.variable_name}")
        data = np.frombuffer(buf, dtype="<i2", count=n, offset=pos).reshape(header.geo.shape)
        pos += 2 * n
        out[header.variable_name] = PackedGrid(header, data.astype(np.int16))
    if pos != len(buf):
        raise CorruptData(f"{len(buf) - pos} trailing bytes")
    return out


def write_npg(path, grids: Iterable[PackedGrid]) -> Path:
    path = Path(path)
    path.write_bytes(encode(list(grids)))
    return path


def read_npg(path) -> dict[str, PackedGrid]:
    return decode(Path(path).read_bytes())


# -- filenames ---------------------------------------------------------------

@dataclass(frozen=True)
class FilenameFields:
    satellite: str
    timestamp: datetime
    node: str
    version: str
    ext: str = "npg"


def _satellite_token(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]", "", name).upper()


def format_filename(h, ext: str = "npg") -> str:
    """``LST_<SATELLITE>_<YYYYMMDDhhmm>_<NODE>_<VERSION>.<ext>``; accepts a header or FilenameFields."""
    sat = _satellite_token(h.satellite)
    if not sat:
        raise ValueError(f"satellite {h.satellite!r} has no alphanumeric characters")
    if "_" in h.version or not h.version:
        raise ValueError(f"version token {h.version!r} must be non-empty without underscores")
    if isinstance(h, FilenameFields):
        ext = h.ext
    ts = h.timestamp.astimezone(timezone.utc).strftime("%Y%m%d%H%M")
    return f"LST_{sat}_{ts}_{h.node}_{h.version}.{ext}"


def parse_filename(name: str) -> FilenameFields:
    """
    Inverse of :func:`format_filename`.  Errors report the byte offset of the
    first offending character.
    """
    name = Path(name).name
    if not name.startswith("LST_"):
        raise ParseError("expected prefix 'LST_'", offset=0)
    pos = 4

    def take(stop: str):
        nonlocal pos
        end = name.find(stop, pos)
        if end < 0:
            raise ParseError(f"expected {stop!r}", offset=len(name.encode()))
        tok = name[pos:end]
        start = pos
        pos = end + 1
        return tok, start

    sat, off = take("_")
    if not sat or not sat.isalnum() or sat != sat.upper():
        raise ParseError(f"bad satellite token {sat!r}", offset=len(name[:off].encode()))
    ts_tok, off = take("_")
    try:
        if len(ts_tok) != 12 or not ts_tok.isdigit():
            raise ValueError
        ts = datetime.strptime(ts_tok, "%Y%m%d%H%M").replace(tzinfo=timezone.utc)
    except ValueError:
        raise ParseError(f"bad timestamp {ts_tok!r}", offset=len(name[:off].encode())) from None
    node, off = take("_")
    if node not in ("DAY", "NIGHT"):
        raise ParseError(f"bad node {node!r}", offset=len(name[:off].encode()))
    rest = name[pos:]
    version, dot, ext = rest.rpartition(".")
    if not dot or not version or not ext:
        raise ParseError("expected '<version>.<ext>'", offset=len(name[:pos].encode()))
    return FilenameFields(sat, ts, node, version, ext)
