"""
Batch workflows behind the command line: downscaling runs, synthetic batch
export, station validation and truth comparison.
"""
from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .codec import QUALITY_LAYERS, format_filename, make_header, pack, parse_filename, read_npg, unpack, write_npg
from .errors import ConfigError, CorruptData, GeoMismatch, GuidedSRError, ParseError
from .grid import Grid2D, apply_mask, coarsen_nan_aware, replicate_mask, replicate_nearest, upsample_bicubic
from .guide import GuideParams, GuideStack, build_guide, edge_coefficients, import_coefficients
from .metrics import (
    PairedSample,
    ValidationReport,
    compute_report,
    grid_difference_report,
    load_stations,
    matchup,
)
from .solver import SolveReport, SolverParams, consistency_residual, solve
from .synth import SynthParams, generate
from .tiler import extract, plan, stitch_average

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_PARTIAL, EXIT_FATAL = 0, 1, 2

# 1792 is not a multiple of the x5 factor; 1790 keeps tiles block-aligned
DEFAULT_TILE = (1920, 1920, 1480, 1790)


@dataclass
class RunConfig:
    input_dir: Path
    guide_path: Path
    output_dir: Path
    factor: int = 5
    solver: SolverParams = field(default_factory=SolverParams)
    guide_params: GuideParams = field(default_factory=GuideParams)
    tile: tuple = DEFAULT_TILE
    workers: int = 1
    coefficient_file: Optional[Path] = None
    strict_codec: bool = True
    max_gap_fraction: Optional[float] = None
    # scenes solved concurrently; each scene still uses the tile pool
    scene_workers: int = 1

    def __post_init__(self):
        self.input_dir = Path(self.input_dir)
        self.guide_path = Path(self.guide_path)
        self.output_dir = Path(self.output_dir)
        if self.coefficient_file is not None:
            self.coefficient_file = Path(self.coefficient_file)
        self.tile = tuple(int(v) for v in self.tile)
        if self.solver.factor != self.factor:
            self.solver = replace(self.solver, factor=self.factor)
        self.validate()

    def validate(self):
        if self.workers < 1 or self.scene_workers < 1:
            raise ConfigError(
                f"workers and scene_workers must be >= 1, got {self.workers}, {self.scene_workers}"
            )
        if len(self.tile) != 4:
            raise ConfigError("tile needs patch_h, patch_w, stride_v, stride_h")
        bad = [v for v in self.tile if v < 1 or v % self.factor]
        if bad:
            raise ConfigError(
                f"tile sizes {self.tile} must be positive multiples of the factor {self.factor}"
            )
        if self.max_gap_fraction is not None and not 0 <= self.max_gap_fraction <= 1:
            raise ConfigError(f"max_gap_fraction must be in [0, 1], got {self.max_gap_fraction}")

    def to_text(self) -> str:
        """The configuration as an INI document (also echoed into the run log)."""
        cp = _config_parser()
        for section, values in self._sections().items():
            cp[section] = {k: "" if v is None else str(v) for k, v in values.items()}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)

    def _sections(self) -> dict:
        s, g = self.solver, self.guide_params
        return {
            "run": {
                "input_dir": self.input_dir,
                "guide_path": self.guide_path,
                "output_dir": self.output_dir,
                "factor": self.factor,
                "workers": self.workers,
                "scene_workers": self.scene_workers,
                "coefficient_file": self.coefficient_file,
                "strict_codec": self.strict_codec,
                "max_gap_fraction": self.max_gap_fraction,
            },
            "solver": {
                "lambda": s.lam,
                "n_iterations": s.n_iterations,
                "adjust_every": s.adjust_every,
                "tolerance": s.tolerance,
                "init": s.init,
            },
            "guide": {
                "kappa": g.kappa,
                "w_landcover": g.w_landcover,
                "w_elevation": g.w_elevation,
                "w_canopy": g.w_canopy,
                "g_form": g.g_form,
            },
            "tile": dict(zip(("patch_h", "patch_w", "stride_v", "stride_h"), self.tile)),
        }


def _config_parser():
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    return cp


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """
    Build a :class:`RunConfig` from an INI file plus ``{"section.key": value}``
    overrides (command-line flags win over the file).
    """
    cp = _config_parser()
    if path is not None:
        if not cp.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read configuration {path}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, name = key.partition(".")
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][name] = str(value)

    def get(section, name, conv=str, default=None):
        if not cp.has_option(section, name) or cp[section][name].strip() == "":
            return default
        raw = cp[section][name].strip()
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {name} = {raw!r}: {exc}") from None

    def boolean(raw):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError("not a boolean")

    missing = [k for k in ("input_dir", "guide_path", "output_dir") if get("run", k) is None]
    if missing:
        raise ConfigError(f"missing required settings: {', '.join(missing)}")
    factor = get("run", "factor", int, 5)
    d = SolverParams()
    g = GuideParams()
    try:
        solver = SolverParams(
            factor=factor,
            lam=get("solver", "lambda", float, d.lam),
            n_iterations=get("solver", "n_iterations", int, d.n_iterations),
            adjust_every=get("solver", "adjust_every", int, d.adjust_every),
            tolerance=get("solver", "tolerance", float, d.tolerance),
            init=get("solver", "init", str.upper, d.init),
        )
        guide_params = GuideParams(
            kappa=get("guide", "kappa", float, g.kappa),
            w_landcover=get("guide", "w_landcover", float, g.w_landcover),
            w_elevation=get("guide", "w_elevation", float, g.w_elevation),
            w_canopy=get("guide", "w_canopy", float, g.w_canopy),
            g_form=get("guide", "g_form", str.upper, g.g_form),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    tile = tuple(
        get("tile", k, int, dflt)
        for k, dflt in zip(("patch_h", "patch_w", "stride_v", "stride_h"), DEFAULT_TILE)
    )
    return RunConfig(
        input_dir=get("run", "input_dir"),
        guide_path=get("run", "guide_path"),
        output_dir=get("run", "output_dir"),
        factor=factor,
        solver=solver,
        guide_params=guide_params,
        tile=tile,
        workers=get("run", "workers", int, 1),
        scene_workers=get("run", "scene_workers", int, 1),
        coefficient_file=get("run", "coefficient_file"),
        strict_codec=get("run", "strict_codec", boolean, True),
        max_gap_fraction=get("run", "max_gap_fraction", float, None),
    )


# -- downscaling -------------------------------------------------------------

GUIDE_VARIABLES = ("landcover", "elevation", "canopy")


def load_guide(path, strict: bool = True) -> GuideStack:
    grids = read_npg(path)
    missing = [v for v in GUIDE_VARIABLES if v not in grids]
    if missing:
        raise CorruptData(f"{path}: guide lacks variables {missing}")
    lc, el, ca = (unpack(grids[v], strict=strict) for v in GUIDE_VARIABLES)
    return build_guide(lc, el, ca)


def write_guide(path, guide: GuideStack, timestamp: Optional[datetime] = None):
    grids = []
    for name in GUIDE_VARIABLES:
        g = getattr(guide, name)
        grids.append(pack(g, make_header(name, guide.geo, timestamp=timestamp)))
    return write_npg(path, grids)


@dataclass
class SceneResult:
    name: str
    status: str
    output: Optional[Path] = None
    tiles: int = 0
    report: SolveReport = field(default_factory=SolveReport)
    clipped: int = 0
    message: str = ""

    def log_line(self) -> str:
        parts = [f"scene={self.name}", f"status={self.status}"]
        if self.status == "ok":
            parts.append(f"tiles={self.tiles}")
            parts.extend(f"{k}={v}" for k, v in self.report.as_fields().items())
            parts.append(f"clipped={self.clipped}")
            parts.append(f"output={self.output.name}")
        if self.message:
            parts.append(f"message={self.message!r}")
        return " ".join(parts)


def _fit_tile(extent: int, patch: int, stride: int) -> tuple[int, int]:
    """Shrink a patch that is larger than the scene; strides never exceed the patch."""
    patch = min(patch, extent)
    return patch, min(stride, patch)


def downscale_scene(path: Path, cfg: RunConfig, guide_geo, coeffs, pool=None) -> SceneResult:
    """Unpack, cloud-mask, solve tile by tile, stitch, re-mask and write one scene."""
    t0 = time.perf_counter()
    f = cfg.factor
    grids = read_npg(path)
    if "LST_GAC" not in grids:
        raise CorruptData(f"{path.name}: no LST_GAC variable")
    packed_src = grids["LST_GAC"]
    src = unpack(packed_src, strict=cfg.strict_codec)
    cloud = (src.flags or {}).get("cloud", np.zeros(src.shape, bool))
    src = apply_mask(src, cloud)

    gap = 1.0 - float(src.valid.mean())
    if cfg.max_gap_fraction is not None and gap > cfg.max_gap_fraction:
        return SceneResult(path.name, "filtered",
                           message=f"gap fraction {gap:.3f} > {cfg.max_gap_fraction}")

    hr_geo = src.geo.refined(f)
    offset = guide_geo.offset_of(hr_geo)
    if offset is None:
        raise GeoMismatch(
            f"{path.name}: guide {guide_geo} does not cover the scene at x{f} ({hr_geo})"
        )
    off_r, off_c = offset

    ph, sv = _fit_tile(hr_geo.n_rows, cfg.tile[0], cfg.tile[2])
    pw, sh = _fit_tile(hr_geo.n_cols, cfg.tile[1], cfg.tile[3])
    tile_plan = plan(hr_geo.n_rows, hr_geo.n_cols, ph, pw, sv, sh)

    def run_tile(w):
        sub = extract(src, w.scaled_down(f))
        co = coeffs.crop(off_r + w.row0, off_c + w.col0, w.height, w.width)
        return solve(sub, co, cfg.solver)

    if pool is None:
        results = [run_tile(w) for w in tile_plan.windows]
    else:
        results = list(pool.map(run_tile, tile_plan.windows))

    stitched = stitch_average(tile_plan, [r[0] for r in results], hr_geo)
    stitched = apply_mask(stitched, replicate_mask(cloud, f))

    report = SolveReport(
        iterations_run=max(r[1].iterations_run for r in results),
        final_max_delta=max(r[1].final_max_delta for r in results),
        empty_blocks=sum(r[1].empty_blocks for r in results),
    )
    report.consistency_residual = consistency_residual(stitched, src, f)
    if not stitched.valid.any():
        logger.warning("%s: scene is fully masked, output is all-invalid", path.name)

    h_src = packed_src.header
    h_out = make_header("LST", hr_geo, timestamp=h_src.timestamp, satellite=h_src.satellite,
                        version=h_src.version, node=h_src.node)
    vals = stitched.values
    lo, hi = h_out.valid_min_physical, h_out.valid_max_physical
    outside = stitched.valid & ((vals < lo) | (vals > hi))
    clipped = int(outside.sum())
    if clipped:
        logger.warning("%s: clipped %d cells to [%g, %g] K", path.name, clipped, lo, hi)
        stitched = stitched.with_values(np.clip(vals, lo, hi))

    out_grids = [pack(stitched, h_out), packed_src]
    for name in QUALITY_LAYERS:
        if name in grids:
            q = unpack(grids[name], strict=cfg.strict_codec)
            q_hr = replicate_nearest(q, f)
            hq = grids[name].header
            out_grids.append(pack(q_hr, replace(hq, geo=hr_geo)))

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out_path = cfg.output_dir / format_filename(h_out)
    write_npg(out_path, out_grids)
    report.wall_time = time.perf_counter() - t0
    return SceneResult(path.name, "ok", out_path, len(tile_plan), report, clipped)


def run_downscale(cfg: RunConfig) -> int:
    """Downscale every ``*.npg`` scene of the input directory; returns an exit code."""
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    log_path = cfg.output_dir / "run.log"
    scenes = sorted(p for p in cfg.input_dir.glob("*.npg") if p.is_file())
    with open(log_path, "w", encoding="utf-8") as log:
        def emit(line):
            log.write(line + "\n")
            log.flush()
            logger.info(line)

        for line in cfg.to_text().splitlines():
            if line:
                emit(f"config {line}")
        emit(f"{len(scenes)} scenes")
        if not scenes:
            return EXIT_OK
        try:
            guide = load_guide(cfg.guide_path, strict=cfg.strict_codec)
            if cfg.coefficient_file is not None:
                coeffs = import_coefficients(cfg.coefficient_file, guide.geo)
                if coeffs.n_clamped:
                    emit(f"coefficients clamped={coeffs.n_clamped}")
            else:
                coeffs = edge_coefficients(guide, cfg.guide_params)
        except (OSError, GuidedSRError) as exc:
            emit(f"fatal: {exc}")
            return EXIT_FATAL

        def one(path):
            try:
                return downscale_scene(path, cfg, guide.geo, coeffs, pool)
            except GeoMismatch:
                raise
            except (OSError, GuidedSRError, ValueError) as exc:
                return SceneResult(path.name, "failed", message=str(exc))

        failed = 0
        pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
        scene_pool = ThreadPoolExecutor(max_workers=cfg.scene_workers) \
            if cfg.scene_workers > 1 else None
        try:
            results = scene_pool.map(one, scenes) if scene_pool else map(one, scenes)
            # results arrive in scene order, so the log is independent of scheduling
            for path in scenes:
                try:
                    result = next(results)
                except GeoMismatch as exc:
                    emit(f"scene={path.name} status=fatal message={str(exc)!r}")
                    return EXIT_FATAL
                failed += result.status == "failed"
                emit(result.log_line())
        finally:
            for p in (scene_pool, pool):
                if p is not None:
                    p.shutdown(cancel_futures=True)
        emit(f"done scenes={len(scenes)} failed={failed}")
    return EXIT_PARTIAL if failed else EXIT_OK


# -- synthetic batches ---------------------------------------------------------

def _quality_layers(geo, seed: int) -> dict:
    """Smooth, deterministic stand-ins for the per-pixel quality layers."""
    rows, cols = np.mgrid[0:geo.n_rows, 0:geo.n_cols]
    fr = rows / max(geo.n_rows - 1, 1)
    fc = cols / max(geo.n_cols - 1, 1)
    return {
        "scanline_time": 9.5 + 2.0 * fc + 0.01 * (seed % 7),
        "satzen": 60.0 * np.abs(2 * fc - 1),
        "sunzen": 40.0 + 30.0 * fr,
        "test_mae": np.full(geo.shape, 1.2),
        "r2": np.full(geo.shape, 0.95),
    }


def write_synthetic_batch(out_dir, params: SynthParams, factor: int = 5, count: int = 1,
                          start: Optional[datetime] = None, satellite: str = "MetOp-A",
                          node: str = "DAY", version: str = "v1.0") -> dict:
    """
    Write a guide, ``count`` coarse scenes and their high-resolution truths.

    All scenes share the landscape of ``params.seed``; scene ``i`` uses
    weather seed ``params.weather_seed + i``.
    """
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    start = start or datetime(2020, 8, 20, 10, 30, tzinfo=timezone.utc)
    paths = {"guide": None, "scenes": [], "truth": []}
    for i in range(count):
        p = replace(params, weather_seed=params.weather_seed + i)
        scene = generate(p, factor)
        ts = start + timedelta(days=i)
        if i == 0:
            paths["guide"] = write_guide(out / "guide.npg", scene.guide, ts)
        h_src = make_header("LST_GAC", scene.source.geo, timestamp=ts, satellite=satellite,
                            version=version, node=node)
        # clouded cells carry the cloud code rather than the generic fill
        src = Grid2D(scene.source.geo, scene.source.values, scene.source.valid, "K",
                     flags={"cloud": ~scene.source.valid})
        grids = [pack(src, h_src)]
        for name, arr in _quality_layers(scene.source.geo, p.weather_seed).items():
            h = make_header(name, scene.source.geo, timestamp=ts, satellite=satellite,
                            version=version, node=node)
            grids.append(pack(Grid2D(scene.source.geo, arr, np.ones(arr.shape, bool)), h))
        name = format_filename(h_src)
        paths["scenes"].append(write_npg(out / "scenes" / name, grids))
        h_truth = make_header("LST", scene.truth.geo, timestamp=ts, satellite=satellite,
                              version=version, node=node)
        paths["truth"].append(write_npg(out / "truth" / name, [pack(scene.truth, h_truth)]))
    return paths


# -- validation ----------------------------------------------------------------

_MATCHUP_REQUIRED = ("station_id", "product", "reference")
TAGS = ("ALL", "DAY", "NIGHT")


def _nan_to_none(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def read_matchups(path) -> list[dict]:
    """
    Parse a match-up table: CSV with columns ``station_id, product, reference``
    and optional ``tag`` (DAY/NIGHT) and ``dt_minutes`` (time offset to overpass).
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError("empty match-up file", line=1)
        missing = [c for c in _MATCHUP_REQUIRED if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"missing columns {missing}", line=1)
        for row in reader:
            line = reader.line_num
            try:
                ref = float(row["reference"])
                dt = row.get("dt_minutes")
                dt = float(dt) if dt not in (None, "") else None
            except ValueError as exc:
                raise ParseError(str(exc), line=line) from None
            tag = (row.get("tag") or "").strip().upper() or None
            if tag not in (None, "DAY", "NIGHT"):
                raise ParseError(f"tag must be DAY or NIGHT, got {tag!r}", line=line)
            rows.append({"station_id": row["station_id"].strip(), "product": row["product"].strip(),
                         "reference": ref, "tag": tag, "dt_minutes": dt, "line": line})
    return rows


def run_validate(product_dir, station_table, matchup_file, out_dir, bin_width: float = 0.5,
                 max_time_offset: Optional[float] = None, figures: bool = True,
                 variable: str = "LST") -> dict:
    """
    Station-by-station validation split into ALL/DAY/NIGHT.

    Writes ``validation_summary.txt``, ``validation_table.tsv``,
    ``validation_report.json``, two-column histograms and (optionally) PNG
    figures into ``out_dir``.  Returns ``{station_id: {tag: ValidationReport}}``.
    """
    from . import plotting

    product_dir, out_dir = Path(product_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stations = load_stations(station_table)
    by_id = {s.id: s for s in stations}
    rows = read_matchups(matchup_file)

    cache: dict = {}
    pairs = {s.id: ([], [], []) for s in stations}
    for row in rows:
        st = by_id.get(row["station_id"])
        if st is None:
            raise ParseError(f"unknown station {row['station_id']!r}", line=row["line"])
        if max_time_offset is not None and row["dt_minutes"] is not None \
                and abs(row["dt_minutes"]) > max_time_offset:
            continue
        prod = row["product"]
        if prod not in cache:
            try:
                cache[prod] = unpack(read_npg(product_dir / prod)[variable], strict=False)
            except (OSError, KeyError, GuidedSRError) as exc:
                logger.warning("cannot use product %s: %s", prod, exc)
                cache[prod] = None
        grid = cache[prod]
        if grid is None:
            continue
        value = matchup(grid, st)
        if value is None:
            continue
        tag = row["tag"]
        if tag is None:
            try:
                tag = parse_filename(prod).node
            except ParseError:
                tag = "DAY"
        ref, est, tags = pairs[st.id]
        ref.append(row["reference"])
        est.append(value)
        tags.append(tag)

    results = {}
    hist_dir = out_dir / "histograms"
    fig_dir = out_dir / "figures"
    hist_dir.mkdir(exist_ok=True)
    if figures:
        fig_dir.mkdir(exist_ok=True)
    for st in stations:
        ref, est, tags = pairs[st.id]
        sample = PairedSample(ref, est, tuple(tags))
        reports = {}
        for tag in TAGS:
            sub = sample if tag == "ALL" else sample.subset(tag)
            reports[tag] = compute_report(sub, bin_width) if len(sub) else ValidationReport.empty()
            if not reports[tag].is_empty:
                (hist_dir / f"{st.id}_{tag}.txt").write_text(reports[tag].histogram_text())
        results[st.id] = reports
        if figures and len(sample):
            plotting.plot_station_scatter(sample, reports, fig_dir / f"{st.id}_scatter.png",
                                          title=f"{st.name} ({st.id})")
            plotting.plot_difference_histogram(reports["ALL"], fig_dir / f"{st.id}_hist.png",
                                               title=f"{st.id}: product - in situ")

    cols = ("n", "md", "rmse", "rsd", "mae", "bias_mean")
    with open(out_dir / "validation_table.tsv", "w", encoding="utf-8") as fh:
        fh.write("\t".join(("station", "network", "tag") + cols) + "\n")
        for st in stations:
            for tag in TAGS:
                d = results[st.id][tag].as_dict()
                cells = [str(d["n"])] + [f"{d[c]:.4f}" for c in cols[1:]]
                fh.write("\t".join([st.id, st.network, tag] + cells) + "\n")
    with open(out_dir / "validation_summary.txt", "w", encoding="utf-8") as fh:
        for st in stations:
            for tag in TAGS:
                rep = results[st.id][tag]
                line = rep.summary_line() if not rep.is_empty else "n=0"
                fh.write(f"{st.id} {tag} {line}\n")
    doc = {sid: {tag: _nan_to_none(r.as_dict()) for tag, r in reps.items()}
           for sid, reps in results.items()}
    (out_dir / "validation_report.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    return results


def run_evaluate(product_path, truth_path, out_dir, bin_width: float = 0.1,
                 figures: bool = True, factor: int = 5) -> dict:
    """
    Compare a downscaled product with a known truth, alongside bicubic and
    replicated baselines built from the product's coarse variable.
    """
    from . import plotting

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prod = read_npg(product_path)
    est = unpack(prod["LST"], strict=False)
    truth = unpack(read_npg(truth_path)["LST"], strict=False)
    candidates = {"solver": est}
    if "LST_GAC" in prod:
        gac = unpack(prod["LST_GAC"], strict=False)
        candidates["bicubic"] = upsample_bicubic(gac, factor)
        candidates["source"] = replicate_nearest(gac, factor)
    reports = {name: grid_difference_report(g, truth, bin_width) for name, g in candidates.items()}
    lines = [f"{name} {r.summary_line() if not r.is_empty else 'n=0'}" for name, r in reports.items()]
    (out_dir / "evaluation_summary.txt").write_text("\n".join(lines) + "\n")
    (out_dir / "evaluation_report.json").write_text(json.dumps(
        {k: _nan_to_none(r.as_dict()) for k, r in reports.items()}, indent=2, sort_keys=True))
    if not reports["solver"].is_empty:
        (out_dir / "solver_histogram.txt").write_text(reports["solver"].histogram_text())
    if figures:
        plotting.plot_difference_histogram(reports["solver"], out_dir / "solver_histogram.png",
                                           title="solver - truth")
        panels = {"truth": truth, **candidates}
        plotting.plot_scene_panels(panels, out_dir / "panels.png", diff_to="truth")
    return reports
