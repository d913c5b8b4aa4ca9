"""
Command-line interface.

Subcommands: ``downscale``, ``validate``, ``synth``, ``coarsen``, ``pack``,
``unpack``, ``tileplan`` and ``evaluate``.  Exit codes are 0 on success,
1 when some scenes failed and 2 on configuration or fatal errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .codec import make_header, pack, read_npg, unpack, write_npg
from .errors import GuidedSRError
from .grid import GeoTransform, Grid2D, coarsen_nan_aware
from .pipeline import (
    EXIT_FATAL,
    EXIT_OK,
    load_config,
    run_downscale,
    run_evaluate,
    run_validate,
    write_synthetic_batch,
)
from .synth import SynthParams
from .tiler import plan

logger = logging.getLogger("guidedsr")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _timestamp(text):
    for fmt in ("%Y-%m-%dT%H:%M:%SZ", "%Y-%m-%dT%H:%M", "%Y%m%d%H%M", "%Y-%m-%d"):
        try:
            return datetime.strptime(text, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            pass
    raise argparse.ArgumentTypeError(f"unrecognized timestamp {text!r}")


# -- downscale ---------------------------------------------------------------

# flag dest -> "section.key" in the configuration document
_OVERRIDES = {
    "input_dir": "run.input_dir",
    "guide": "run.guide_path",
    "output_dir": "run.output_dir",
    "factor": "run.factor",
    "workers": "run.workers",
    "scene_workers": "run.scene_workers",
    "coefficients": "run.coefficient_file",
    "max_gap_fraction": "run.max_gap_fraction",
    "lam": "solver.lambda",
    "iterations": "solver.n_iterations",
    "adjust_every": "solver.adjust_every",
    "tolerance": "solver.tolerance",
    "init": "solver.init",
    "kappa": "guide.kappa",
    "w_landcover": "guide.w_landcover",
    "w_elevation": "guide.w_elevation",
    "w_canopy": "guide.w_canopy",
    "g_form": "guide.g_form",
}


def cmd_downscale(args) -> int:
    overrides = {key: getattr(args, dest) for dest, key in _OVERRIDES.items()}
    if args.lenient:
        overrides["run.strict_codec"] = "false"
    if args.patch:
        overrides["tile.patch_h"], overrides["tile.patch_w"] = args.patch
    if args.stride:
        overrides["tile.stride_v"], overrides["tile.stride_h"] = args.stride
    cfg = load_config(args.config, overrides)
    return run_downscale(cfg)


def _add_downscale(sub):
    p = sub.add_parser("downscale", help="super-resolve every scene of a directory")
    p.add_argument("--config", type=Path, help="INI document with [run] [solver] [guide] [tile]")
    p.add_argument("--input-dir", type=Path)
    p.add_argument("--guide", type=Path, help="guide file (landcover, elevation, canopy)")
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--factor", type=_positive_int)
    p.add_argument("--workers", type=_positive_int, help="tile worker threads")
    p.add_argument("--scene-workers", type=_positive_int, help="scenes processed concurrently")
    p.add_argument("--coefficients", type=Path, help="precomputed conductances instead of the guide")
    p.add_argument("--max-gap-fraction", type=float,
                   help="skip scenes whose invalid fraction exceeds this (no default)")
    p.add_argument("--lenient", action="store_true",
                   help="invalidate undeclared out-of-range codes instead of failing")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--iterations", type=_positive_int)
    p.add_argument("--adjust-every", type=_positive_int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--init", choices=("BICUBIC", "REPLICATE"))
    p.add_argument("--kappa", type=float)
    p.add_argument("--w-landcover", type=float)
    p.add_argument("--w-elevation", type=float)
    p.add_argument("--w-canopy", type=float)
    p.add_argument("--g-form", choices=("EXPONENTIAL", "RATIONAL"))
    p.add_argument("--patch", nargs=2, type=_positive_int, metavar=("H", "W"))
    p.add_argument("--stride", nargs=2, type=_positive_int, metavar=("V", "H"))
    p.set_defaults(func=cmd_downscale)


# -- validate / evaluate ---------------------------------------------------------

def cmd_validate(args) -> int:
    results = run_validate(args.product_dir, args.stations, args.matchups, args.output_dir,
                           bin_width=args.bin_width, max_time_offset=args.max_time_offset,
                           figures=not args.no_figures, variable=args.variable)
    n = sum(r["ALL"].n for r in results.values())
    logger.info("%d stations, %d match-ups", len(results), n)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    reports = run_evaluate(args.product, args.truth, args.output_dir, bin_width=args.bin_width,
                           figures=not args.no_figures, factor=args.factor)
    for name, r in reports.items():
        print(f"{name}\t{r.summary_line() if not r.is_empty else 'n=0'}")
    return EXIT_OK


def _add_reports(sub):
    p = sub.add_parser("validate", help="compare products with station match-ups")
    p.add_argument("product_dir", type=Path)
    p.add_argument("matchups", type=Path,
                   help="CSV: station_id,product,reference[,tag][,dt_minutes]")
    p.add_argument("--stations", type=Path, help="station table (default: bundled sites)")
    p.add_argument("-o", "--output-dir", type=Path, default=Path("validation"))
    p.add_argument("--bin-width", type=float, default=0.5)
    p.add_argument("--max-time-offset", type=float, help="minutes; farther match-ups are dropped")
    p.add_argument("--variable", default="LST")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("evaluate", help="compare a product with a known truth")
    p.add_argument("product", type=Path)
    p.add_argument("truth", type=Path)
    p.add_argument("-o", "--output-dir", type=Path, default=Path("evaluation"))
    p.add_argument("--factor", type=_positive_int, default=5)
    p.add_argument("--bin-width", type=float, default=0.1)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)


# -- synth / coarsen / pack / unpack / tileplan --------------------------------------

def cmd_synth(args) -> int:
    params = SynthParams(
        seed=args.seed, weather_seed=args.weather_seed, n_rows=args.size[0], n_cols=args.size[1],
        n_classes=args.n_classes, cloud_fraction=args.cloud_fraction,
        noise_sigma=args.noise_sigma, lapse_rate=args.lapse_rate,
    )
    paths = write_synthetic_batch(args.output_dir, params, args.factor, args.count,
                                  start=args.start, satellite=args.satellite, node=args.node)
    print(f"guide {paths['guide']}")
    for s in paths["scenes"]:
        print(f"scene {s}")
    return EXIT_OK


def cmd_coarsen(args) -> int:
    grids = read_npg(args.input)
    g = unpack(grids[args.variable], strict=not args.lenient)
    h_in = grids[args.variable].header
    c = coarsen_nan_aware(g, args.factor)
    h = make_header(args.to, c.geo, timestamp=h_in.timestamp, satellite=h_in.satellite,
                    version=h_in.version, node=h_in.node)
    write_npg(args.output, [pack(c, h)])
    return EXIT_OK


def cmd_pack(args) -> int:
    values = np.load(args.input)
    if values.ndim != 2:
        raise GuidedSRError(f"{args.input}: expected a 2-D array, got shape {values.shape}")
    lon_min, lat_max, cell = args.geo
    geo = GeoTransform(lon_min, lat_max, cell, *values.shape)
    g = Grid2D.from_array(values, geo)
    h = make_header(args.variable, geo, timestamp=args.timestamp, satellite=args.satellite,
                    version=args.version_tag, node=args.node)
    write_npg(args.output, [pack(g, h)])
    return EXIT_OK


def cmd_unpack(args) -> int:
    grids = read_npg(args.input)
    names = [args.variable] if args.variable else list(grids)
    for name in names:
        p = grids[name]
        g = unpack(p, strict=not args.lenient)
        print(p.header.to_text(), end="")
        print(f"valid_cells={int(g.valid.sum())}/{g.valid.size}")
        if args.output:
            out = Path(args.output)
            if len(names) > 1:
                out = out.with_name(f"{out.stem}_{name}{out.suffix or '.npy'}")
            np.save(out, g.filled(np.nan))
    return EXIT_OK


def cmd_tileplan(args) -> int:
    tp = plan(args.n_rows, args.n_cols, args.patch_h, args.patch_w, args.stride_v, args.stride_h)
    if not args.quiet:
        for w in tp.windows:
            print(f"{w.row0}\t{w.col0}\t{w.height}\t{w.width}")
    print(f"{len(tp)} windows")
    return EXIT_OK


def _add_tools(sub):
    p = sub.add_parser("synth", help="write a synthetic guide, scenes and truths")
    p.add_argument("output_dir", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weather-seed", type=int, default=0)
    p.add_argument("--count", type=_positive_int, default=1)
    p.add_argument("--size", nargs=2, type=_positive_int, default=(600, 600), metavar=("ROWS", "COLS"))
    p.add_argument("--factor", type=_positive_int, default=5)
    p.add_argument("--n-classes", type=_positive_int, default=6)
    p.add_argument("--cloud-fraction", type=float, default=0.0)
    p.add_argument("--noise-sigma", type=float, default=0.3)
    p.add_argument("--lapse-rate", type=float, default=6.5)
    p.add_argument("--start", type=_timestamp, help="timestamp of the first scene")
    p.add_argument("--satellite", default="MetOp-A")
    p.add_argument("--node", choices=("DAY", "NIGHT"), default="DAY")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("coarsen", help="NaN-aware block mean of one variable")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--factor", type=_positive_int, default=5)
    p.add_argument("--variable", default="LST")
    p.add_argument("--to", default="LST_GAC", help="variable profile of the output")
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=cmd_coarsen)

    p = sub.add_parser("pack", help="pack a .npy array (NaN = invalid)")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--variable", default="LST")
    p.add_argument("--geo", nargs=3, type=float, default=(20.0, 70.0, 0.01),
                   metavar=("LON_MIN", "LAT_MAX", "CELL"))
    p.add_argument("--timestamp", type=_timestamp)
    p.add_argument("--satellite", default="SYNTH")
    p.add_argument("--node", choices=("DAY", "NIGHT"), default="DAY")
    p.add_argument("--version-tag", default="v1.0")
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("unpack", help="print headers and optionally save .npy arrays")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path, nargs="?")
    p.add_argument("--variable")
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=cmd_unpack)

    p = sub.add_parser("tileplan", help="list the windows of a tiling plan")
    for name in ("n_rows", "n_cols", "patch_h", "patch_w", "stride_v", "stride_h"):
        p.add_argument(name, type=_positive_int)
    p.add_argument("-q", "--quiet", action="store_true", help="print only the count")
    p.set_defaults(func=cmd_tileplan)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guidedsr", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_downscale(sub)
    _add_reports(sub)
    _add_tools(sub)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (GuidedSRError, OSError, KeyError) as exc:
        print(f"guidedsr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
