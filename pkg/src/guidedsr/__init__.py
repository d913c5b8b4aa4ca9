"""Guide-steered super-resolution of coarse land surface temperature grids."""
from .grid import GeoTransform, Grid2D, coarsen_nan_aware, replicate_nearest, upsample_bicubic
from .guide import GuideParams, GuideStack, build_guide, edge_coefficients
from .solver import SolveReport, SolverParams, solve
from .synth import SynthParams, generate
from .tiler import plan, stitch_average

__version__ = "0.1.0"
