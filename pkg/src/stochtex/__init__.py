"""stochtex: scale-dependent texture discrepancy maps for rasters.

The per-pixel discrepancy compares the value distributions sampled by
constrained random walks on the two sides of each pixel, at a chosen spatial
scale (lambda, pixels) and data scale (kappa, normalized units).  Sweeping
both scales and scoring gradient-domain reconstructions locates the scales at
which an image carries the most structure.
"""

from .errors import ConvergenceError, DataError, ParameterError, StochtexError
from .field import Field, load, load_map_csv, save_map
from .kernels import KernelSpec, ciede2000, delta1, delta2, rgb_to_lab
from .neighborhood import (
    ModelSet,
    NeighborhoodModel,
    Orientation,
    ORIENTATIONS,
    build_model_set,
    calibrate_walk_length,
    limit_distribution,
    solve_transitions,
    stationarity_residual,
)
from .walker import PathSet, sample_path, sample_pathset
from .discrepancy import STDMap, mmd2, std_at, std_map, std_map_avg
from .reconstruct import poisson_reconstruct, psnr, select_top, texgrad_reconstruct
from .sweep import (
    SweepCell,
    SweepGrid,
    best_scales,
    physical_units,
    run_sweep,
    write_best,
    write_grid_csv,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "DataError", "ParameterError", "StochtexError",
    "Field", "load", "load_map_csv", "save_map",
    "KernelSpec", "ciede2000", "delta1", "delta2", "rgb_to_lab",
    "ModelSet", "NeighborhoodModel", "Orientation", "ORIENTATIONS",
    "build_model_set", "calibrate_walk_length", "limit_distribution",
    "solve_transitions", "stationarity_residual",
    "PathSet", "sample_path", "sample_pathset",
    "STDMap", "mmd2", "std_at", "std_map", "std_map_avg",
    "poisson_reconstruct", "psnr", "select_top", "texgrad_reconstruct",
    "SweepCell", "SweepGrid", "best_scales", "physical_units", "run_sweep",
    "write_best", "write_grid_csv",
    "__version__",
]
