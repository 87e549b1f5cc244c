"""Multi-scale (lambda, kappa) grid evaluation.

For every scale pair the field is analyzed `runs` times with independent
streams, each run's map is scored by select-top / reconstruct / PSNR, and the
run-averaged map is scored the same way.  The averaged-map PSNR is the
primary per-cell number (the per-run mean is kept alongside for diagnostics).

Cells append to a checkpoint CSV as they complete, so an interrupted sweep
resumes by skipping cells already present; on completion the CSV is rewritten
in canonical grid order, making interrupted-then-resumed output identical to
a single uninterrupted run.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .discrepancy import std_map
from .errors import ParameterError, StochtexError
from .field import Field
from .reconstruct import poisson_reconstruct, psnr, select_top

__all__ = [
    "SweepCell", "SweepGrid", "run_sweep", "best_scales", "physical_units",
    "write_grid_csv", "write_best",
]

CSV_HEADER = ("lambda", "kappa", "run", "psnr")


def _fmt6(x: float) -> str:
    return f"{float(x):.6g}"


def default_lambda_grid():
    return tuple(np.arange(1.0, 7.01, 0.5))


def default_kappa_grid():
    # log-spaced from 1/256 up to 1, one point per factor sqrt(2)-ish
    return tuple(np.geomspace(1.0 / 256.0, 1.0, 13))


@dataclass(frozen=True)
class SweepCell:
    lam: float
    kappa: float
    run_psnrs: tuple        # one PSNR per run, NaN when the run failed
    mean_psnr: float        # arithmetic mean of run_psnrs
    avgmap_psnr: float      # PSNR of the reconstruction from the averaged map
    error: Optional[str] = None


@dataclass
class SweepGrid:
    lambda_values: tuple
    kappa_values: tuple
    n: int
    runs: int
    fraction: float
    seed: int
    cells: dict             # (lam_str, kappa_str) 6-sig-digit keys -> SweepCell

    def cell(self, lam: float, kappa: float) -> Optional[SweepCell]:
        return self.cells.get((_fmt6(lam), _fmt6(kappa)))


def _cell_seed(seed: int, lam: float, kappa: float) -> int:
    # order-independent, distinct per cell
    tag = f"{seed}|{float(lam).hex()}|{float(kappa).hex()}".encode()
    return int.from_bytes(hashlib.blake2b(tag, digest_size=8).digest(), "big")


def _score_map(field: Field, std_values: np.ndarray, fraction: float) -> float:
    sel = select_top(std_values, fraction)
    rec = poisson_reconstruct(field, sel)
    return psnr(field, rec)


def _evaluate_cell(field: Field, lam: float, kappa: float, *, n: int,
                   runs: int, fraction: float, seed: int, threads: int,
                   cache_dir) -> SweepCell:
    cseed = _cell_seed(seed, lam, kappa)
    try:
        acc = np.zeros(field.mask.shape)
        cnt = np.zeros(field.mask.shape, dtype=np.int64)
        run_psnrs = []
        for k in range(runs):
            sm = std_map(field, lam, kappa, n=n, seed=cseed, run=k,
                         threads=threads, cache_dir=cache_dir)
            run_psnrs.append(_score_map(field, sm.std, fraction))
            fin = np.isfinite(sm.std)
            acc[fin] += sm.std[fin]
            cnt[fin] += 1
        avg = np.full(field.mask.shape, np.nan)
        avg[cnt > 0] = acc[cnt > 0] / cnt[cnt > 0]
        avg_psnr = _score_map(field, avg, fraction)
        mean_psnr = float(np.mean(run_psnrs))
        return SweepCell(float(lam), float(kappa), tuple(run_psnrs),
                         mean_psnr, avg_psnr)
    except StochtexError as exc:
        nan = float("nan")
        return SweepCell(float(lam), float(kappa), (nan,) * runs, nan, nan,
                         error=str(exc))


def _cell_rows(cell: SweepCell):
    ls, ks = _fmt6(cell.lam), _fmt6(cell.kappa)
    for k, p in enumerate(cell.run_psnrs):
        yield (ls, ks, str(k), _fmt6(p))
    yield (ls, ks, "mean", _fmt6(cell.mean_psnr))
    yield (ls, ks, "avgmap", _fmt6(cell.avgmap_psnr))


def write_grid_csv(grid: SweepGrid, path: str) -> None:
    """Full rewrite in canonical grid order (lambda outer, kappa inner)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for lam in grid.lambda_values:
            for kap in grid.kappa_values:
                cell = grid.cell(lam, kap)
                if cell is not None:
                    w.writerows(_cell_rows(cell))


def _read_checkpoint(path: str, runs: int) -> dict:
    """Parse complete cells from a (possibly appended-to) checkpoint CSV.

    A cell counts as complete when rows for every run index plus `mean` and
    `avgmap` are present; duplicated rows keep the last occurrence.
    """
    groups: dict = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        for row in rd:
            if not row or row[0] == "lambda":
                continue
            if len(row) != 4:
                continue
            groups.setdefault((row[0], row[1]), {})[row[2]] = row[3]
    need = {str(k) for k in range(runs)} | {"mean", "avgmap"}
    cells = {}
    for (ls, ks), got in groups.items():
        if not need.issubset(got):
            continue
        run_psnrs = tuple(float(got[str(k)]) for k in range(runs))
        cells[(ls, ks)] = SweepCell(float(ls), float(ks), run_psnrs,
                                    float(got["mean"]), float(got["avgmap"]))
    return cells


def run_sweep(field: Field, lambda_values=None, kappa_values=None, *,
              n: int = 100, runs: int = 5, fraction: float = 0.20,
              seed: int = 0, threads: int = 1, checkpoint: str = None,
              cache_dir=None, progress=None) -> SweepGrid:
    """Evaluate the scale grid; deterministic for a given seed.

    A failing cell records NaN PSNRs plus the error text and the sweep
    continues.  `progress`, when given, is called with (cell, done, total)
    after every cell.
    """
    if field.channels != 1:
        raise ParameterError("sweep takes scalar fields")
    lambda_values = tuple(float(v) for v in (
        default_lambda_grid() if lambda_values is None else lambda_values))
    kappa_values = tuple(float(v) for v in (
        default_kappa_grid() if kappa_values is None else kappa_values))
    if not lambda_values or not kappa_values:
        raise ParameterError("scale grids must be nonempty")
    if runs < 1:
        raise ParameterError(f"runs must be >= 1, got {runs}")

    grid = SweepGrid(lambda_values, kappa_values, n, runs, fraction, seed, {})
    if checkpoint and os.path.exists(checkpoint):
        grid.cells.update(_read_checkpoint(checkpoint, runs))

    fh = None
    if checkpoint:
        fresh = not os.path.exists(checkpoint) or os.path.getsize(checkpoint) == 0
        fh = open(checkpoint, "a", newline="")
        if fresh:
            csv.writer(fh).writerow(CSV_HEADER)
            fh.flush()
    try:
        total = len(lambda_values) * len(kappa_values)
        done = 0
        for lam in lambda_values:
            for kap in kappa_values:
                key = (_fmt6(lam), _fmt6(kap))
                cell = grid.cells.get(key)
                if cell is None:
                    cell = _evaluate_cell(field, lam, kap, n=n, runs=runs,
                                          fraction=fraction, seed=seed,
                                          threads=threads, cache_dir=cache_dir)
                    grid.cells[key] = cell
                    if fh is not None:
                        csv.writer(fh).writerows(_cell_rows(cell))
                        fh.flush()
                done += 1
                if progress is not None:
                    progress(cell, done, total)
    finally:
        if fh is not None:
            fh.close()
    if checkpoint:
        write_grid_csv(grid, checkpoint)
    return grid


def best_scales(grid: SweepGrid):
    """(lambda, kappa, psnr) of the argmax cell by averaged-map PSNR.

    Ties go to smaller lambda, then smaller kappa.  Failed (NaN) cells are
    ignored; a grid with no successful cell is an error.
    """
    best = None
    for lam in grid.lambda_values:
        for kap in grid.kappa_values:
            cell = grid.cell(lam, kap)
            if cell is None or math.isnan(cell.avgmap_psnr):
                continue
            if (best is None or cell.avgmap_psnr > best[2]
                    or (cell.avgmap_psnr == best[2]
                        and (cell.lam, cell.kappa) < (best[0], best[1]))):
                best = (cell.lam, cell.kappa, cell.avgmap_psnr)
    if best is None:
        raise ParameterError("no successful cells in sweep grid")
    return best


def write_best(grid: SweepGrid, path: str) -> None:
    lam, kap, p = best_scales(grid)
    with open(path, "w") as fh:
        fh.write(f"best_lambda={_fmt6(lam)}\n")
        fh.write(f"best_kappa={_fmt6(kap)}\n")
        fh.write(f"best_psnr={_fmt6(p)}\n")


def physical_units(lambda_px: float, kappa_norm: float, units_per_px: float,
                   value_domain) -> tuple:
    """Convert pixel/normalized scales to physical ones.

    lambda: pixels times physical length per pixel.  kappa: normalized value
    times the width of the declared value domain.
    """
    lo, hi = float(value_domain[0]), float(value_domain[1])
    if units_per_px <= 0:
        raise ParameterError("units_per_px must be positive")
    if hi <= lo:
        raise ParameterError("value domain must have hi > lo")
    return float(lambda_px) * units_per_px, float(kappa_norm) * (hi - lo)
