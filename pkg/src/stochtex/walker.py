"""Deterministic path sampling around pixels.

Every (seed, run, lam, orientation, side) tuple names one counter-based
random stream (Philox); within a stream, each pixel owns a fixed-size,
block-aligned window of draws addressed by its row-major index.  Pixels are
therefore independent work items: any chunking or thread schedule reads the
same uniforms and produces bit-identical walks.

A pixel window holds n*m draws (padded up to a whole 4-draw Philox block):
draw q*m selects path q's start state from the limit distribution, draws
q*m+1 .. q*m+m-1 select its transitions.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .neighborhood import NeighborhoodModel

__all__ = ["PathSet", "stream_key", "pixel_uniforms", "sample_path",
           "sample_pathset"]

_DRAWS_PER_BLOCK = 4  # one Philox counter increment yields 4 doubles


@dataclass
class PathSet:
    """n sampled value-sequences of length m from one side of one pixel."""

    orientation_label: str
    side: str
    values: np.ndarray           # (n, m) float64 or (n, m, 3); NaN = missing
    states: np.ndarray | None = None  # (n, m) int32 state indices (diagnostics)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


def stream_key(seed: int, lam: float, run: int, orientation_label: str,
               side: str) -> np.ndarray:
    """128-bit Philox key for one (seed, run, lam, orientation, side) stream."""
    text = f"{int(seed)}|{int(run)}|{float(lam).hex()}|{orientation_label}|{side}"
    h = hashlib.blake2b(text.encode(), digest_size=16).digest()
    return np.frombuffer(h, dtype=np.uint64).copy()


def blocks_per_pixel(n: int, m: int) -> int:
    return (n * m + _DRAWS_PER_BLOCK - 1) // _DRAWS_PER_BLOCK


def pixel_uniforms(key: np.ndarray, first_pixel: int, npix: int,
                   n: int, m: int) -> np.ndarray:
    """Uniform draws for pixels [first_pixel, first_pixel+npix), one row each.

    Row p holds the full padded window of pixel first_pixel+p, so any chunk
    decomposition yields the same per-pixel rows.
    """
    bpp = blocks_per_pixel(n, m)
    bg = np.random.Philox(key=key)
    bg.advance(first_pixel * bpp)
    gen = np.random.Generator(bg)
    return gen.random((npix, bpp * _DRAWS_PER_BLOCK))


def _start_cdf(model: NeighborhoodModel) -> np.ndarray:
    cdf = np.cumsum(model.limit_prob)
    cdf[-1] = 1.0
    return cdf


def _cum_transitions(model: NeighborhoodModel) -> np.ndarray:
    cum = np.cumsum(model.trans_prob, axis=1)
    cum[:, -1] = 1.0
    return cum


def _walk_states(u: np.ndarray, model: NeighborhoodModel) -> np.ndarray:
    """Reference walk: states (n, m) from per-path uniforms (n, m)."""
    n, m = u.shape
    start_cdf = _start_cdf(model)
    cum_t = _cum_transitions(model)
    states = np.empty((n, m), dtype=np.int32)
    cur = np.searchsorted(start_cdf, u[:, 0], side="right")
    states[:, 0] = cur
    for i in range(1, m):
        idx = (u[:, i, None] >= cum_t[cur]).sum(axis=1)
        cur = model.targets[cur, idx]
        states[:, i] = cur
    return states


def _lookup(field, center, states, model):
    offs = model.states
    cx, cy = center
    xs = cx + offs[states, 0]
    ys = cy + offs[states, 1]
    inb = (xs >= 0) & (xs < field.width) & (ys >= 0) & (ys < field.height)
    if field.channels == 3:
        vals = np.full(states.shape + (3,), np.nan)
        vals[inb] = field.values[ys[inb], xs[inb]]
    else:
        vals = np.full(states.shape, np.nan)
        vals[inb] = field.values[ys[inb], xs[inb]]
    return vals


def sample_path(model: NeighborhoodModel, field, center, rng) -> np.ndarray:
    """One walk of m values using draws from `rng` (m draws consumed)."""
    u = rng.random(model.walk_length).reshape(1, -1)
    states = _walk_states(u, model)
    return _lookup(field, center, states, model)[0]


def sample_pathset(model: NeighborhoodModel, field, center, n: int,
                   seed: int, run: int = 0, keep_states: bool = False) -> PathSet:
    """n paths from the pixel's own window of the keyed stream.

    Bit-identical for identical (model, field, center, n, seed, run),
    regardless of what other pixels or the other side were sampled.
    """
    if n < 1:
        raise ParameterError(f"need n >= 1 paths, got {n}")
    cx, cy = center
    m = model.walk_length
    key = stream_key(seed, model.lam, run, model.orientation.label, model.side)
    pixel_index = cy * field.width + cx
    u = pixel_uniforms(key, pixel_index, 1, n, m)[0, :n * m].reshape(n, m)
    states = _walk_states(u, model)
    values = _lookup(field, center, states, model)
    return PathSet(model.orientation.label, model.side, values,
                   states=states if keep_states else None)
