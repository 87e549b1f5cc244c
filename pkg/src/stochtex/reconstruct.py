"""Gradient-domain reconstruction and PSNR scoring.

The sweep protocol keeps the original gradients only at the top-fraction
most discriminative pixels and solves for the image that matches those
gradients in least squares — a Poisson problem on the 4-connected grid of
valid pixels.  PSNR of the reconstruction against the original then scores
how much structure the selected pixels carried.

The texture-gradient variant replaces image gradients with the per-direction
discrepancies themselves, signed by which side of the pixel is brighter on a
neighborhood-weighted average.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import LinearOperator, cg

from .errors import ConvergenceError, ParameterError
from .field import Field

__all__ = ["select_top", "poisson_reconstruct", "psnr", "texgrad_reconstruct"]


def select_top(std_values: np.ndarray, fraction: float = 0.20) -> np.ndarray:
    """Boolean mask of the round(fraction * defined_count) largest values.

    NaN entries are undefined and never retained.  Ties at the threshold are
    broken by row-major pixel order (stable sort on the flattened map).
    """
    if not (0.0 <= fraction <= 1.0):
        raise ParameterError(f"fraction must be in [0, 1], got {fraction}")
    v = np.asarray(std_values, dtype=np.float64)
    flat = v.ravel()
    defined = int(np.isfinite(flat).sum())
    if defined == 0:
        raise ParameterError("map has no defined values")
    k = int(round(fraction * defined))
    mask = np.zeros(flat.shape, dtype=bool)
    if k:
        order = np.argsort(-flat, kind="stable")  # NaN sorts last either sign
        mask[order[:k]] = True
    return mask.reshape(v.shape)


def _neighbor_pairs(valid: np.ndarray):
    """Index arrays (a, b) of 4-connected valid pairs; a is left/top of b."""
    h, w = valid.shape
    idx = np.arange(h * w).reshape(h, w)
    hmask = valid[:, :-1] & valid[:, 1:]
    vmask = valid[:-1, :] & valid[1:, :]
    a = np.concatenate([idx[:, :-1][hmask], idx[:-1, :][vmask]])
    b = np.concatenate([idx[:, 1:][hmask], idx[1:, :][vmask]])
    return a, b, hmask, vmask


def _solve_gradient_lsq(original: Field, g: np.ndarray, a: np.ndarray,
                        b: np.ndarray, rtol: float, maxiter: int) -> Field:
    """min sum (v[b] - v[a] - g)^2 over valid pixels, then mean-fix + clamp."""
    valid = original.mask
    nvalid = int(valid.sum())
    col = np.full(valid.size, -1, dtype=np.int64)
    col[valid.ravel()] = np.arange(nvalid)
    ca, cb = col[a], col[b]
    npairs = len(g)
    d = coo_matrix(
        (np.concatenate([-np.ones(npairs), np.ones(npairs)]),
         (np.concatenate([np.arange(npairs)] * 2), np.concatenate([ca, cb]))),
        shape=(npairs, nvalid)).tocsr()
    lap = (d.T @ d).tocsr()
    rhs = d.T @ g
    op = LinearOperator((nvalid, nvalid), matvec=lap.__matmul__, dtype=np.float64)
    x, info = cg(op, rhs, rtol=rtol, atol=0.0, maxiter=maxiter)
    if info != 0:
        nr = float(np.linalg.norm(lap @ x - rhs))
        raise ConvergenceError(
            f"gradient solve did not converge (info={info})", residual=nr)
    mean_orig = float(original.values[valid].mean())
    x += mean_orig - x.mean()
    np.clip(x, 0.0, 1.0, out=x)
    out = np.full(valid.shape, np.nan)
    out[valid] = x
    return Field(out, mask=valid, domain=original.domain)


def poisson_reconstruct(original: Field, retained: np.ndarray, *,
                        rtol: float = 1e-10, maxiter: int = 10_000) -> Field:
    """Rebuild the field keeping original gradients only at retained pixels.

    For each 4-connected pair of valid pixels (a, b) with a the left/top
    one, the gradient target is v(b) - v(a) if a is retained, else 0.  The
    least-squares solution (conjugate gradients on the normal equations) is
    shifted to the original's mean and clamped to [0, 1].
    """
    if original.channels != 1:
        raise ParameterError("reconstruction takes scalar fields")
    retained = np.asarray(retained, dtype=bool)
    if retained.shape != original.mask.shape:
        raise ParameterError("retained mask shape mismatch")
    a, b, _, _ = _neighbor_pairs(original.mask)
    v = original.values.ravel()
    g = np.where(retained.ravel()[a], v[b] - v[a], 0.0)
    return _solve_gradient_lsq(original, g, a, b, rtol, maxiter)


def psnr(i_field: Field, j_field: Field) -> float:
    """10 log10(|C| / sum of squared error) on [0,1] values over the common
    valid pixels C; +inf when the fields agree exactly there."""
    if i_field.shape[:2] != j_field.shape[:2]:
        raise ParameterError("psnr needs same-size fields")
    c = i_field.mask & j_field.mask
    m = int(c.sum())
    if m == 0:
        raise ParameterError("no commonly valid pixels")
    diff = i_field.values[c] - j_field.values[c]
    se = float(diff @ diff) if diff.ndim == 1 else float((diff * diff).sum())
    if se == 0.0:
        return math.inf
    return 10.0 * math.log10(m / se)


# ---------------------------------------------------------------------------
# Texture-gradient reconstruction

def _side_average(original: Field, model) -> np.ndarray:
    """Neighborhood-weighted average sum p(x) v(x) around every pixel.

    Missing and out-of-bounds pixels contribute 0, consistent with the
    missing-data policy of dropping their mass.
    """
    offs = model.states
    r = int(np.abs(offs).max())
    kern = np.zeros((2 * r + 1, 2 * r + 1))
    kern[offs[:, 1] + r, offs[:, 0] + r] = model.limit_prob
    img0 = np.where(original.mask, original.values, 0.0)
    return correlate(img0, kern, mode="constant", cval=0.0)


def texgrad_reconstruct(original: Field, stdmap, models, *,
                        rtol: float = 1e-10, maxiter: int = 10_000) -> Field:
    """Reconstruct from the discrepancies themselves (no image gradients).

    Per valid pair along axis h or v, the gradient target is the mean of the
    two endpoint terms sigma(p) * d(p), where d(p) is that pixel's
    discrepancy for the straight orientation aligned with the pair axis and
    sigma(p) = sign of (weighted '+'-side average - weighted '-'-side
    average) of the original values around p.  Pairs whose endpoints both
    lack a defined d get target 0.
    """
    if original.channels != 1:
        raise ParameterError("reconstruction takes scalar fields")
    d_h = stdmap.d[0]  # E/W
    d_v = stdmap.d[1]  # N/S
    sig = {}
    for axis, label in (("h", "E/W"), ("v", "N/S")):
        plus = _side_average(original, models.models[(label, "+")])
        minus = _side_average(original, models.models[(label, "-")])
        sig[axis] = np.sign(plus - minus)
    a, b, hmask, vmask = _neighbor_pairs(original.mask)

    def pair_targets(dmap, sigma, sel, idx_a, idx_b):
        ta = (sigma.ravel() * np.where(np.isfinite(dmap.ravel()),
                                       dmap.ravel(), np.nan))
        va, vb = ta[idx_a], ta[idx_b]
        ok_a, ok_b = np.isfinite(va), np.isfinite(vb)
        s = np.where(ok_a, va, 0.0) + np.where(ok_b, vb, 0.0)
        cnt = ok_a.astype(np.int64) + ok_b.astype(np.int64)
        return np.where(cnt > 0, s / np.maximum(cnt, 1), 0.0)

    nh = int(hmask.sum())
    g = np.empty(len(a))
    g[:nh] = pair_targets(d_h, sig["h"], hmask, a[:nh], b[:nh])
    g[nh:] = pair_targets(d_v, sig["v"], vmask, a[nh:], b[nh:])
    return _solve_gradient_lsq(original, g, a, b, rtol, maxiter)
