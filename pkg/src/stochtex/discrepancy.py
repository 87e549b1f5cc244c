"""Two-sample discrepancy between opposite half-plane path sets, per pixel.

The squared discrepancy between the sets S+ and S- sampled on the two sides
of a pixel is the biased kernel-embedding estimator (diagonal included):

    d^2 = (1/n^2) sum_jk [ k(s+_j, s+_k) + k(s-_j, s-_k) - 2 k(s+_j, s-_k) ]

Missing-data policy: a kernel evaluation with no commonly-valid index is
dropped and its term is averaged over the remaining evaluations, separately
per term; a whole term with no valid evaluation makes d^2 undefined for that
direction.  Per-pixel texture discrepancy is the square root of the mean of
the defined directions' d^2 (over however many are defined); a pixel with no
defined direction, or missing in the input, is undefined in the map.
Negative d^2 (possible only through the missing-data averaging or rounding)
is clamped to 0; occurrences are counted in the run diagnostics.

`mmd2`/`std_at` are plain reference implementations; `std_map` is the
production path (numba kernels, fixed chunk layout, optional thread pool —
results are bit-identical for any thread count).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _core
from .errors import ParameterError
from .field import Field
from .kernels import KernelSpec, rgb_to_lab
from .neighborhood import ORIENTATIONS, ModelSet, build_model_set
from .walker import PathSet, blocks_per_pixel, pixel_uniforms, sample_pathset, stream_key

__all__ = ["STDMap", "mmd2", "std_at", "std_map", "std_map_avg",
           "DIRECTION_LABELS"]

DIRECTION_LABELS = tuple(o.label for o in ORIENTATIONS)  # map axis-0 order


# ---------------------------------------------------------------------------
# Reference estimator

def _term_reference(a_vals, b_vals, kernel: KernelSpec):
    n = a_vals.shape[0]
    s = 0.0
    cnt = 0
    for j in range(n):
        for k in range(n):
            kv = kernel.evaluate(a_vals[j], b_vals[k])
            if kv is not None:
                s += kv
                cnt += 1
    return (s / cnt) if cnt else None


def mmd2(s_minus: PathSet, s_plus: PathSet, kernel: KernelSpec,
         return_raw: bool = False):
    """Squared discrepancy between two path sets, or None when undefined.

    Full n-squared double sums per term, no shortcuts — this is the semantic
    reference (and deliberately makes mmd2(S, S) an exact FP zero).  Small
    negative values are clamped to 0 unless return_raw is set.
    """
    if s_minus.n != s_plus.n:
        raise ParameterError(
            f"path sets differ in n: {s_minus.n} vs {s_plus.n}")
    t_pp = _term_reference(s_plus.values, s_plus.values, kernel)
    t_mm = _term_reference(s_minus.values, s_minus.values, kernel)
    t_pm = _term_reference(s_plus.values, s_minus.values, kernel)
    if t_pp is None or t_mm is None or t_pm is None:
        return None
    raw = t_pp + t_mm - 2.0 * t_pm
    return raw if return_raw else max(0.0, raw)


def _prepare_field(f: Field, kernel: KernelSpec) -> Field:
    if kernel.color:
        if f.channels != 3:
            raise ParameterError(f"kernel {kernel.kind!r} needs an RGB field")
        return f
    return f.to_gray() if f.channels == 3 else f


def std_at(f: Field, center, models: ModelSet, kernel: KernelSpec,
           n: int, seed: int, run: int = 0):
    """Reference per-pixel discrepancy; None at missing/unevaluable pixels."""
    f = _prepare_field(f, kernel)
    cx, cy = center
    if f.get(cx, cy) is None:
        return None
    d2s = []
    for orient in ORIENTATIONS:
        mp, mm = models.pair(orient.label)
        sp = sample_pathset(mp, f, center, n, seed, run)
        sm = sample_pathset(mm, f, center, n, seed, run)
        v = mmd2(sm, sp, kernel)
        if v is not None:
            d2s.append(v)
    if not d2s:
        return None
    return math.sqrt(sum(d2s) / len(d2s))


# ---------------------------------------------------------------------------
# Production map

@dataclass
class STDMap:
    """Per-pixel discrepancy aligned with the input field.

    std[y, x] is NaN where undefined; d[k] holds the per-direction
    discrepancy (square root of the clamped d^2) in DIRECTION_LABELS order.
    """

    std: np.ndarray
    d: np.ndarray                 # (4, H, W)
    mask: np.ndarray              # input presence
    lam: float
    kappa: float
    n: int
    seed: int
    kernel_kind: str
    runs: tuple = (0,)
    clamp_count: int = 0
    min_raw: float = 0.0          # most negative raw d^2 seen (0 if none)
    undefined_pixels: int = 0     # present pixels with no defined direction
    wall_time: float = 0.0

    def diagnostics_text(self) -> str:
        lines = [
            f"lambda={self.lam!r}", f"kappa={self.kappa!r}", f"n={self.n}",
            f"runs={len(self.runs)}", f"seed={self.seed}",
            f"kernel={self.kernel_kind}",
            f"clamp_count={self.clamp_count}", f"min_raw_d2={self.min_raw!r}",
            f"undefined_pixels={self.undefined_pixels}",
            f"wall_time_s={self.wall_time:.3f}",
        ]
        return "\n".join(lines) + "\n"


def _quantize(img: np.ndarray):
    """(uniq, ids_img, lut) when the raster has few distinct values, else None.

    ids are indices into uniq; NaN maps past the end (searchsorted sorts NaN
    last), which is exactly the missing id.  lut[i, j] = (uniq_i - uniq_j)^2.
    """
    finite = img[np.isfinite(img)]
    uniq = np.unique(finite)
    if uniq.size == 0 or uniq.size > 255:
        return None
    ids = np.searchsorted(uniq, img).astype(np.uint8)
    diff = uniq[:, None] - uniq[None, :]
    return uniq, ids, diff * diff


def _chunk_ranges(total: int, n: int, m_max: int):
    # chunk size from a fixed memory budget only — never from thread count,
    # so the chunk layout (and every FP sum) is schedule-independent
    per_pixel = blocks_per_pixel(n, m_max) * 4 * 8
    size = int(24e6 // max(per_pixel, 1))
    size = max(64, min(8192, size))
    return [(a, min(a + size, total)) for a in range(0, total, size)]


def std_map(f: Field, lam: float, kappa: float, n: int = 500, seed: int = 0,
            kernel_kind: str = "gray", *, run: int = 0, threads: int = 1,
            cache_dir: str | None = None,
            models: ModelSet | None = None) -> STDMap:
    """Discrepancy map of a whole field at scales (lam, kappa), one run.

    Deterministic in (field, lam, kappa, n, seed, run, kernel_kind) — thread
    count and chunking cannot change any output bit.
    """
    t0 = time.time()
    kernel = KernelSpec(kernel_kind, kappa)
    if n < 1:
        raise ParameterError(f"need n >= 1 paths, got {n}")
    f = _prepare_field(f, kernel)
    if models is None:
        models = build_model_set(lam, cache_dir=cache_dir)
    h, w = f.height, f.width
    mask = f.mask

    if kernel.color:
        lab_img = rgb_to_lab(f.values)
        lab_img[~mask] = np.nan
        quant = None
    else:
        img = f.values  # NaN already marks missing
        quant = _quantize(img)

    m_by_label = {o.label: models.models[(o.label, "+")].walk_length
                  for o in ORIENTATIONS}
    m_max = max(m_by_label.values())
    bits = (max(1, int(np.ceil(np.log2(quant[0].size + 1))))
            if quant is not None else 0)
    # sequence-dedup eligibility per orientation (walk lengths differ)
    use_ids = {lbl: quant is not None and bits * m <= 63
               for lbl, m in m_by_label.items()}
    d2 = np.full((4, h * w), np.nan)
    chunks = _chunk_ranges(h * w, n, m_max)
    keys = {(o.label, s): stream_key(seed, lam, run, o.label, s)
            for o in ORIENTATIONS for s in "+-"}

    # per-orientation prepared model arrays
    prep = {}
    for o in ORIENTATIONS:
        for s in "+-":
            mdl = models.models[(o.label, s)]
            cdf = np.cumsum(mdl.limit_prob)
            cdf[-1] = 1.0
            cum_t = np.cumsum(mdl.trans_prob, axis=1)
            cum_t[:, -1] = 1.0
            prep[(o.label, s)] = (cdf, cum_t, mdl.targets,
                                  np.ascontiguousarray(mdl.states[:, 0]),
                                  np.ascontiguousarray(mdl.states[:, 1]))

    flat_mask = mask.ravel()

    def do_chunk(rng_pair):
        p0, p1 = rng_pair
        present = np.nonzero(flat_mask[p0:p1])[0]
        if present.size == 0:
            return 0, 0.0
        cx = ((p0 + present) % w).astype(np.int64)
        cy = ((p0 + present) // w).astype(np.int64)
        negc = 0
        negmin = 0.0
        for oi, o in enumerate(ORIENTATIONS):
            m = m_by_label[o.label]
            ids_path = use_ids[o.label]
            vals = {}
            for s in "+-":
                cdf, cum_t, targets, offx, offy = prep[(o.label, s)]
                u = pixel_uniforms(keys[(o.label, s)], p0, p1 - p0, n, m)
                u = u[present]
                if kernel.color:
                    out = np.empty((present.size, n, m, 3))
                    _core.walk_values_vec3(u, n, m, cdf, cum_t, targets,
                                           offx, offy, lab_img, cx, cy, out)
                elif ids_path:
                    out = np.empty((present.size, n, m), dtype=np.uint8)
                    _core.walk_values_ids(u, n, m, cdf, cum_t, targets,
                                          offx, offy, quant[1],
                                          np.uint8(quant[0].size), cx, cy, out)
                else:
                    out = np.empty((present.size, n, m))
                    _core.walk_values_f64(u, n, m, cdf, cum_t, targets,
                                          offx, offy, img, cx, cy, out)
                vals[s] = out
            res = np.empty(present.size)
            if kernel.color:
                _core.mmd2_plain_vec3(vals["+"], vals["-"], kappa,
                                      kernel.kind == "de2000", res)
            elif ids_path:
                kp = np.empty((present.size, n), dtype=np.int64)
                km = np.empty((present.size, n), dtype=np.int64)
                _core.pack_keys(vals["+"], bits, kp)
                _core.pack_keys(vals["-"], bits, km)
                _core.mmd2_dedup(kp, km, m, bits, np.int64(quant[0].size),
                                 quant[2], kappa, res)
            else:
                _core.mmd2_plain_f64(vals["+"], vals["-"], kappa, res)
            neg = res < 0.0
            if neg.any():
                negc += int(neg.sum())
                negmin = min(negmin, float(res[neg].min()))
            d2[oi, p0 + present] = res
        return negc, negmin

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            stats = list(ex.map(do_chunk, chunks))
    else:
        stats = [do_chunk(c) for c in chunks]

    clamp_count = sum(s[0] for s in stats)
    min_raw = min((s[1] for s in stats), default=0.0)
    d2 = d2.reshape(4, h, w)
    np.clip(d2, 0.0, None, out=d2)  # NaN passes through untouched
    defined = np.isfinite(d2)
    cnt = defined.sum(axis=0)
    std2 = np.where(cnt > 0, np.nansum(np.where(defined, d2, 0.0), axis=0), np.nan)
    std = np.sqrt(std2 / np.where(cnt > 0, cnt, 1))
    std[~mask] = np.nan
    undefined = int((mask & (cnt == 0)).sum())
    return STDMap(std=std, d=np.sqrt(d2), mask=mask, lam=float(lam),
                  kappa=float(kappa), n=n, seed=seed, kernel_kind=kernel_kind,
                  runs=(run,), clamp_count=clamp_count, min_raw=min_raw,
                  undefined_pixels=undefined, wall_time=time.time() - t0)


def std_map_avg(f: Field, lam: float, kappa: float, n: int = 500,
                runs: int = 1, seed: int = 0, kernel_kind: str = "gray", *,
                threads: int = 1, cache_dir: str | None = None,
                models: ModelSet | None = None) -> STDMap:
    """Pixelwise average of `runs` independent maps (distinct run streams).

    A pixel's average covers the runs where it was defined; the per-direction
    d maps average the same way.  Averaging repetitions trades wall time for
    Monte-Carlo variance without touching any one run's determinism.
    """
    if runs < 1:
        raise ParameterError(f"need runs >= 1, got {runs}")
    t0 = time.time()
    sum_std = cnt_std = sum_d = cnt_d = None
    clamp = 0
    min_raw = 0.0
    first = None
    for r in range(runs):
        mp = std_map(f, lam, kappa, n=n, seed=seed, kernel_kind=kernel_kind,
                     run=r, threads=threads, cache_dir=cache_dir, models=models)
        if first is None:
            first = mp
            sum_std = np.zeros_like(mp.std)
            cnt_std = np.zeros(mp.std.shape, dtype=np.int64)
            sum_d = np.zeros_like(mp.d)
            cnt_d = np.zeros(mp.d.shape, dtype=np.int64)
        ok = np.isfinite(mp.std)
        sum_std[ok] += mp.std[ok]
        cnt_std += ok
        okd = np.isfinite(mp.d)
        sum_d[okd] += mp.d[okd]
        cnt_d += okd
        clamp += mp.clamp_count
        min_raw = min(min_raw, mp.min_raw)
    std = np.where(cnt_std > 0, sum_std / np.maximum(cnt_std, 1), np.nan)
    d = np.where(cnt_d > 0, sum_d / np.maximum(cnt_d, 1), np.nan)
    undefined = int((first.mask & (cnt_std == 0)).sum())
    return STDMap(std=std, d=d, mask=first.mask, lam=float(lam),
                  kappa=float(kappa), n=n, seed=seed, kernel_kind=kernel_kind,
                  runs=tuple(range(runs)), clamp_count=clamp, min_raw=min_raw,
                  undefined_pixels=undefined, wall_time=time.time() - t0)
