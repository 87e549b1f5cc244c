"""Sequence-comparison kernels and the colorimetry they ride on.

The similarity between two sampled value sequences s, t of nominal length m
is an inverse-quadratic kernel at data scale kappa:

    k(s, t) = 1 / (1 + (1/|C|) * sum_{i in C} (delta(s_i, t_i) / kappa)^2)

where C is the set of indices at which *both* sequences carry a value
(samples can be missing when a walk left the raster or hit a masked pixel).
With C empty the kernel is undefined and callers must drop the pair.
Normalizing by |C| rather than m keeps partially-observed comparisons on the
same scale as fully-observed ones.

delta is |s_i - t_i| for scalar data.  For RGB data two perceptual options
are provided, both scaled into roughly [0,1]:

    delta1(v, w) = ||Lab(v) - Lab(w)|| / 100        (Euclidean in CIELAB)
    delta2(v, w) = CIEDE2000(Lab(v), Lab(w)) / 100

Colorimetry is sRGB (IEC 61966-2-1 transfer curve) -> XYZ (D65) -> CIELAB.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

__all__ = [
    "KernelSpec", "k_scalar", "k_color",
    "srgb_to_linear", "srgb_luminance", "rgb_to_lab",
    "delta1", "delta2", "ciede2000", "KERNEL_KINDS",
]

KERNEL_KINDS = ("gray", "lab", "de2000")

# sRGB -> XYZ (D65, 2 degree observer); rows sum to the white point below
# (B_Y is 0.0721749, not the usual 0.0721750, so the Y row sums to exactly 1
#  and full white lands on L=100)
_M_RGB2XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721749],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE = np.array([0.95047, 1.0, 1.08883])


def srgb_to_linear(c):
    """Invert the sRGB transfer curve; c and result in [0,1]."""
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def srgb_luminance(rgb):
    """CIE Y (relative luminance, in [0,1]) of normalized sRGB triples."""
    lin = srgb_to_linear(rgb)
    return lin @ _M_RGB2XYZ[1]


def _lab_f(t):
    eps = (6.0 / 29.0) ** 3
    return np.where(t > eps, np.cbrt(t), t / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)


def rgb_to_lab(rgb):
    """Normalized sRGB (...,3) in [0,1] -> CIELAB (...,3), white D65."""
    rgb = np.asarray(rgb, dtype=np.float64)
    xyz = srgb_to_linear(rgb) @ _M_RGB2XYZ.T
    f = _lab_f(xyz / _WHITE)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def ciede2000(lab1, lab2):
    """CIEDE2000 color difference between Lab triples (kL=kC=kH=1).

    Vectorized over leading dimensions.  Follows the standard implementation
    notes (hue handling at the atan2 branch cut, gray-axis special cases).
    """
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    L1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    L2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    C1 = np.hypot(a1, b1)
    C2 = np.hypot(a2, b2)
    Cbar = 0.5 * (C1 + C2)
    c7 = Cbar ** 7
    G = 0.5 * (1.0 - np.sqrt(c7 / (c7 + 25.0 ** 7)))
    a1p = (1.0 + G) * a1
    a2p = (1.0 + G) * a2
    C1p = np.hypot(a1p, b1)
    C2p = np.hypot(a2p, b2)

    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0
    h1p = np.where((b1 == 0) & (a1p == 0), 0.0, h1p)
    h2p = np.where((b2 == 0) & (a2p == 0), 0.0, h2p)

    dLp = L2 - L1
    dCp = C2p - C1p
    zero_chroma = (C1p * C2p) == 0
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, dh)
    dh = np.where(dh < -180.0, dh + 360.0, dh)
    dh = np.where(zero_chroma, 0.0, dh)
    dHp = 2.0 * np.sqrt(C1p * C2p) * np.sin(np.radians(dh) / 2.0)

    Lbp = 0.5 * (L1 + L2)
    Cbp = 0.5 * (C1p + C2p)
    hsum = h1p + h2p
    habs = np.abs(h1p - h2p)
    hbp = np.where(habs <= 180.0, 0.5 * hsum,
                   np.where(hsum < 360.0, 0.5 * hsum + 180.0, 0.5 * hsum - 180.0))
    hbp = np.where(zero_chroma, hsum, hbp)

    T = (1.0
         - 0.17 * np.cos(np.radians(hbp - 30.0))
         + 0.24 * np.cos(np.radians(2.0 * hbp))
         + 0.32 * np.cos(np.radians(3.0 * hbp + 6.0))
         - 0.20 * np.cos(np.radians(4.0 * hbp - 63.0)))
    dtheta = 30.0 * np.exp(-(((hbp - 275.0) / 25.0) ** 2))
    cb7 = Cbp ** 7
    RC = 2.0 * np.sqrt(cb7 / (cb7 + 25.0 ** 7))
    Lm50sq = (Lbp - 50.0) ** 2
    SL = 1.0 + 0.015 * Lm50sq / np.sqrt(20.0 + Lm50sq)
    SC = 1.0 + 0.045 * Cbp
    SH = 1.0 + 0.015 * Cbp * T
    RT = -np.sin(np.radians(2.0 * dtheta)) * RC

    tL = dLp / SL
    tC = dCp / SC
    tH = dHp / SH
    return np.sqrt(tL * tL + tC * tC + tH * tH + RT * tC * tH)


def delta1(v, w):
    """Euclidean CIELAB distance of two sRGB triples, scaled by 1/100."""
    d = rgb_to_lab(v) - rgb_to_lab(w)
    return np.sqrt(np.sum(d * d, axis=-1)) / 100.0


def delta2(v, w):
    """CIEDE2000 distance of two sRGB triples, scaled by 1/100."""
    return ciede2000(rgb_to_lab(v), rgb_to_lab(w)) / 100.0


def k_scalar(s, t, kappa: float):
    """Inverse-quadratic kernel on scalar sequences; None if no overlap.

    NaN marks a missing sample.  Only indices valid in both sequences enter,
    and the sum is normalized by their count.
    """
    if kappa <= 0:
        raise ParameterError(f"kappa must be positive, got {kappa}")
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    common = np.isfinite(s) & np.isfinite(t)
    c = int(common.sum())
    if c == 0:
        return None
    d = (s[common] - t[common]) / kappa
    return 1.0 / (1.0 + float(d @ d) / c)


def k_color(s, t, kappa: float, delta=delta1):
    """Color variant of k_scalar on (m,3) sRGB sequences.

    A sample is valid when its whole triple is finite; delta is one of
    delta1/delta2 (or any callable mapping two (k,3) arrays to distances).
    """
    if kappa <= 0:
        raise ParameterError(f"kappa must be positive, got {kappa}")
    s = np.asarray(s, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    common = np.isfinite(s).all(axis=-1) & np.isfinite(t).all(axis=-1)
    c = int(common.sum())
    if c == 0:
        return None
    d = delta(s[common], t[common]) / kappa
    return 1.0 / (1.0 + float(d @ d) / c)


@dataclass(frozen=True)
class KernelSpec:
    """Which kernel to run and at what data scale.

    kind: 'gray' (scalar values), 'lab' (RGB, Euclidean-Lab delta) or
    'de2000' (RGB, CIEDE2000 delta).
    """

    kind: str = "gray"
    kappa: float = 0.1

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ParameterError(
                f"unknown kernel {self.kind!r}; choose from {KERNEL_KINDS}")
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise ParameterError(f"kappa must be positive, got {self.kappa}")

    @property
    def color(self) -> bool:
        return self.kind != "gray"

    def evaluate(self, s, t):
        """k(s,t), or None when the sequences share no valid index."""
        if self.kind == "gray":
            return k_scalar(s, t, self.kappa)
        return k_color(s, t, self.kappa,
                       delta=delta1 if self.kind == "lab" else delta2)
