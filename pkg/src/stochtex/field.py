"""Raster value fields: loading, saving, normalization, missing data.

A Field couples a raster of scalar or RGB values with an explicit presence
mask and the physical value domain (lo, hi) the raw values live in.  All
computation downstream happens on values normalized to [0, 1]; the domain is
kept so results can be reported in physical units and so rasters round-trip.

Missing samples are first-class: the mask says which pixels exist, and the
normalized array additionally carries NaN at absent pixels so numeric kernels
can test validity without consulting the mask.

Supported formats
-----------------
pgm   binary P5 (8- or 16-bit big endian, '#' comments); ASCII P2 accepted
      on read.  Grayscale only, no missing data.
png   via Pillow; 8-bit L/RGB (RGBA alpha==0 becomes missing).
csv   comma-separated float raster, 'nan' (any case) or empty cell = missing.
      Lossless for float data; RGB not supported in csv.
"""

from __future__ import annotations

import csv as _csvmod
import os
import re

import numpy as np

from .errors import DataError, ParameterError

__all__ = ["Field", "load", "save_map", "load_map_csv"]


def _infer_format(path: str) -> str:
    ext = os.path.splitext(path)[1].lower().lstrip(".")
    if ext in ("pgm", "png", "csv"):
        return ext
    raise ParameterError(
        f"cannot infer format from {path!r}; pass format='pgm'|'png'|'csv'"
    )


class Field:
    """A raster of values in [0,1] with presence mask and value domain.

    Parameters
    ----------
    values : ndarray, shape (H, W) or (H, W, 3)
        Normalized values.  Entries at masked-out pixels are forced to NaN.
    mask : ndarray of bool, shape (H, W)
        True where a sample is present.
    domain : (float, float)
        Raw value domain (lo, hi), hi > lo.  Normalization is
        v_norm = (v_raw - lo) / (hi - lo).
    """

    def __init__(self, values, mask=None, domain=(0.0, 1.0)):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 2:
            self.channels = 1
        elif values.ndim == 3 and values.shape[2] == 3:
            self.channels = 3
        else:
            raise DataError(f"expected (H,W) or (H,W,3) array, got {values.shape}")
        lo, hi = float(domain[0]), float(domain[1])
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
            raise ParameterError(f"invalid value domain ({lo}, {hi}): need hi > lo")
        if mask is None:
            mask = np.isfinite(values).all(axis=-1) if self.channels == 3 \
                else np.isfinite(values)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != values.shape[:2]:
            raise DataError(f"mask shape {mask.shape} != raster {values.shape[:2]}")
        values = values.copy()
        values[~mask] = np.nan
        present = values[mask]
        ok = np.isfinite(present).all(axis=-1) if self.channels == 3 \
            else np.isfinite(present)
        if not ok.all():
            raise DataError("NaN at a pixel the mask marks as present")
        finite = present
        if finite.size and (np.nanmin(finite) < -1e-12 or np.nanmax(finite) > 1 + 1e-12):
            raise DataError(
                "normalized values outside [0,1]; check the value domain "
                f"(saw [{np.nanmin(finite):.6g}, {np.nanmax(finite):.6g}])"
            )
        self.values = values
        self.mask = mask
        self.domain = (lo, hi)

    # -- basic geometry ----------------------------------------------------

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def get(self, x: int, y: int):
        """Value at column x, row y; None if out of bounds or missing.

        Total over all integer coordinates: never raises.
        """
        if not (0 <= x < self.width and 0 <= y < self.height):
            return None
        if not self.mask[y, x]:
            return None
        v = self.values[y, x]
        return v.copy() if self.channels == 3 else float(v)

    # -- normalization -----------------------------------------------------

    @classmethod
    def from_raw(cls, raw, domain, mask=None) -> "Field":
        """Build a field from raw physical values by normalizing into [0,1]."""
        raw = np.asarray(raw, dtype=np.float64)
        lo, hi = float(domain[0]), float(domain[1])
        if hi <= lo:
            raise ParameterError(f"invalid value domain ({lo}, {hi}): need hi > lo")
        return cls((raw - lo) / (hi - lo), mask=mask, domain=(lo, hi))

    def denormalize(self) -> np.ndarray:
        """Raw physical values (NaN at missing pixels)."""
        lo, hi = self.domain
        return self.values * (hi - lo) + lo

    def to_gray(self) -> "Field":
        """Collapse RGB to scalar luminance (CIE Y of the sRGB values).

        Already-scalar fields are returned unchanged.  The result's domain is
        (0, 1) since luminance of normalized sRGB is itself in [0, 1].
        """
        if self.channels == 1:
            return self
        from .kernels import srgb_luminance

        y = np.full(self.mask.shape, np.nan)
        y[self.mask] = srgb_luminance(self.values[self.mask])
        return Field(y, mask=self.mask, domain=(0.0, 1.0))

    # -- persistence ---------------------------------------------------------

    def save(self, path: str, format: str | None = None) -> None:
        fmt = format or _infer_format(path)
        if fmt == "csv":
            if self.channels != 1:
                raise ParameterError("csv output is scalar-only")
            _write_csv(path, self.denormalize())
        elif fmt == "pgm":
            if self.channels != 1:
                raise ParameterError("pgm output is scalar-only")
            if not self.mask.all():
                raise ParameterError("pgm cannot represent missing pixels; use csv")
            lo, hi = self.domain
            maxval = 255 if hi - lo <= 255 else 65535
            px = np.rint(self.values * maxval)
            _write_pgm(path, np.clip(px, 0, maxval).astype(np.uint16), maxval)
        elif fmt == "png":
            _write_png(self, path)
        else:
            raise ParameterError(f"unknown format {fmt!r}")


def load(path: str, format: str | None = None, domain=None) -> Field:
    """Load a raster file into a Field.

    domain defaults to the format's natural range (pgm/png: (0, maxval));
    csv has none, so missing domain falls back to the finite data range.
    """
    fmt = format or _infer_format(path)
    try:
        return _load_dispatch(path, fmt, domain)
    except OSError as e:
        raise DataError(f"{path}: {e.strerror or e}") from None


def _load_dispatch(path: str, fmt: str, domain) -> Field:
    if fmt == "pgm":
        raw, maxval = _read_pgm(path)
        return Field.from_raw(raw, domain or (0.0, float(maxval)))
    if fmt == "png":
        return _read_png(path, domain)
    if fmt == "csv":
        raw = _read_csv(path)
        if domain is None:
            finite = raw[np.isfinite(raw)]
            if finite.size == 0:
                raise DataError(f"{path}: no finite values and no domain given")
            lo, hi = float(finite.min()), float(finite.max())
            if hi <= lo:
                raise DataError(
                    f"{path}: constant data; pass an explicit value domain"
                )
            domain = (lo, hi)
        return Field.from_raw(raw, domain)
    raise ParameterError(f"unknown format {fmt!r}")


# ---------------------------------------------------------------------------
# PGM

# no ^ anchor: Pattern.match(buf, pos) anchors at pos itself
_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\s*)*(\S+)")


def _read_pgm_tokens(buf: bytes, n: int, pos: int):
    # whitespace/comment-tolerant header tokenizer
    out = []
    for _ in range(n):
        m = _PGM_TOKEN.match(buf, pos)
        if not m:
            raise DataError("truncated pgm header")
        out.append(m.group(1))
        pos = m.end()
    return out, pos


def _read_pgm(path: str):
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] not in (b"P5", b"P2"):
        raise DataError(f"{path}: not a pgm file (magic {buf[:2]!r})")
    binary = buf[:2] == b"P5"
    try:
        (w, h, maxval), pos = _read_pgm_tokens(buf, 3, 2)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, DataError) as e:
        raise DataError(f"{path}: bad pgm header: {e}") from None
    if not (w > 0 and h > 0 and 0 < maxval < 65536):
        raise DataError(f"{path}: bad pgm dimensions {w}x{h} maxval {maxval}")
    if binary:
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2" if maxval > 255 else "u1")
        need = w * h * dtype.itemsize
        data = buf[pos:pos + need]
        if len(data) != need:
            raise DataError(f"{path}: pgm payload truncated "
                            f"({len(data)} of {need} bytes)")
        raw = np.frombuffer(data, dtype=dtype).reshape(h, w)
    else:
        lines = buf[pos:].split(b"\n")
        body = b" ".join(ln for ln in lines if not ln.lstrip().startswith(b"#"))
        vals = body.split()
        if len(vals) != w * h:
            raise DataError(f"{path}: expected {w*h} samples, got {len(vals)}")
        try:
            raw = np.array([int(v) for v in vals], dtype=np.uint32).reshape(h, w)
        except ValueError:
            raise DataError(f"{path}: non-integer sample in ascii pgm") from None
    if raw.max(initial=0) > maxval:
        raise DataError(f"{path}: sample exceeds declared maxval {maxval}")
    return raw.astype(np.float64), maxval


def _write_pgm(path: str, px: np.ndarray, maxval: int) -> None:
    h, w = px.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode())
        f.write(px.astype(">u2" if maxval > 255 else "u1").tobytes())


# ---------------------------------------------------------------------------
# CSV rasters

def _read_csv(path: str) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="") as f:
        for lineno, row in enumerate(_csvmod.reader(f), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue  # blank line
            vals = []
            for col, tok in enumerate(row, start=1):
                tok = tok.strip()
                if tok == "" or tok.lower() == "nan":
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(tok))
                except ValueError:
                    raise DataError(
                        f"{path}: line {lineno}, field {col}: "
                        f"not a number: {tok!r}"
                    ) from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DataError(
                    f"{path}: line {lineno}: {len(vals)} fields, expected {width}"
                )
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: empty csv raster")
    return np.asarray(rows, dtype=np.float64)


def _write_csv(path: str, raw: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        for row in raw:
            f.write(",".join("nan" if not np.isfinite(v) else repr(float(v))
                             for v in row))
            f.write("\n")


# ---------------------------------------------------------------------------
# PNG (Pillow)

def _read_png(path: str, domain):
    from PIL import Image

    with Image.open(path) as im:
        mode = im.mode
        if mode in ("RGBA", "LA", "P"):
            im = im.convert("RGBA")
            arr = np.asarray(im, dtype=np.float64)
            mask = arr[..., 3] > 0
            rgb = arr[..., :3]
            f = Field.from_raw(rgb, domain or (0.0, 255.0))
            return Field(np.where(mask[..., None], f.values, np.nan),
                         mask=mask & f.mask, domain=f.domain)
        if mode == "RGB":
            arr = np.asarray(im, dtype=np.float64)
            return Field.from_raw(arr, domain or (0.0, 255.0))
        if mode in ("L", "I;16", "I"):
            arr = np.asarray(im, dtype=np.float64)
            default = (0.0, 65535.0) if arr.max(initial=0) > 255 else (0.0, 255.0)
            return Field.from_raw(arr, domain or default)
        raise DataError(f"{path}: unsupported png mode {mode!r}")


def _write_png(field: Field, path: str) -> None:
    from PIL import Image

    if not field.mask.all():
        raise ParameterError("png output cannot represent missing pixels; use csv")
    px = np.clip(np.rint(field.values * 255), 0, 255).astype(np.uint8)
    Image.fromarray(px, mode="L" if field.channels == 1 else "RGB").save(path)


# ---------------------------------------------------------------------------
# Map output: float rasters in [0,1]-ish with NaN for "undefined here"

def save_map(values: np.ndarray, path: str, format: str | None = None) -> None:
    """Persist a float map (e.g. a discrepancy or PSNR map).

    csv is lossless.  pgm writes 16-bit with the affine mapping recorded in a
    `<path>.range.txt` sidecar; gray level 0 is reserved for NaN, data occupy
    1..65535.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ParameterError(f"maps are 2-d, got shape {values.shape}")
    fmt = format or _infer_format(path)
    if fmt == "csv":
        _write_csv(path, values)
        return
    if fmt != "pgm":
        raise ParameterError("maps support formats 'pgm' and 'csv'")
    finite = values[np.isfinite(values)]
    vmin = float(finite.min()) if finite.size else 0.0
    vmax = float(finite.max()) if finite.size else 0.0
    span = vmax - vmin
    if span <= 0:
        px = np.where(np.isfinite(values), 32768, 0).astype(np.uint16)
    else:
        scaled = np.rint((values - vmin) / span * 65534) + 1
        px = np.where(np.isfinite(values), scaled, 0).astype(np.uint16)
    _write_pgm(path, px, 65535)
    with open(path + ".range.txt", "w") as f:
        f.write(f"vmin={vmin!r}\nvmax={vmax!r}\nnan_level=0\n")


def load_map_csv(path: str) -> np.ndarray:
    return _read_csv(path)
