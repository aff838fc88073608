"""Image containers, discrete differential operators, thresholding and file I/O.

Fields are plain float64 numpy arrays. A scalar field has shape ``(h, w)``,
a color field ``(h, w, 3)``. Every operator here works on the two leading
axes, so per-channel operators accept either.
"""

from __future__ import annotations

from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image, UnidentifiedImageError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
N_BINS = 256
# Otsu bin k is centered on k/255 and spans ((k-0.5)/255, (k+0.5)/255]
BIN_LEVELS = np.arange(N_BINS) / (N_BINS - 1)
BIN_EDGES = (np.arange(N_BINS - 1) + 0.5) / (N_BINS - 1)


class ImageDecodeError(ValueError):
    """Raised when an image file cannot be decoded into an 8-bit field."""


class GradientPair(NamedTuple):
    dx: np.ndarray
    dy: np.ndarray


def as_color_field(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a (h, w, 3) color field, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("color field contains non-finite samples")
    return arr


def as_scalar_field(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a (h, w) scalar field, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("scalar field contains non-finite samples")
    return arr


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PPM/PGM into a ``(h, w, 3)`` field scaled to [0, 1].

    Grayscale images are replicated across the three channels. An alpha
    channel, if present, is dropped.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "P", "RGB", "RGBA", "LA", "1"):
                im = im.convert("RGB") if mode != "L" else im
                arr = np.asarray(im, dtype=np.uint8)
            else:
                raise ImageDecodeError(f"{path}: unsupported pixel mode {mode!r} (need 8-bit gray or RGB)")
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageDecodeError(f"{path}: cannot decode image ({exc})") from exc
    field = arr.astype(np.float64) / 255.0
    if field.ndim == 2:
        field = np.repeat(field[:, :, None], 3, axis=2)
    return field


def load_gray(path) -> np.ndarray:
    """Read an image as a scalar field. Gray files are returned bit-exact,
    color files are converted to luminance."""
    field = load_image(path)
    if np.array_equal(field[..., 0], field[..., 1]) and np.array_equal(field[..., 0], field[..., 2]):
        return field[..., 0].copy()
    return to_grayscale(field)


def load_mask(path) -> np.ndarray:
    """Read a binary mask file (255 = crack) as a {0, 1} scalar field."""
    return (load_gray(path) >= 0.5).astype(np.float64)


def to_bytes(field) -> np.ndarray:
    """Quantize [0, 1] samples to uint8, rounding half away from zero."""
    arr = np.clip(np.asarray(field, dtype=np.float64), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def save_image(field, path) -> None:
    arr = np.asarray(field, dtype=np.float64)
    if arr.ndim == 2:
        im = Image.fromarray(to_bytes(arr), mode="L")
    elif arr.ndim == 3 and arr.shape[2] == 3:
        im = Image.fromarray(to_bytes(arr), mode="RGB")
    else:
        raise ValueError(f"cannot save field of shape {arr.shape}")
    path = Path(path)
    suffix = path.suffix.lower()
    fmt = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM", ".pnm": "PPM"}.get(suffix, "PNG")
    try:
        im.save(path, format=fmt)
    except OSError as exc:
        raise OSError(f"{path}: cannot write image ({exc})") from exc


def to_grayscale(image) -> np.ndarray:
    """Rec.601 luminance of a color field."""
    return np.asarray(image, dtype=np.float64) @ LUMA_WEIGHTS


def grad_forward(field) -> GradientPair:
    """Forward differences with unit spacing; zero in the last column/row.

    ``dx`` differences along the width axis, ``dy`` along the height axis.
    Trailing channel axes are carried along.
    """
    f = np.asarray(field, dtype=np.float64)
    dx = np.zeros_like(f)
    dy = np.zeros_like(f)
    dx[:, :-1] = f[:, 1:] - f[:, :-1]
    dy[:-1] = f[1:] - f[:-1]
    return GradientPair(dx, dy)


def grad_adjoint(pair: GradientPair) -> np.ndarray:
    """Exact transpose of :func:`grad_forward` (a negative divergence)."""
    dx, dy = (np.asarray(a, dtype=np.float64) for a in pair)
    out = np.zeros_like(dx)
    out[:, :-1] -= dx[:, :-1]
    out[:, 1:] += dx[:, :-1]
    out[:-1] -= dy[:-1]
    out[1:] += dy[:-1]
    return out


def histogram_bins(field) -> np.ndarray:
    """Bin index of every sample: the number of bin edges strictly below it."""
    x = np.clip(np.asarray(field, dtype=np.float64), 0.0, 1.0)
    return np.searchsorted(BIN_EDGES, x, side="left")


def otsu_threshold(field) -> float:
    """Otsu threshold of a [0, 1] field on a fixed 256-bin histogram.

    Bins take their center level ``k/255`` as value. The threshold returned
    is the upper edge of the last bin of the lower class, so that
    ``field > threshold`` reproduces the class split exactly. Candidates
    range from the first to the last occupied bin; ties go to the smallest
    threshold. A constant field gets the upper edge of its own bin (capped
    at 1), hence an empty foreground.
    """
    counts = np.bincount(histogram_bins(field).ravel(), minlength=N_BINS)
    occupied = np.flatnonzero(counts)
    lo, hi = int(occupied[0]), int(occupied[-1])
    n_total = int(counts.sum())
    s_total = int(np.dot(np.arange(N_BINS), counts))

    # between-class variance is (N*S0 - N0*S)^2 / (N^2 * N0 * N1); compared exactly in integers
    best_k, best_num, best_den = lo, 0, 1
    n0 = s0 = 0
    for k in range(lo, hi):
        n0 += int(counts[k])
        s0 += k * int(counts[k])
        n1 = n_total - n0
        num = (n_total * s0 - n0 * s_total) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den
    return float(BIN_EDGES[best_k]) if best_k < N_BINS - 1 else 1.0


def binarize(field, threshold: float) -> np.ndarray:
    return (np.asarray(field, dtype=np.float64) > threshold).astype(np.float64)
