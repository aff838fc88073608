"""Detection metrics and overlapping-tile processing of large images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float:
        detected = self.tp + self.fp
        return self.tp / detected if detected else 1.0

    @property
    def recall(self) -> float:
        actual = self.tp + self.fn
        return self.tp / actual if actual else 1.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 1.0


def _pair(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs truth {truth.shape}")
    return pred, truth


def confusion(pred, truth) -> ConfusionCounts:
    pred, truth = _pair(pred, truth)
    p, t = pred > 0.5, truth > 0.5
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, fn, int(p.size) - tp - fp - fn)


def f1_score(pred, truth) -> float:
    """Pixel F1, ``2 tp / (2 tp + fp + fn)``; two empty maps score 1."""
    return confusion(pred, truth).f1


def bce_metric(pred_soft, truth) -> float:
    """Mean binary cross-entropy of a soft crack probability map against a mask."""
    pred, truth = _pair(pred_soft, truth)
    p = np.clip(pred.astype(np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = truth.astype(np.float64)
    return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))


def l1_metric(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sum(np.abs(a.astype(np.float64) - b.astype(np.float64))))


@dataclass(frozen=True)
class TilingSpec:
    patch_size: int = 512
    overlap: int = 64

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError("patch_size must be positive")
        if not 0 <= self.overlap < self.patch_size:
            raise ValueError("overlap must satisfy 0 <= overlap < patch_size")

    @property
    def stride(self) -> int:
        return self.patch_size - self.overlap


def tile_offsets(length: int, patch: int, stride: int) -> list[int]:
    """Start positions along one axis; the last tile is shifted inward to end at the edge."""
    if length <= patch:
        return [0]
    offsets = [0]
    while offsets[-1] + patch < length:
        offsets.append(min(offsets[-1] + stride, length - patch))
    return offsets


def tile_image(image, spec: TilingSpec = TilingSpec()):
    """Split an image into full-size overlapping tiles.

    Returns a list of ``(tile, (row, col))``. Axes shorter than the patch
    size are covered by a single tile spanning the whole axis.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    ph, pw = min(spec.patch_size, h), min(spec.patch_size, w)
    tiles = []
    for r in tile_offsets(h, spec.patch_size, spec.stride):
        for c in tile_offsets(w, spec.patch_size, spec.stride):
            tiles.append((image[r:r + ph, c:c + pw], (r, c)))
    return tiles


def _accumulate(tiles, shape):
    total = np.zeros(shape, dtype=np.float64)
    count = np.zeros(shape, dtype=np.int64)
    for tile, (r, c) in tiles:
        tile = np.asarray(tile, dtype=np.float64)
        th, tw = tile.shape[:2]
        total[r:r + th, c:c + tw] += tile
        count[r:r + th, c:c + tw] += 1
    if np.any(count == 0):
        missing = np.argwhere(count == 0)[0]
        raise ValueError(f"tiles do not cover pixel {tuple(int(i) for i in missing)}")
    return total, count


def merge_soft(tiles, shape) -> np.ndarray:
    """Average overlapping soft maps.

    Uses a running mean, so pixels where every covering tile agrees get that
    value back bit-exactly (a plain sum / count does not).
    """
    shape = tuple(shape)
    mean = np.zeros(shape, dtype=np.float64)
    count = np.zeros(shape[:2], dtype=np.int64)
    for tile, (r, c) in tiles:
        tile = np.asarray(tile, dtype=np.float64)
        th, tw = tile.shape[:2]
        count[r:r + th, c:c + tw] += 1
        k = count[r:r + th, c:c + tw].reshape((th, tw) + (1,) * (tile.ndim - 2))
        window = mean[r:r + th, c:c + tw]
        window += (tile - window) / k
    if np.any(count == 0):
        missing = np.argwhere(count == 0)[0]
        raise ValueError(f"tiles do not cover pixel {tuple(int(i) for i in missing)}")
    return mean


def merge_binary(tiles, shape) -> np.ndarray:
    """Logical OR of overlapping binary maps."""
    positive = [((np.asarray(t) > 0.5).astype(np.float64), off) for t, off in tiles]
    total, _ = _accumulate(positive, tuple(shape))
    return (total > 0).astype(np.float64)
