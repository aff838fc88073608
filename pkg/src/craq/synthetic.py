"""Synthetic cracked-painting data.

Binary crack masks are alpha-composited onto crack-free patches. The crack
color is dark on bright patches and bright on dark ones, decided by the
patch's mean luminance. For tests and demos without external data, the
module also draws procedural painting-like patches and random-walk cracks.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imaging import ImageDecodeError, load_image, load_mask, save_image, to_grayscale

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")


@dataclass(frozen=True)
class CrackOverlaySpec:
    alpha: float = 0.8
    strength: float = 0.75
    polarity_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0.0 < self.strength <= 1.0:
            raise ValueError("strength must lie in (0, 1]")
        if not 0.0 <= self.polarity_threshold <= 1.0:
            raise ValueError("polarity_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class OverlayRanges:
    """Uniform sampling ranges for per-image overlay parameters."""

    alpha: tuple[float, float] = (0.6, 0.95)
    strength: tuple[float, float] = (0.5, 1.0)
    polarity_threshold: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "strength"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo <= hi <= 1.0:
                raise ValueError(f"{name} range must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})")
        if not 0.0 <= self.polarity_threshold <= 1.0:
            raise ValueError("polarity_threshold must lie in [0, 1]")


def crack_polarity(patch, threshold: float = 0.5) -> str:
    return "dark" if float(np.mean(to_grayscale(patch))) > threshold else "bright"


def composite_crack(patch, mask, spec: CrackOverlaySpec) -> np.ndarray:
    """Blend a binary crack mask into a color patch.

    Each masked pixel is moved toward the crack color (0 for dark cracks,
    1 for bright) by ``strength``, and the result is composited over the
    patch with opacity ``alpha``.
    """
    patch = np.asarray(patch, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if patch.shape[:2] != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match patch {patch.shape[:2]}")
    color = 0.0 if crack_polarity(patch, spec.polarity_threshold) == "dark" else 1.0
    blend = patch + spec.strength * (color - patch)
    m = spec.alpha * mask[..., None]
    out = (1.0 - m) * patch + m * blend
    out = np.clip(out, 0.0, 1.0)
    out[mask == 0] = patch[mask == 0]
    return out


def random_crack_mask(shape, rng: np.random.Generator, n_cracks: int | None = None,
                      max_width: int = 2) -> np.ndarray:
    """Random-walk cracks with curvature noise and occasional branches."""
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    if n_cracks is None:
        n_cracks = int(rng.integers(1, 4))
    walkers = []
    for _ in range(n_cracks):
        # start on the border so cracks traverse the patch
        side = int(rng.integers(4))
        t = rng.uniform(0.1, 0.9)
        start = [(0.0, t * (w - 1)), (h - 1.0, t * (w - 1)), (t * (h - 1), 0.0), (t * (h - 1), w - 1.0)][side]
        inward = [math.pi / 2, -math.pi / 2, 0.0, math.pi][side]
        walkers.append((start, inward + rng.normal(0.0, 0.5), 0))
    while walkers:
        (y, x), heading, depth = walkers.pop()
        width = int(rng.integers(1, max_width + 1))
        curvature = 0.0
        length = int(rng.integers(max(h, w) // 2, 2 * max(h, w)))
        for _ in range(length):
            yi, xi = int(round(y)), int(round(x))
            if not (0 <= yi < h and 0 <= xi < w):
                break
            mask[yi, xi] = True
            if width > 1:
                mask[max(yi - width // 2, 0):yi + (width + 1) // 2, max(xi - width // 2, 0):xi + (width + 1) // 2] = True
            curvature = 0.85 * curvature + rng.normal(0.0, 0.03)
            heading += curvature
            # half-pixel steps keep the walk 8-connected
            y += 0.5 * math.sin(heading)
            x += 0.5 * math.cos(heading)
            if depth < 2 and rng.random() < 0.004:
                walkers.append(((y, x), heading + rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.2), depth + 1))
    return mask.astype(np.float64)


def random_clean_patch(shape, rng: np.random.Generator) -> np.ndarray:
    """A smooth, painting-like color patch: a color gradient plus soft blobs and mild texture."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    base = rng.uniform(0.1, 0.9, size=3)
    slope = rng.normal(0.0, 0.15, size=(2, 3))
    img = base + yy[..., None] * slope[0] + xx[..., None] * slope[1]
    blobs = ndimage.gaussian_filter(rng.normal(size=(h, w, 3)), sigma=(max(h, w) / 8, max(h, w) / 8, 0))
    blobs /= np.abs(blobs).max() + 1e-12
    img += 0.12 * blobs
    texture = ndimage.gaussian_filter(rng.normal(size=(h, w)), sigma=1.5)
    img += 0.015 * texture[..., None] / (texture.std() + 1e-12)
    return np.clip(img, 0.0, 1.0)


def synthetic_sample(shape, rng: np.random.Generator, ranges: OverlayRanges = OverlayRanges()):
    """Draw one (cracked image, crack mask, clean patch, overlay spec) tuple."""
    clean = random_clean_patch(shape, rng)
    mask = random_crack_mask(shape, rng)
    spec = CrackOverlaySpec(
        alpha=float(rng.uniform(*ranges.alpha)),
        strength=float(rng.uniform(*ranges.strength)),
        polarity_threshold=ranges.polarity_threshold,
    )
    return composite_crack(clean, mask, spec), mask, clean, spec


def synthetic_suite(n: int, shape=(64, 64), seed: int = 0, ranges: OverlayRanges = OverlayRanges()):
    """Deterministic list of ``(image, mask)`` pairs."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        image, mask, _, _ = synthetic_sample(shape, rng, ranges)
        out.append((image, mask))
    return out


def _list_images(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def _resize_nearest(mask: np.ndarray, shape) -> np.ndarray:
    h, w = shape
    rows = (np.arange(h) * mask.shape[0] // h).clip(0, mask.shape[0] - 1)
    cols = (np.arange(w) * mask.shape[1] // w).clip(0, mask.shape[1] - 1)
    return mask[np.ix_(rows, cols)]


@dataclass
class DatasetManifest:
    records: list[dict]
    skipped: list[dict]

    @property
    def count(self) -> int:
        return len(self.records)

    def to_jsonl(self) -> str:
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        lines += [json.dumps({"skipped": s}, sort_keys=True) for s in self.skipped]
        return "".join(line + "\n" for line in lines)

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()


def generate_dataset(clean_dir, mask_dir, out_dir, ranges: OverlayRanges = OverlayRanges(),
                     seed: int = 0, manifest_name: str = "manifest.jsonl") -> DatasetManifest:
    """Composite a randomly chosen mask onto every clean patch.

    ``mask_dir=None`` (or a missing directory) switches to procedural
    random-walk masks. Outputs are ``<stem>.png`` (cracked image) and
    ``<stem>_mask.png`` under ``out_dir`` plus a JSON-lines manifest.
    Manifest paths are file names relative to their directories, so reruns
    into a different ``out_dir`` hash identically.
    """
    clean_dir, out_dir = Path(clean_dir), Path(out_dir)
    if not clean_dir.is_dir():
        raise FileNotFoundError(f"clean directory {clean_dir} does not exist")
    clean_paths = _list_images(clean_dir)
    if not clean_paths:
        raise ValueError(f"no images found in {clean_dir}")

    procedural = mask_dir is None or not Path(mask_dir).is_dir()
    mask_paths = [] if procedural else _list_images(Path(mask_dir))
    if not procedural and not mask_paths:
        raise ValueError(f"no masks found in {mask_dir}")
    if procedural:
        log.info("no mask directory; using procedural crack masks")

    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records, skipped = [], []
    for i, clean_path in enumerate(clean_paths):
        alpha = float(rng.uniform(*ranges.alpha))
        strength = float(rng.uniform(*ranges.strength))
        mask_choice = int(rng.integers(len(mask_paths))) if mask_paths else None
        item_seed = int(rng.integers(2**31))
        try:
            clean = load_image(clean_path)
            if procedural:
                mask = random_crack_mask(clean.shape[:2], np.random.default_rng(item_seed))
                mask_src = "procedural"
            else:
                mask_path = mask_paths[mask_choice]
                mask = load_mask(mask_path)
                mask_src = mask_path.name
                if mask.shape != clean.shape[:2]:
                    mask = _resize_nearest(mask, clean.shape[:2])
        except (ImageDecodeError, OSError) as exc:
            log.warning("skipping %s: %s", clean_path, exc)
            skipped.append({"clean": clean_path.name, "error": str(exc)})
            continue
        spec = CrackOverlaySpec(alpha, strength, ranges.polarity_threshold, item_seed)
        image = composite_crack(clean, mask, spec)
        stem = f"{i:05d}_{clean_path.stem}"
        out_name, mask_name = f"{stem}.png", f"{stem}_mask.png"
        save_image(image, out_dir / out_name)
        save_image(mask, out_dir / mask_name)
        records.append({
            "clean": clean_path.name,
            "mask": mask_name,
            "mask_source": mask_src,
            "out": out_name,
            "alpha": alpha,
            "strength": strength,
            "polarity": crack_polarity(clean, ranges.polarity_threshold),
            "seed": item_seed,
        })
    manifest = DatasetManifest(records, skipped)
    (out_dir / manifest_name).write_text(manifest.to_jsonl())
    return manifest


def read_manifest(path) -> list[dict]:
    path = Path(path)
    return [r for r in (json.loads(line) for line in path.read_text().splitlines() if line.strip())
            if "skipped" not in r]


def write_clean_patches(out_dir, n: int, shape=(64, 64), seed: int = 0) -> list[Path]:
    """Write procedural crack-free patches, for demos and tests."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n):
        p = out_dir / f"clean_{i:04d}.png"
        save_image(random_clean_patch(shape, rng), p)
        paths.append(p)
    return paths

