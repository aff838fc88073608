"""End-to-end crack detection: solve per tile, threshold, merge."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyParams
from .evaluation import TilingSpec, merge_binary, merge_soft, tile_image
from .imaging import binarize, otsu_threshold
from .optimizer import AdamConfig, IterationTrace, crack_map, solve
from .priors import FileBackedPrior, make_crack_prior, make_generator

log = logging.getLogger(__name__)

DEFAULT_GENERATOR = "bilinear:4"
DEFAULT_PRIOR = "line-filter"


@dataclass(frozen=True)
class DetectConfig:
    params: EnergyParams = field(default_factory=EnergyParams)
    adam: AdamConfig = field(default_factory=AdamConfig)
    tiling: TilingSpec = field(default_factory=TilingSpec)
    generator: str = DEFAULT_GENERATOR
    prior: str = DEFAULT_PRIOR


@dataclass
class PatchResult:
    soft: np.ndarray
    binary: np.ndarray
    threshold: float
    trace: IterationTrace


@dataclass
class DetectionResult:
    soft: np.ndarray
    binary: np.ndarray
    tiles: list[tuple[tuple[int, int], PatchResult]]

    @property
    def traces(self) -> list[IterationTrace]:
        return [res.trace for _, res in self.tiles]


def _generator_factor(name: str) -> int:
    kind, _, arg = name.partition(":")
    return int(arg or 4) if kind == "bilinear" else 1


def _pad_to_multiple(arr, factor):
    h, w = arr.shape[:2]
    ph, pw = -h % factor, -w % factor
    if not (ph or pw):
        return arr
    widths = [(0, ph), (0, pw)] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(arr, widths, mode="symmetric")


def detect_patch(image, params: EnergyParams | None = None, adam: AdamConfig | None = None,
                 generator: str = DEFAULT_GENERATOR, prior=DEFAULT_PRIOR) -> PatchResult:
    """Decompose one patch and threshold ``1 - v`` with Otsu.

    ``prior`` is a prior name or a ready-made prior map (frozen). Shapes not
    divisible by a bilinear factor are padded by reflection and cropped back.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    factor = _generator_factor(generator)
    padded = _pad_to_multiple(image, factor)
    G = make_generator(generator, padded.shape[:2])
    if isinstance(prior, np.ndarray):
        P = FileBackedPrior(_pad_to_multiple(prior, factor))
    else:
        P = make_crack_prior(prior, padded.shape[:2])
    state, trace = solve(padded, G, P, params, adam)
    soft = crack_map(state)[:h, :w]
    threshold = otsu_threshold(soft)
    return PatchResult(soft, binarize(soft, threshold), threshold, trace)


def detect(image, config: DetectConfig = DetectConfig(), workers: int = 1) -> DetectionResult:
    """Run detection on an image of any size.

    Images larger than the patch size are split into overlapping tiles; soft
    maps are averaged, per-tile Otsu masks are OR-merged. Tiles are solved
    independently, on ``workers`` threads.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    prior_map = None
    prior = config.prior
    if prior.startswith("file:"):
        prior_map = FileBackedPrior.from_file(prior[5:], (h, w)).map

    def run(item):
        tile, (r, c) = item
        th, tw = tile.shape[:2]
        tile_prior = prior_map[r:r + th, c:c + tw] if prior_map is not None else prior
        log.debug("tile at (%d, %d) of shape %s", r, c, tile.shape[:2])
        return (r, c), detect_patch(tile, config.params, config.adam, config.generator, tile_prior)

    tiles = tile_image(image, config.tiling)
    if workers > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, tiles))
    else:
        results = [run(t) for t in tiles]
    if len(results) == 1:
        only = results[0][1]
        return DetectionResult(only.soft, only.binary, results)
    soft = merge_soft([(res.soft, off) for off, res in results], (h, w))
    binary = merge_binary([(res.binary, off) for off, res in results], (h, w))
    return DetectionResult(soft, binary, results)


def global_binary(result: DetectionResult) -> np.ndarray:
    """Alternative readout: a single Otsu threshold on the merged soft map."""
    return binarize(result.soft, otsu_threshold(result.soft))

