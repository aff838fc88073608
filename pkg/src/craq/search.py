"""Exhaustive grid search over the regularization weights."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .detect import DEFAULT_GENERATOR, DEFAULT_PRIOR, detect_patch
from .energy import EnergyParams
from .evaluation import f1_score
from .imaging import load_image, load_mask
from .optimizer import AdamConfig
from .synthetic import read_manifest

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("lambda_preg", "lambda_creg", "lambda_cp", "epsilon", "mean_f1", "n_images", "n_failed")


@dataclass
class GridSpec:
    lambda_preg: list[float] = field(default_factory=lambda: [1.0])
    lambda_creg: list[float] = field(default_factory=lambda: [0.1])
    lambda_cp: list[float] = field(default_factory=lambda: [0.5])
    epsilon: list[float] = field(default_factory=lambda: [0.005])
    manifest: str | None = None
    adam: AdamConfig = field(default_factory=AdamConfig)
    generator: str = DEFAULT_GENERATOR
    prior: str = DEFAULT_PRIOR
    cache_dir: str | None = None

    def __post_init__(self):
        for name in ("lambda_preg", "lambda_creg", "lambda_cp", "epsilon"):
            values = getattr(self, name)
            if not values:
                raise ValueError(f"candidate list {name} is empty")
            if any(v < 0 for v in values):
                raise ValueError(f"candidates for {name} must be non-negative")
        if any(e <= 0 for e in self.epsilon):
            raise ValueError("epsilon candidates must be positive")

    def combinations(self) -> list[EnergyParams]:
        """Deduplicated combinations in a fixed (sorted) order."""
        combos = sorted(set(itertools.product(self.lambda_preg, self.lambda_creg, self.lambda_cp, self.epsilon)))
        return [EnergyParams(*c) for c in combos]


@dataclass(frozen=True)
class GridRow:
    params: EnergyParams
    mean_f1: float
    n_images: int
    n_failed: int

    def as_csv_row(self):
        p = self.params
        return [repr(p.lambda_preg), repr(p.lambda_creg), repr(p.lambda_cp), repr(p.epsilon),
                repr(self.mean_f1), self.n_images, self.n_failed]


def _rank_key(row: GridRow):
    p = row.params
    return (-row.mean_f1, p.lambda_cp, p.lambda_creg, p.lambda_preg, p.epsilon)


def _cache_key(params: EnergyParams, image, mask, spec: GridSpec) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"params": asdict(params), "adam": asdict(spec.adam),
                         "generator": spec.generator, "prior": spec.prior}, sort_keys=True).encode())
    h.update(np.ascontiguousarray(image, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(mask, dtype=np.float64).tobytes())
    return h.hexdigest()


def evaluate_params(params: EnergyParams, image, mask, adam: AdamConfig | None = None,
                    generator: str = DEFAULT_GENERATOR, prior: str = DEFAULT_PRIOR) -> float:
    """F1 of one detect run against its mask."""
    result = detect_patch(image, params, adam, generator, prior)
    return f1_score(result.binary, mask)


def load_evaluation_set(manifest) -> list[tuple[np.ndarray, np.ndarray]]:
    manifest = Path(manifest)
    base = manifest.parent
    return [(load_image(base / r["out"]), load_mask(base / r["mask"])) for r in read_manifest(manifest)]


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("CRAQ_THREADS", "1")))
    except ValueError:
        return 1


def grid_search(spec: GridSpec, images=None) -> list[GridRow]:
    """Score every parameter combination by mean F1 and rank them.

    ``images`` is a list of ``(image, mask)`` pairs; when omitted the set is
    read from ``spec.manifest``. Failed solves are excluded from the mean and
    counted in ``n_failed``. Ties rank the smaller ``(lambda_cp, lambda_creg,
    lambda_preg, epsilon)`` first.
    """
    if images is None:
        if spec.manifest is None:
            raise ValueError("grid search needs an evaluation set or a manifest")
        images = load_evaluation_set(spec.manifest)
    if not images:
        raise ValueError("evaluation set is empty")
    cache_dir = Path(spec.cache_dir) if spec.cache_dir else None
    if cache_dir:
        cache_dir.mkdir(parents=True, exist_ok=True)

    def run(job):
        params, (image, mask) = job
        key = _cache_key(params, image, mask, spec) if cache_dir else None
        if key and (cache_dir / key).exists():
            return float((cache_dir / key).read_text())
        try:
            score = evaluate_params(params, image, mask, spec.adam, spec.generator, spec.prior)
        except (ValueError, FloatingPointError) as exc:
            log.warning("solve failed for %s: %s", params, exc)
            return None
        if key:
            (cache_dir / key).write_text(repr(score))
        return score

    combos = spec.combinations()
    jobs = [(p, pair) for p in combos for pair in images]
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        scores = list(pool.map(run, jobs))

    rows = []
    n = len(images)
    for i, params in enumerate(combos):
        chunk = [s for s in scores[i * n:(i + 1) * n] if s is not None]
        mean = float(np.mean(chunk)) if chunk else float("nan")
        rows.append(GridRow(params, mean, len(chunk), n - len(chunk)))
    rows.sort(key=lambda r: (np.isnan(r.mean_f1),) + _rank_key(r))
    return rows


def write_results_csv(rows: list[GridRow], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv_row())
