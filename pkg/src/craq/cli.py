"""Command-line entry point: ``craq {detect,synth,eval,gridsearch,gradcheck}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detect import DEFAULT_GENERATOR, DEFAULT_PRIOR, DetectConfig, detect
from .energy import EnergyParams
from .evaluation import TilingSpec, bce_metric, confusion
from .gradcheck import run_gradcheck
from .imaging import load_gray, load_image, load_mask, save_image
from .optimizer import AdamConfig, write_trace_csv
from .search import GridSpec, grid_search, write_results_csv
from .synthetic import IMAGE_SUFFIXES, OverlayRanges, generate_dataset

log = logging.getLogger("craq")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
GRADCHECK_TOLERANCE = 1e-3
OVERLAY_COLOR = (1.0, 0.0, 0.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _from_dict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise UsageError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise UsageError(f"{where}: unknown keys {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{where}: {exc}") from exc


@dataclass
class RunConfig:
    """Everything a detect run needs. Precedence: flag > config file > default."""

    params: EnergyParams = field(default_factory=EnergyParams)
    adam: AdamConfig = field(default_factory=AdamConfig)
    tiling: TilingSpec = field(default_factory=TilingSpec)
    generator: str = DEFAULT_GENERATOR
    prior: str = DEFAULT_PRIOR
    seed: int = 0

    SECTIONS = {"params": EnergyParams, "adam": AdamConfig, "tiling": TilingSpec}

    @classmethod
    def from_dict(cls, data: dict, where: str = "config") -> "RunConfig":
        if not isinstance(data, dict):
            raise UsageError(f"{where}: expected a JSON object")
        unknown = sorted(set(data) - {"params", "adam", "tiling", "generator", "prior", "seed"})
        if unknown:
            raise UsageError(f"{where}: unknown keys {', '.join(unknown)}")
        cfg = cls()
        for key, section in cls.SECTIONS.items():
            if key in data:
                setattr(cfg, key, _from_dict(section, data[key], f"{where}.{key}"))
        for key in ("generator", "prior"):
            if key in data:
                setattr(cfg, key, str(data[key]))
        if "seed" in data:
            cfg.seed = int(data["seed"])
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"{path}: cannot read config ({exc})") from exc
        return cls.from_dict(data, str(path))

    def apply_flags(self, args) -> "RunConfig":
        try:
            if args.generator is not None:
                self.generator = args.generator
            if args.prior is not None:
                self.prior = args.prior
            if args.patch is not None or args.overlap is not None:
                patch = args.patch if args.patch is not None else self.tiling.patch_size
                overlap = args.overlap if args.overlap is not None else self.tiling.overlap
                self.tiling = TilingSpec(patch, overlap)
            if args.iters is not None:
                self.adam = dataclasses.replace(self.adam, iterations=args.iters)
            if args.paper_verbatim_adam:
                self.adam = dataclasses.replace(self.adam, paper_verbatim_mode=True)
            if args.seed is not None:
                self.seed = args.seed
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        return self

    def detect_config(self) -> DetectConfig:
        return DetectConfig(self.params, self.adam, self.tiling, self.generator, self.prior)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("CRAQ_THREADS", "1")))
    except ValueError:
        return 1


def overlay(image, binary) -> np.ndarray:
    out = np.array(image, dtype=np.float64, copy=True)
    out[binary > 0.5] = OVERLAY_COLOR
    return out


def cmd_detect(args) -> int:
    cfg = RunConfig.from_file(args.params) if args.params else RunConfig()
    cfg.apply_flags(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in args.inputs:
        path = Path(path)
        image = load_image(path)
        result = detect(image, cfg.detect_config(), workers=worker_count())
        stem = path.stem
        save_image(result.soft, out_dir / f"{stem}_soft.png")
        save_image(result.binary, out_dir / f"{stem}_binary.png")
        save_image(overlay(image, result.binary), out_dir / f"{stem}_overlay.png")
        if len(result.tiles) == 1:
            write_trace_csv(result.traces[0], out_dir / f"{stem}_trace.csv")
        else:
            for (r, c), res in result.tiles:
                write_trace_csv(res.trace, out_dir / f"{stem}_trace_r{r}_c{c}.csv")
        print(f"{path}: {int(result.binary.sum())} crack pixels, {len(result.tiles)} tile(s) -> {out_dir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        ranges = OverlayRanges(tuple(args.alpha), tuple(args.strength), args.polarity_threshold)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    manifest = generate_dataset(args.clean_dir, args.masks, args.out, ranges, args.seed)
    source = "procedural masks" if manifest.records and manifest.records[0]["mask_source"] == "procedural" else args.masks
    print(f"wrote {manifest.count} images ({source}); skipped {len(manifest.skipped)}; "
          f"manifest sha256 {manifest.digest()}")
    return EXIT_OK


def _image_names(directory: Path) -> set[str]:
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    return {p.name for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES}


def cmd_eval(args) -> int:
    pred_dir, truth_dir = Path(args.pred_dir), Path(args.truth_dir)
    preds, truths = _image_names(pred_dir), _image_names(truth_dir)
    missing = sorted(preds ^ truths)
    if missing:
        print(f"error: unmatched files: {', '.join(missing)}", file=sys.stderr)
        return EXIT_RUNTIME
    if not preds:
        print("error: no images to evaluate", file=sys.stderr)
        return EXIT_RUNTIME
    per_image = {}
    for name in sorted(preds):
        pred, truth = load_mask(pred_dir / name), load_mask(truth_dir / name)
        counts = confusion(pred, truth)
        entry = {"f1": counts.f1, "precision": counts.precision, "recall": counts.recall}
        if args.soft_dir:
            entry["bce"] = bce_metric(load_gray(Path(args.soft_dir) / name), truth)
        per_image[name] = entry
    keys = list(next(iter(per_image.values())))
    report = {"images": per_image, "mean": {k: float(np.mean([e[k] for e in per_image.values()])) for k in keys},
              "n_images": len(per_image)}
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _grid_spec(path) -> GridSpec:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"{path}: cannot read grid config ({exc})") from exc
    if "adam" in data:
        data["adam"] = _from_dict(AdamConfig, data["adam"], f"{path}.adam")
    if data.get("manifest"):
        manifest = Path(data["manifest"])
        data["manifest"] = str(manifest if manifest.is_absolute() else Path(path).parent / manifest)
    return _from_dict(GridSpec, data, str(path))


def cmd_gridsearch(args) -> int:
    spec = _grid_spec(args.grid)
    if args.iters is not None:
        spec.adam = dataclasses.replace(spec.adam, iterations=args.iters)
    rows = grid_search(spec)
    write_results_csv(rows, args.out)
    best = rows[0]
    print(f"best: {best.params} mean F1 {best.mean_f1:.4f} over {best.n_images} images -> {args.out}")
    return EXIT_OK


def _parse_size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        size = (int(parts[0]), int(parts[-1])) if len(parts) <= 2 else None
    except ValueError:
        size = None
    if size is None or min(size) < 1 or max(size) > 32:
        raise argparse.ArgumentTypeError(f"size must be N or HxW with 1 <= N <= 32, got {text!r}")
    return size


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(args.seed, args.size, n_instances=args.instances, corrupt=args.corrupt)
    worst = 0.0
    for entry in report:
        worst = max(worst, entry.max_rel_error)
        print(f"{entry.combination:28s} {entry.block:7s} max rel err {entry.max_rel_error:.3e}")
    ok = worst <= GRADCHECK_TOLERANCE
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:g})")
    return EXIT_OK if ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="craq", description="Variational crack detection for digitized paintings.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("detect", help="detect cracks in one or more images")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--params", help="JSON run config")
    p.add_argument("--generator", help="identity | bilinear:<2|4|8>")
    p.add_argument("--prior", help="line-filter | constant:<value> | file:<path>")
    p.add_argument("--patch", type=int)
    p.add_argument("--overlap", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--paper-verbatim-adam", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("synth", help="composite crack masks onto clean patches")
    p.add_argument("clean_dir")
    p.add_argument("--masks", help="mask directory; procedural cracks when absent")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, nargs=2, default=(0.6, 0.95), metavar=("LO", "HI"))
    p.add_argument("--strength", type=float, nargs=2, default=(0.5, 1.0), metavar=("LO", "HI"))
    p.add_argument("--polarity-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score binary maps against ground-truth masks")
    p.add_argument("pred_dir")
    p.add_argument("truth_dir")
    p.add_argument("--soft-dir", help="soft crack maps (same names) for BCE")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gridsearch", help="grid search over regularization weights")
    p.add_argument("grid", help="JSON grid config")
    p.add_argument("--iters", type=int)
    p.add_argument("--out", default="gridsearch.csv")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_parse_size, default=(8, 8))
    p.add_argument("--instances", type=int, default=1)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"craq: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every failure becomes a one-line diagnostic
        log.debug("failure", exc_info=True)
        print(f"craq: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
