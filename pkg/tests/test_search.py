import csv

import pytest

from craq.detect import detect_patch
from craq.energy import EnergyParams
from craq.evaluation import f1_score
from craq.optimizer import AdamConfig
from craq.search import RESULT_COLUMNS, GridSpec, grid_search, write_results_csv
from craq.synthetic import generate_dataset, synthetic_suite, write_clean_patches

FAST = AdamConfig(iterations=60)


@pytest.fixture(scope="module")
def tiny_set():
    return synthetic_suite(4, (16, 16), seed=11)


def test_single_combination_matches_direct_run(tiny_set):
    spec = GridSpec([1.0], [0.1], [0.5], [0.005], adam=FAST)
    rows = grid_search(spec, tiny_set[:1])
    image, mask = tiny_set[0]
    direct = f1_score(detect_patch(image, EnergyParams(), FAST).binary, mask)
    assert len(rows) == 1 and rows[0].mean_f1 == direct
    assert rows[0].n_images == 1 and rows[0].n_failed == 0


def test_duplicates_removed():
    spec = GridSpec([1.0, 1.0], [0.1], [0.5, 0.5, 0.2], [0.005])
    assert len(spec.combinations()) == 2


def test_2x2_grid_reproducible(tiny_set):
    spec = GridSpec([0.5, 1.0], [0.05, 0.1], [0.5], [0.005], adam=FAST)
    a, b = grid_search(spec, tiny_set), grid_search(spec, tiny_set)
    assert len(a) == 4 and a == b
    assert all(a[0].mean_f1 >= r.mean_f1 for r in a[1:])
    f1s = [r.mean_f1 for r in a]
    assert f1s == sorted(f1s, reverse=True)


def test_tie_break_prefers_smaller_weights(tiny_set):
    # a frozen all-ones prior with no iterations scores every combination the same
    spec = GridSpec([2.0, 1.0], [0.1], [0.7, 0.3], [0.005], adam=AdamConfig(iterations=0), prior="constant:1")
    rows = grid_search(spec, tiny_set[:1])
    assert len({r.mean_f1 for r in rows}) == 1
    assert [(r.params.lambda_cp, r.params.lambda_preg) for r in rows] == [(0.3, 1.0), (0.3, 2.0), (0.7, 1.0), (0.7, 2.0)]


def test_cache_and_manifest(tmp_path):
    write_clean_patches(tmp_path / "clean", 2, (16, 16), seed=4)
    generate_dataset(tmp_path / "clean", None, tmp_path / "set", seed=1)
    spec = GridSpec([1.0], [0.1], [0.5, 0.4], [0.005], manifest=str(tmp_path / "set" / "manifest.jsonl"),
                    adam=FAST, cache_dir=str(tmp_path / "cache"))
    first = grid_search(spec)
    assert len(list((tmp_path / "cache").iterdir())) == 4
    assert grid_search(spec) == first
    write_results_csv(first, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        table = list(csv.reader(fh))
    assert tuple(table[0]) == RESULT_COLUMNS and len(table) == 3
    assert float(table[1][4]) == first[0].mean_f1


def test_validation():
    with pytest.raises(ValueError):
        GridSpec(lambda_preg=[])
    with pytest.raises(ValueError):
        GridSpec(epsilon=[0.0])
    with pytest.raises(ValueError):
        grid_search(GridSpec(), [])
