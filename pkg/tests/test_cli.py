import json

import numpy as np
import pytest

from craq.cli import main
from craq.imaging import load_image, load_mask, save_image
from craq.synthetic import write_clean_patches


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestDetect:
    def test_constant_image_has_no_cracks(self, tmp_path, capsys):
        save_image(np.full((32, 32, 3), 0.5), tmp_path / "flat.png")
        code, _, _ = _run(capsys, "detect", tmp_path / "flat.png", "--out", tmp_path / "out", "--iters", 100)
        assert code == 0
        assert not load_mask(tmp_path / "out" / "flat_binary.png").any()
        for suffix in ("soft", "overlay"):
            assert (tmp_path / "out" / f"flat_{suffix}.png").exists()
        lines = (tmp_path / "out" / "flat_trace.csv").read_text().splitlines()
        assert lines[0] == "iter,data_fidelity,preg,creg,cp,total" and len(lines) > 1

    def test_overlay_marks_cracks_red(self, tmp_path, capsys):
        card = np.full((32, 32, 3), 0.8)
        card[:, 15] = 0.1
        save_image(card, tmp_path / "line.png")
        assert _run(capsys, "detect", tmp_path / "line.png", "--out", tmp_path, "--iters", 200)[0] == 0
        binary = load_mask(tmp_path / "line_binary.png")
        overlay = load_image(tmp_path / "line_overlay.png")
        assert binary[:, 15].mean() > 0.5
        np.testing.assert_array_equal(overlay[binary == 1], np.tile([1.0, 0.0, 0.0], (int(binary.sum()), 1)))

    def test_tiled_run_writes_per_tile_traces(self, tmp_path, capsys):
        save_image(np.full((24, 40, 3), 0.3), tmp_path / "wide.png")
        code, _, _ = _run(capsys, "detect", tmp_path / "wide.png", "--out", tmp_path / "o",
                          "--patch", 24, "--overlap", 8, "--iters", 5)
        assert code == 0
        assert sorted(p.name for p in (tmp_path / "o").glob("*_trace_*.csv")) == [
            "wide_trace_r0_c0.csv", "wide_trace_r0_c16.csv"]

    def test_config_file_and_flag_precedence(self, tmp_path, capsys):
        save_image(np.full((16, 16, 3), 0.5), tmp_path / "a.png")
        (tmp_path / "cfg.json").write_text(json.dumps({"adam": {"iterations": 3, "early_stop": False}}))
        _run(capsys, "detect", tmp_path / "a.png", "--params", tmp_path / "cfg.json", "--out", tmp_path / "f")
        assert len((tmp_path / "f" / "a_trace.csv").read_text().splitlines()) == 4
        _run(capsys, "detect", tmp_path / "a.png", "--params", tmp_path / "cfg.json", "--iters", 7,
             "--out", tmp_path / "g")
        assert len((tmp_path / "g" / "a_trace.csv").read_text().splitlines()) == 8

    @pytest.mark.parametrize("config", [{"bogus": 1}, {"params": {"lambda_x": 1}}, {"adam": {"beta1": 2.0}}])
    def test_bad_config_is_usage_error(self, tmp_path, capsys, config):
        save_image(np.zeros((8, 8, 3)), tmp_path / "a.png")
        (tmp_path / "cfg.json").write_text(json.dumps(config))
        code, _, err = _run(capsys, "detect", tmp_path / "a.png", "--params", tmp_path / "cfg.json", "--out", tmp_path)
        assert code == 1 and "usage error" in err

    def test_unreadable_input(self, tmp_path, capsys):
        (tmp_path / "bad.png").write_bytes(b"nope")
        code, _, err = _run(capsys, "detect", tmp_path / "bad.png", "--out", tmp_path)
        assert code == 2 and err.count("\n") == 1 and "bad.png" in err

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["detect", "x.png", "--out", "o", "--frobnicate"])
        assert info.value.code == 1


class TestEval:
    def _masks(self, directory, maps):
        directory.mkdir(exist_ok=True)
        for name, m in maps.items():
            save_image(np.asarray(m, dtype=float), directory / name)

    def test_identical_dirs(self, tmp_path, capsys, rng):
        maps = {f"{i}.png": (rng.uniform(size=(8, 8)) < 0.3) for i in range(3)}
        self._masks(tmp_path / "t", maps)
        code, out, _ = _run(capsys, "eval", tmp_path / "t", tmp_path / "t", "--out", tmp_path / "r.json")
        assert code == 0 and json.loads(out)["mean"]["f1"] == 1.0
        assert json.loads((tmp_path / "r.json").read_text())["n_images"] == 3

    def test_mean_of_half_and_one(self, tmp_path, capsys):
        truth = {"a.png": [[1, 1, 0, 0]], "b.png": [[1, 0, 0, 0]]}
        # a: tp=1, fn=1, fp=1 -> F1 0.5; b: exact
        pred = {"a.png": [[1, 0, 1, 0]], "b.png": [[1, 0, 0, 0]]}
        self._masks(tmp_path / "t", truth)
        self._masks(tmp_path / "p", pred)
        code, out, _ = _run(capsys, "eval", tmp_path / "p", tmp_path / "t")
        report = json.loads(out)
        assert code == 0
        assert report["images"]["a.png"]["f1"] == 0.5
        assert report["mean"]["f1"] == 0.75

    def test_mismatched_names(self, tmp_path, capsys):
        self._masks(tmp_path / "t", {"a.png": [[1]], "b.png": [[0]]})
        self._masks(tmp_path / "p", {"a.png": [[1]], "c.png": [[0]]})
        code, _, err = _run(capsys, "eval", tmp_path / "p", tmp_path / "t")
        assert code == 2 and "b.png" in err and "c.png" in err

    def test_bce_column(self, tmp_path, capsys):
        self._masks(tmp_path / "t", {"a.png": [[1, 0]]})
        self._masks(tmp_path / "s", {"a.png": [[0.5, 0.5]]})
        code, out, _ = _run(capsys, "eval", tmp_path / "t", tmp_path / "t", "--soft-dir", tmp_path / "s")
        assert code == 0
        assert json.loads(out)["mean"]["bce"] == pytest.approx(-np.log(128 / 255) / 2 - np.log(127 / 255) / 2)


class TestSynth:
    def test_procedural_and_hash(self, tmp_path, capsys):
        write_clean_patches(tmp_path / "clean", 2, (16, 16))
        code1, out1, _ = _run(capsys, "synth", tmp_path / "clean", "--out", tmp_path / "a", "--seed", 5)
        code2, out2, _ = _run(capsys, "synth", tmp_path / "clean", "--out", tmp_path / "b", "--seed", 5)
        assert code1 == code2 == 0
        assert "procedural" in out1
        assert out1.split("sha256 ")[1] == out2.split("sha256 ")[1]

    def test_empty_clean_dir(self, tmp_path, capsys):
        (tmp_path / "clean").mkdir()
        code, _, err = _run(capsys, "synth", tmp_path / "clean", "--out", tmp_path / "out")
        assert code == 2 and "no images" in err
        assert not (tmp_path / "out").exists()

    def test_bad_range(self, tmp_path, capsys):
        write_clean_patches(tmp_path / "clean", 1, (8, 8))
        code, _, err = _run(capsys, "synth", tmp_path / "clean", "--out", tmp_path / "o", "--alpha", 0.9, 0.1)
        assert code == 1 and "alpha" in err
        assert not (tmp_path / "o").exists()


class TestGradcheck:
    def test_default_passes(self, capsys):
        code, out, _ = _run(capsys, "gradcheck")
        assert code == 0 and out.splitlines()[-1].startswith("PASS")
        worst = float(out.splitlines()[-1].split("error ")[1].split()[0])
        assert worst <= 1e-4

    def test_corrupted_gradient_fails(self, capsys):
        code, out, _ = _run(capsys, "gradcheck", "--corrupt")
        assert code == 2 and "FAIL" in out

    def test_single_pixel(self, capsys):
        code, out, _ = _run(capsys, "gradcheck", "--size", "1x1")
        assert code == 0 and "PASS" in out

    def test_size_limit(self):
        with pytest.raises(SystemExit) as info:
            main(["gradcheck", "--size", "64"])
        assert info.value.code == 1


def test_gridsearch_command(tmp_path, capsys):
    write_clean_patches(tmp_path / "clean", 2, (16, 16), seed=3)
    _run(capsys, "synth", tmp_path / "clean", "--out", tmp_path / "set")
    grid = {"lambda_cp": [0.5, 0.25], "manifest": "set/manifest.jsonl", "adam": {"iterations": 20}}
    (tmp_path / "grid.json").write_text(json.dumps(grid))
    code, out, _ = _run(capsys, "gridsearch", tmp_path / "grid.json", "--out", tmp_path / "r.csv")
    assert code == 0 and "best" in out
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 3
    (tmp_path / "bad.json").write_text(json.dumps({"lambda_q": [1]}))
    assert _run(capsys, "gridsearch", tmp_path / "bad.json")[0] == 1
