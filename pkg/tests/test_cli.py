import json

import numpy as np
import pytest
from PIL import Image

from mpri.classify import EvalReport
from mpri.cli import class_palette, distinct_points, main
from mpri.cube import (
    LabelMap,
    load_cube,
    load_labels,
    normalize,
    save_cube,
    save_labels,
    synth_labeled_cube,
    synth_scene,
)
from mpri.harness import ablation_config, run_experiment
from mpri.pipeline import PipelineConfig


@pytest.fixture
def scene_files(tmp_path):
    cube, labels = synth_scene(size=16, bands=6)
    save_cube(cube, tmp_path / "s.cube")
    save_labels(labels, tmp_path / "s.lab")
    return tmp_path


def run_pipeline_cmd(d, *extra, cube="s.cube", labels="s.lab", tag="out"):
    out = d / tag
    out.mkdir(exist_ok=True)
    args = ["pipeline", "--cube", str(d / cube), "--labels", str(d / labels),
            "--out-features", str(out / "f.cube"), "--out-map", str(out / "m.png"),
            "--out-report", str(out / "r.txt"), "--out-pred", str(out / "p.lab"),
            "--out-test", str(out / "t.lab"), *extra]
    return main(args), out


class TestDemo:
    def test_outputs(self, tmp_path):
        assert main(["demo", "--beta", "0", "2", "--tau", "5", "--n-points", "60",
                     "--out", str(tmp_path)]) == 0
        for name in ("input.csv", "beta_0.csv", "beta_0.png", "beta_2.csv", "beta_2.png", "manifest.json"):
            assert (tmp_path / name).exists(), name
        Y0 = np.loadtxt(tmp_path / "beta_0.csv", delimiter=",", skiprows=1)
        assert Y0.shape == (60, 2)
        assert distinct_points(Y0) == 1
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config"]["betas"] == [0.0, 2.0]
        assert len(manifest["config_hash"]) == 64

    def test_bad_flag(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["demo", "--beta", "abc", "--out", str(tmp_path)])
        assert info.value.code != 0

    def test_bad_value(self, tmp_path, capsys):
        assert main(["demo", "--beta", "-1", "--out", str(tmp_path), "--no-plot"]) == 1
        assert "beta" in capsys.readouterr().err


class TestPipeline:
    def test_noiseless_perfect(self, tmp_path):
        cube, labels = synth_labeled_cube([[1, 2], [2, 1]], 4, 0.0, seed=0, block_size=6)
        save_cube(cube, tmp_path / "c.cube")
        save_labels(labels, tmp_path / "c.lab")
        code, out = run_pipeline_cmd(tmp_path, "--scales", "3,5", "--layers", "2",
                                     "--train-fraction", "0.05", cube="c.cube", labels="c.lab")
        assert code == 0
        report = EvalReport.from_text((out / "r.txt").read_text())
        assert report.oa == 1.0

    def test_artifacts(self, scene_files, capsys):
        code, out = run_pipeline_cmd(scene_files, "--scales", "3,5", "--layers", "2",
                                     "--train-fraction", "0.1", "--seed", "4")
        assert code == 0
        captured = capsys.readouterr()
        assert "estimated kernel evaluations" in captured.err
        assert "time per pixel" in captured.out

        features = load_cube(out / "f.cube")
        assert features.shape == (16, 16, 2 * 3)
        pred = load_labels(out / "p.lab")
        with Image.open(out / "m.png") as img:
            assert img.mode == "P"
            np.testing.assert_array_equal(np.asarray(img), pred.labels)
            assert img.getpalette()[:12] == class_palette()[:12]

        manifest = json.loads((out / "r.txt.manifest.json").read_text())
        assert manifest["seeds"] == [4]
        assert manifest["config"]["layers"] == 2
        assert manifest["per_pixel_seconds"] > 0
        assert set(manifest["outputs"]) >= {"features", "report", "map", "predictions"}
        assert len(manifest["outputs"]["layers"]) == 2

    def test_eval_round_trip(self, scene_files):
        code, out = run_pipeline_cmd(scene_files, "--scales", "3", "--layers", "1",
                                     "--train-fraction", "0.1")
        assert code == 0
        assert main(["eval", "--pred", str(out / "p.lab"), "--truth", str(out / "t.lab"),
                     "--out", str(out / "again.txt")]) == 0
        assert (out / "again.txt").read_bytes() == (out / "r.txt").read_bytes()

    def test_config_file(self, scene_files):
        (scene_files / "cfg.txt").write_text("scales = 3\nbetas = 2\nlayers = 1\nseed = 9\n")
        code, out = run_pipeline_cmd(scene_files, "--config", str(scene_files / "cfg.txt"),
                                     "--train-fraction", "0.1")
        assert code == 0
        manifest = json.loads((out / "r.txt.manifest.json").read_text())
        assert manifest["seeds"] == [9]
        assert manifest["config"]["scales"] == [3]

    def test_missing_input(self, scene_files, capsys):
        code, _ = run_pipeline_cmd(scene_files, cube="nope.cube")
        assert code == 1
        assert "load cube" in capsys.readouterr().err

    def test_bad_threads(self, scene_files, monkeypatch):
        monkeypatch.setenv("PRI_THREADS", "0")
        code, _ = run_pipeline_cmd(scene_files, "--scales", "3", "--layers", "1")
        assert code == 1

    @pytest.mark.slow
    def test_depth_trend(self, tmp_path):
        cube, labels = synth_scene()
        save_cube(cube, tmp_path / "s.cube")
        save_labels(labels, tmp_path / "s.lab")
        oa = {}
        for layers in (1, 3):
            scores = []
            for seed in range(5):
                code, out = run_pipeline_cmd(tmp_path, "--layers", str(layers), "--seed", str(seed),
                                             "--train-fraction", "0.1", tag=f"L{layers}s{seed}")
                assert code == 0
                scores.append(EvalReport.from_text((out / "r.txt").read_text()).oa)
            oa[layers] = np.mean(scores)
        print(oa)
        assert oa[3] >= oa[1]


class TestEval:
    def test_identity(self, tmp_path, capsys):
        labels = LabelMap(np.array([[1, 2, 0], [2, 3, 1]]))
        save_labels(labels, tmp_path / "a.lab")
        assert main(["eval", "--pred", str(tmp_path / "a.lab"), "--truth", str(tmp_path / "a.lab")]) == 0
        assert "kappa=1.0" in capsys.readouterr().out

    def test_hand_confusion(self, tmp_path):
        truth = np.repeat([1, 2], 50)
        pred = np.concatenate([np.repeat([1, 2], [45, 5]), np.repeat([1, 2], [10, 40])])
        save_labels(LabelMap(truth.reshape(10, 10)), tmp_path / "t.lab")
        save_labels(LabelMap(pred.reshape(10, 10)), tmp_path / "p.lab")
        assert main(["eval", "--pred", str(tmp_path / "p.lab"), "--truth", str(tmp_path / "t.lab"),
                     "--out", str(tmp_path / "r.txt")]) == 0
        report = EvalReport.from_text((tmp_path / "r.txt").read_text())
        assert abs(report.kappa - 0.7) <= 1e-12

    def test_shape_mismatch(self, tmp_path, capsys):
        save_labels(LabelMap(np.ones((2, 2), int)), tmp_path / "a.lab")
        save_labels(LabelMap(np.ones((2, 3), int)), tmp_path / "b.lab")
        assert main(["eval", "--pred", str(tmp_path / "a.lab"), "--truth", str(tmp_path / "b.lab")]) == 1
        assert "evaluate" in capsys.readouterr().err


class TestAblate:
    def test_grid(self, scene_files):
        cfg_text = "scales = 3,5,7\nbetas = 2,3,4\nlayers = 2\n"
        (scene_files / "cfg.txt").write_text(cfg_text)
        out = scene_files / "ablation.txt"
        assert main(["ablate", "--cube", str(scene_files / "s.cube"), "--labels", str(scene_files / "s.lab"),
                     "--config", str(scene_files / "cfg.txt"), "--seeds", "2",
                     "--train-fraction", "0.1", "--out", str(out)]) == 0
        text = out.read_text()
        assert "rows=8" in text
        assert "row[1]=layers=1;scales=5;betas=3.0" in text
        assert "row[8]=layers=2;scales=3,5,7;betas=2.0,3.0,4.0" in text

        # the all-off row is exactly the single-unit, single-scale, single-beta pipeline
        cube, labels = normalize(load_cube(scene_files / "s.cube")), load_labels(scene_files / "s.lab")
        base = PipelineConfig(scales=(3, 5, 7), layers=2)
        off = ablation_config(base, False, False, False)
        assert (off.layers, off.scales, off.betas) == (1, (5,), (3.0,))
        oas = [run_experiment(cube, labels, off, 0.1, s).report.oa for s in (0, 1)]
        assert f"oa[1]={float(np.mean(oas))!r}" in text
        assert (scene_files / "ablation.txt.manifest.json").exists()

    def test_explicit_seed_list(self, scene_files):
        out = scene_files / "a.txt"
        assert main(["ablate", "--cube", str(scene_files / "s.cube"), "--labels", str(scene_files / "s.lab"),
                     "--scales", "3", "--betas", "3", "--layers", "1", "--seeds", "4,7",
                     "--train-fraction", "0.1", "--out", str(out)]) == 0
        assert out.read_text().startswith("ablation over seeds 4,7")


class TestConvert:
    def test_round_trips(self, scene_files):
        d = scene_files
        assert main(["convert", str(d / "s.cube"), str(d / "c.csv")]) == 0
        assert main(["convert", str(d / "c.csv"), str(d / "c2.cube")]) == 0
        assert (d / "c2.cube").read_bytes() == (d / "s.cube").read_bytes()
        assert main(["convert", str(d / "s.lab"), str(d / "l.csv")]) == 0
        assert main(["convert", str(d / "l.csv"), str(d / "l2.lab"), "--kind", "labels"]) == 0
        assert (d / "l2.lab").read_bytes() == (d / "s.lab").read_bytes()

    def test_unknown_magic(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"garbage!")
        assert main(["convert", str(tmp_path / "x.bin"), str(tmp_path / "y.csv")]) == 1


def test_synth(tmp_path):
    assert main(["synth", "--out-cube", str(tmp_path / "a.cube"), "--out-labels", str(tmp_path / "a.lab"),
                 "--size", "12", "--bands", "5"]) == 0
    assert load_cube(tmp_path / "a.cube").shape == (12, 12, 5)
    assert list(load_labels(tmp_path / "a.lab").classes) == [1, 2, 3, 4]
