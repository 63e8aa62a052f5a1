import json
import logging
import subprocess
import sys

import numpy as np
import pytest

from votedetect import cli
from votedetect.features import (FeatureSet, load_pgm, save_feature_set, save_pgm)
from votedetect.synthetic import DEFAULT_PATTERNS, PlantedInstance, SceneSpec, generate


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    spec = SceneSpec("shelf", 800, 600, [DEFAULT_PATTERNS[0], DEFAULT_PATTERNS[1]],
                     [PlantedInstance("A", (420.0, 310.0), 1.05, 0.8, 30)], noise_votes=60,
                     seed=21)
    scene = generate(spec)
    save_feature_set(scene.features, d / "scene.jsonl")
    save_pgm(scene.image, d / "scene.pgm")
    for pid, p in scene.patterns.items():
        save_feature_set(p.features, d / f"{pid}.jsonl")
        save_pgm(p.image, d / f"{pid}.pgm")
    save_feature_set(FeatureSet("empty", 800, 600), d / "empty.jsonl")
    save_feature_set(FeatureSet("Z", 256, 192), d / "Z.jsonl")
    short = FeatureSet("short", 256, 192, [kp.__class__(kp.x, kp.y, kp.scale, kp.orientation,
                                                        kp.descriptor[:8], kp.luminance)
                                           for kp in scene.patterns["A"].features.keypoints])
    save_feature_set(short, d / "short.jsonl")
    (d / "specs.json").write_text(json.dumps([spec.to_dict()]))
    return d, scene


def run(*argv):
    return cli.main([str(a) for a in argv])


def detect_args(d, out, *extra):
    return ["detect", "--scene-features", d / "scene.jsonl", "--scene-image", d / "scene.pgm",
            "--pattern", f"{d / 'A.jsonl'},{d / 'A.pgm'}",
            "--pattern", f"{d / 'B.jsonl'},{d / 'B.pgm'}", "--out", out, *extra]


class TestMatch:
    def test_counts(self, files, tmp_path):
        d, scene = files
        out = tmp_path / "corr.jsonl"
        assert run("match", "--pattern", d / "A.jsonl", "--scene-features", d / "scene.jsonl",
                   "--out", out) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == len(scene.features)
        assert set(json.loads(lines[0])) == {"pattern_feature_id", "scene_feature_id", "distance"}

    def test_length_mismatch(self, files, capsys):
        d, _ = files
        assert run("match", "--pattern", d / "short.jsonl", "--scene-features",
                   d / "scene.jsonl") == 2
        err = capsys.readouterr().err
        assert "pattern 8" in err and "scene 64" in err

    def test_empty_scene(self, files, capsys):
        d, _ = files
        assert run("match", "--pattern", d / "A.jsonl", "--scene-features", d / "empty.jsonl") == 0
        assert capsys.readouterr().out == ""

    def test_missing_file(self, files, capsys):
        d, _ = files
        assert run("match", "--pattern", d / "nope.jsonl", "--scene-features",
                   d / "scene.jsonl") == 2


class TestDetect:
    def test_single_instance(self, files, tmp_path):
        d, scene = files
        out = tmp_path / "det.json"
        assert run(*detect_args(d, out, "--workers", 1, "--vote-images", tmp_path / "vi",
                                "--figures", tmp_path / "fig")) == 0
        report = json.loads(out.read_text())
        assert report["config"]["cascade"]["min_votes"] == 6
        occs = report["occurrences"]
        assert [o["pattern_id"] for o in occs] == ["A"]
        assert np.hypot(occs[0]["center"][0] - 420, occs[0]["center"][1] - 310) < 10
        assert set(occs[0]) == {"pattern_id", "center", "scale", "rotation_deg", "quad",
                                "vote_count", "adjacency_sum", "filter_report"}
        assert [p["pattern_id"] for p in report["patterns"]] == ["A", "B"]
        vi = load_pgm(tmp_path / "vi" / "A.pgm")
        assert vi.pixels.shape == (150, 200) and vi.pixels.max() == 255
        for name in ("votes_A.png", "votes_B.png", "detections.png"):
            assert (tmp_path / "fig" / name).stat().st_size > 0

    def test_repeatable_and_worker_independent(self, files, tmp_path):
        d, _ = files
        outs = []
        for k, workers in enumerate((1, 1, 2)):
            out = tmp_path / f"det{k}.json"
            assert run(*detect_args(d, out, "--workers", workers)) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_zero_keypoint_pattern(self, files, tmp_path, caplog):
        d, _ = files
        out = tmp_path / "z.json"
        with caplog.at_level(logging.WARNING):
            assert run("detect", "--scene-features", d / "scene.jsonl", "--pattern",
                       d / "Z.jsonl", "--out", out, "--workers", 1,
                       "--config", self._no_ncc(tmp_path)) == 0
        assert json.loads(out.read_text())["occurrences"] == []
        assert "no keypoints" in caplog.text

    def test_missing_image_with_ncc(self, files, capsys):
        d, _ = files
        assert run("detect", "--scene-features", d / "scene.jsonl", "--pattern",
                   d / "A.jsonl") == 2
        assert "NCC" in capsys.readouterr().err
        assert run("detect", "--scene-features", d / "scene.jsonl", "--scene-image",
                   d / "scene.pgm", "--pattern", d / "A.jsonl") == 2

    def test_without_ncc_images_optional(self, files, tmp_path):
        d, _ = files
        out = tmp_path / "noncc.json"
        assert run("detect", "--scene-features", d / "scene.jsonl", "--pattern", d / "A.jsonl",
                   "--config", self._no_ncc(tmp_path), "--out", out, "--workers", 1) == 0
        report = json.loads(out.read_text())
        assert report["config"]["cascade"]["use_ncc"] is False
        assert len(report["occurrences"]) == 1

    def test_seed_flag_echoed(self, files, tmp_path):
        d, _ = files
        out = tmp_path / "seed.json"
        assert run(*detect_args(d, out, "--seed", 99, "--workers", 1)) == 0
        assert json.loads(out.read_text())["config"]["seed"] == 99

    def test_internal_error_exit_code(self, files, monkeypatch):
        d, _ = files

        def boom(*a, **k):
            raise RuntimeError("kaboom")
        monkeypatch.setattr(cli, "run_process", boom)
        assert run(*detect_args(d, "-", "--workers", 1)) == 3

    def test_bad_config(self, files, tmp_path):
        d, _ = files
        bad = tmp_path / "bad.toml"
        bad.write_text("[vote_image]\nbin_size = 0\n")
        assert run(*detect_args(d, "-", "--config", bad)) == 2
        assert run(*detect_args(d, "-", "--config", tmp_path / "missing.toml")) == 2

    @staticmethod
    def _no_ncc(tmp_path):
        p = tmp_path / "noncc.toml"
        p.write_text("[cascade]\nuse_ncc = false\n")
        return p


class TestRenderVotes:
    def test_blob_at_instance(self, files, tmp_path):
        d, _ = files
        out = tmp_path / "v.pgm"
        assert run("render-votes", "--scene-features", d / "scene.jsonl", "--pattern",
                   f"{d / 'A.jsonl'},{d / 'A.pgm'}", "--out", out, "--png", tmp_path / "v.png") == 0
        px = load_pgm(out).pixels
        r, c = np.unravel_index(np.argmax(px), px.shape)
        assert abs(c - 420 // 4) <= 2 and abs(r - 310 // 4) <= 2
        assert (tmp_path / "v.png").stat().st_size > 0
        again = tmp_path / "v2.pgm"
        run("render-votes", "--scene-features", d / "scene.jsonl", "--pattern",
            f"{d / 'A.jsonl'},{d / 'A.pgm'}", "--out", again)
        assert out.read_bytes() == again.read_bytes()

    def test_no_correspondences_all_black(self, files, tmp_path):
        d, _ = files
        out = tmp_path / "black.pgm"
        assert run("render-votes", "--scene-features", d / "empty.jsonl", "--pattern",
                   d / "A.jsonl", "--out", out) == 0
        px = load_pgm(out).pixels
        assert px.shape == (150, 200) and not px.any()

    def test_requires_out(self, files):
        d, _ = files
        with pytest.raises(SystemExit) as exc:
            run("render-votes", "--scene-features", d / "empty.jsonl", "--pattern", d / "A.jsonl")
        assert exc.value.code == 2


class TestEval:
    def test_report(self, files, tmp_path):
        d, _ = files
        out = tmp_path / "rep.json"
        assert run("eval", "--specs", d / "specs.json", "--out", out, "--workers", 1,
                   "--figures", tmp_path / "fig") == 0
        rep = json.loads(out.read_text())
        m = rep["metrics"]
        assert m["detection_rate"] == 1.0 and m["false_detection_chance"] == 0.0
        assert m["avg_false_detections"] == 0.0 and m["processes"] == 2
        assert rep["config"]["seed"] == 0
        assert "Detection rate" in out.with_suffix(".txt").read_text()
        tsv = out.with_suffix(".tsv").read_text().splitlines()
        assert tsv[0].split("\t")[0] == "process_id" and len(tsv) == 3
        assert (tmp_path / "fig" / "eval_summary.png").exists()
        assert (tmp_path / "fig" / "scene_shelf.png").exists()

    def test_empty_specs(self, tmp_path, capsys):
        p = tmp_path / "none.json"
        p.write_text("[]")
        assert run("eval", "--specs", p) == 2
        assert "no processes" in capsys.readouterr().err

    def test_bad_specs(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('[{"scene_id": "x"}]')
        assert run("eval", "--specs", p) == 2
        p.write_text("{oops")
        assert run("eval", "--specs", p) == 2

    def test_repeatable(self, files, tmp_path):
        d, _ = files
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run("eval", "--specs", d / "specs.json", "--out", a, "--workers", 1)
        run("eval", "--specs", d / "specs.json", "--out", b, "--workers", 2)
        assert a.read_bytes() == b.read_bytes()


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["detect", "--scene-features", "x", "--pattern", "y", "--workers", "0"])
    assert exc.value.code == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "votedetect", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    for sub in ("match", "detect", "render-votes", "eval"):
        assert sub in res.stdout
