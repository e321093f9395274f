import csv
import json

import numpy as np
import pytest

from gvground import io
from gvground.cli import main
from gvground.config import RunConfig
from gvground.encoder import Scene, rasterize_ground_truth


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["synth", "--count", "6", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_synth_empty(tmp_path):
    assert main(["synth", "--count", "0", "--out", str(tmp_path)]) == 0
    manifest = io.read_json(tmp_path / "manifest.json")
    assert manifest["count"] == 0 and manifest["scenes"] == []


def test_synth_deterministic(tmp_path, dataset):
    assert main(["--seed", "3", "synth", "--count", "6", "--out", str(tmp_path)]) == 0
    assert _files(tmp_path) == _files(dataset)
    assert len(io.read_json(dataset / "manifest.json")["scenes"]) == 6


def test_synth_negative_count(tmp_path, capsys):
    assert main(["synth", "--count", "-1", "--out", str(tmp_path)]) == 2
    assert "count" in capsys.readouterr().err


def test_run_single_scene_with_dumps(tmp_path, dataset):
    manifest = io.read_json(dataset / "manifest.json")
    manifest["scenes"] = manifest["scenes"][:1]
    manifest["count"] = 1
    io.write_json(dataset / "one.json", manifest)
    out = tmp_path / "pred"
    assert main(["run", str(dataset / "one.json"), "--out", str(out), "--dump-attn",
                 "--dump-masks"]) == 0
    rows = io.read_jsonl(out / "predictions.jsonl")
    assert len(rows) == 1
    sid = rows[0]["id"]
    attn = io.read_json(out / "attn" / f"{sid}.json")
    assert len(attn["points"]) == RunConfig().n_queries
    assert io.read_pgm(out / "attn" / f"{sid}_score.pgm").shape == (8, 8)
    assert io.read_pgm(out / "masks" / f"{sid}_merged.pgm").shape == (16, 16)
    assert len(list((out / "masks").glob(f"{sid}_q*.pgm"))) == RunConfig().n_queries


def test_run_deterministic_across_workers(tmp_path, dataset):
    for name, workers in (("a", "1"), ("b", "1"), ("c", "3")):
        assert main(["run", str(dataset), "--out", str(tmp_path / name), "--workers", workers,
                     "--dump-attn"]) == 0
    a = _files(tmp_path / "a")
    assert a == _files(tmp_path / "b") == _files(tmp_path / "c")


def test_run_malformed_scene(tmp_path, dataset, capsys):
    bad = tmp_path / "bad"
    bad.mkdir()
    manifest = io.read_json(dataset / "manifest.json")
    for entry in manifest["scenes"][:2]:
        (bad / "scenes").mkdir(exist_ok=True)
        (bad / entry["file"]).write_bytes((dataset / entry["file"]).read_bytes())
    (bad / manifest["scenes"][1]["file"]).write_text("{not json")
    manifest["scenes"] = manifest["scenes"][:2]
    io.write_json(bad / "manifest.json", manifest)
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert manifest["scenes"][1]["file"] in capsys.readouterr().err
    assert len(io.read_jsonl(tmp_path / "o" / "predictions.jsonl")) == 1


def test_config_violation_aborts(tmp_path, dataset, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_queries": 0}))
    assert main(["--config", str(cfg), "run", str(dataset), "--out", str(tmp_path)]) == 2
    assert "n_queries" in capsys.readouterr().err


def _gt_predictions(dataset, path, empty=False):
    cfg = RunConfig()
    rows = []
    for entry in io.read_json(dataset / "manifest.json")["scenes"]:
        scene = Scene.from_json((dataset / entry["file"]).read_text())
        gt = rasterize_ground_truth(scene, *cfg.mask_size)
        boxes = [] if empty else gt.boxes.tolist()
        mask = np.zeros_like(gt.global_mask) if empty else gt.global_mask
        rows.append({"id": scene.id, "boxes": boxes, "scores": [1.0] * len(boxes),
                     "non_target": not boxes, "mask": io.mask_to_rle(mask)})
    io.write_jsonl(path, rows)


def test_eval_perfect_predictions(tmp_path, dataset):
    _gt_predictions(dataset, tmp_path / "p.jsonl")
    assert main(["eval", str(tmp_path / "p.jsonl"), str(dataset), "--out", str(tmp_path)]) == 0
    metrics = io.read_json(tmp_path / "eval_summary.json")["metrics"]
    for key in ("g_iou", "c_iou", "m_iou", "o_iou", "r_iou", "f1score", "acc_zom"):
        assert metrics[key] == 1.0, key
    with open(tmp_path / "eval_summary.csv") as fh:
        assert [r["metric_set"] for r in csv.DictReader(fh)] == [
            "rec", "grec", "gres", "zom", "robust", "cover"]
    assert len(io.read_jsonl(tmp_path / "eval_scenes.jsonl")) == 6


def test_eval_empty_predictions_positive_set(tmp_path, dataset):
    manifest = io.read_json(dataset / "manifest.json")
    positive = [e for e in manifest["scenes"]
                if Scene.from_json((dataset / e["file"]).read_text()).targets()]
    assert positive
    manifest["scenes"] = positive
    io.write_json(dataset / "positive.json", manifest)
    rows = [{"id": e["id"], "boxes": [], "scores": [], "non_target": True,
             "mask": io.mask_to_rle(np.zeros((16, 16), bool))} for e in positive]
    io.write_jsonl(tmp_path / "p.jsonl", rows)
    assert main(["eval", str(tmp_path / "p.jsonl"), str(dataset / "positive.json"),
                 "--metrics", "grec", "--out", str(tmp_path)]) == 0
    assert io.read_json(tmp_path / "eval_summary.json")["metrics"]["f1score"] == 0.0


def test_eval_id_mismatch(tmp_path, dataset, capsys):
    _gt_predictions(dataset, tmp_path / "p.jsonl")
    rows = io.read_jsonl(tmp_path / "p.jsonl")
    rows[0]["id"] = "stranger"
    io.write_jsonl(tmp_path / "p.jsonl", rows[:-1])
    assert main(["eval", str(tmp_path / "p.jsonl"), str(dataset), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "stranger" in err and "scene_00000" in err and "scene_00005" in err


def _read_loss(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_fit_demo_lr_zero_is_flat(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fit_scenes": 1}))
    assert main(["--config", str(cfg), "fit-demo", "--steps", "2", "--lr", "0",
                 "--out", str(tmp_path)]) == 0
    rows = _read_loss(tmp_path / "fit_loss.csv")
    assert [r["step"] for r in rows] == ["0", "1", "2"]
    assert len({r["total"] for r in rows}) == 1


def test_fit_demo_same_seed_same_csv(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fit_scenes": 1}))
    for name in ("a", "b"):
        assert main(["--config", str(cfg), "fit-demo", "--steps", "2",
                     "--out", str(tmp_path / name)]) == 0
    a, b = (tmp_path / n / "fit_loss.csv" for n in ("a", "b"))
    assert a.read_bytes() == b.read_bytes()
    rows = _read_loss(a)
    assert float(rows[-1]["total"]) < float(rows[0]["total"])


def test_fit_demo_rejects_bad_steps(tmp_path):
    assert main(["fit-demo", "--steps", "0", "--out", str(tmp_path)]) == 2
    assert main(["fit-demo", "--lr", "-1", "--out", str(tmp_path)]) == 2


def test_selftest_passes(capsys):
    assert main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out
