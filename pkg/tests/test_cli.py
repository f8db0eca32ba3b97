import json
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from gazepercept import cli
from gazepercept.core import BBox2D
from gazepercept.gbvs import GbvsParams, gaze_heatmap, quantize
from gazepercept.ingest import load_png, save_proposals, save_rgb_png, save_xyz
from gazepercept.synthetic import cube_cloud, tabletop_scene


@pytest.fixture
def image_and_gaze(tmp_path):
    img = np.full((48, 64, 3), 25, dtype=np.uint8)
    img[15:30, 30:50] = (230, 60, 40)
    save_rgb_png(img, tmp_path / "img.png")
    (tmp_path / "gaze.csv").write_text("x,y\n40,22\n41,21\n38,24\n")
    return tmp_path / "img.png", tmp_path / "gaze.csv", img


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    assert cli.run(["saliency", "--bogus", "--out", str(tmp_path)]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand():
    assert cli.run([]) == 2


def test_data_error_status(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("# rx=10 ry=10\nt_ms,x,y\n0,abc,1\n")
    assert cli.run(["heatmap", "--gaze", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "ParseError" in capsys.readouterr().err
    assert cli.run(["heatmap", "--gaze", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")]) == 1


def test_saliency_k0_is_gaze_heatmap(image_and_gaze, tmp_path):
    img_path, gaze_path, img = image_and_gaze
    out = tmp_path / "sal"
    assert cli.run(["saliency", "--image", str(img_path), "--gaze", str(gaze_path), "--variant", "ga", "--k", "0", "--out", str(out)]) == 0
    gaze = np.array([[40, 22], [41, 21], [38, 24]], dtype=float)
    expected = gaze_heatmap(gaze, img.shape, GbvsParams(k=0))
    assert_array_equal(load_png(out / "saliency.png"), quantize(expected.values))
    stored = np.frombuffer((out / "saliency.bin").read_bytes(), dtype="<f8").reshape(img.shape[:2])
    assert_array_equal(stored, expected.values)


def test_saliency_roi_and_roi_command(image_and_gaze, tmp_path):
    img_path, gaze_path, img = image_and_gaze
    out = tmp_path / "sal"
    assert cli.run(["saliency", "--image", str(img_path), "--gaze", str(gaze_path), "--roi", "--sigma-fraction", "0.2", "--out", str(out)]) == 0
    box = json.loads((out / "box.json").read_text())
    assert set(box) >= {"x1", "y1", "x2", "y2", "threshold"}
    out2 = tmp_path / "roi"
    assert cli.run(["roi", "--saliency", str(out / "saliency.bin"), "--shape", "48", "64", "--out", str(out2)]) == 0
    assert json.loads((out2 / "box.json").read_text()) == box
    assert cli.run(["roi", "--saliency", str(out / "saliency.bin"), "--out", str(out2)]) == 2
    assert cli.run(["roi", "--saliency", str(out / "saliency.bin"), "--shape", "5", "5", "--out", str(out2)]) == 1


def test_heatmap_then_knn(tmp_path):
    rng = np.random.default_rng(0)
    lines = ["# rx=100 ry=100", "t_ms,x,y"]
    frames = []
    for w in range(40):
        on = w % 2 == 0
        for s in range(10):
            t = w * 100 + s * 10
            x, y = (20 + rng.normal(0, 2), 20 + rng.normal(0, 2)) if on else (80 + rng.normal(0, 2), 80 + rng.normal(0, 2))
            lines.append(f"{t},{min(max(x, 0), 100)},{min(max(y, 0), 100)}")
        if on:
            frames.append({"t_ms": w * 100 + 50, "box": {"x1": 10, "y1": 10, "x2": 30, "y2": 30, "class": "obj"}})
    (tmp_path / "g.csv").write_text("\n".join(lines) + "\n")
    (tmp_path / "a.json").write_text(json.dumps({"frames": frames}))
    hm = tmp_path / "hm"
    assert cli.run(["heatmap", "--gaze", str(tmp_path / "g.csv"), "--annotations", str(tmp_path / "a.json"), "--grid", "10", "10", "--window", "100", "--out", str(hm)]) == 0
    meta = json.loads((hm / "features.bin.json").read_text())
    assert meta["shape"] == [40, 100]
    out = tmp_path / "knn"
    assert cli.run(["knn", "--features", str(hm / "features.bin"), "--labels", str(hm / "labels.json"), "--out", str(out)]) == 0
    rep = json.loads((out / "cv_report.json").read_text())
    assert rep["mean"] == 1.0 and rep["seed"] == 0
    assert cli.run(["knn", "--features", str(hm / "features.bin"), "--labels", str(hm / "labels.json"), "--task", "regress", "--out", str(out)]) == 0
    assert json.loads((out / "cv_report.json").read_text())["mean"] == 0.0


def test_distill_command(tmp_path):
    boxes = [BBox2D(0, 0, 10, 10), BBox2D(20, 20, 30, 30), BBox2D(5, 5, 15, 15)]
    save_proposals(boxes, tmp_path / "p.txt")
    out = tmp_path / "d"
    assert cli.run(["distill", "--proposals", str(tmp_path / "p.txt"), "--gaze", "6,6", "--gt", "0,0,10,10", "--out", str(out)]) == 0
    doc = json.loads((out / "distill_report.json").read_text())
    assert doc["indices"] == [0, 2]
    assert doc["sufficiency"]["distilled"]["first_sufficient"] == 1
    assert (out / "distilled.txt").read_text().splitlines() == ["0 0 10 10", "5 5 15 15"]
    assert cli.run(["distill", "--proposals", str(tmp_path / "p.txt"), "--gaze", "6", "--out", str(out)]) == 2


def test_segment_command(tmp_path):
    scene = tabletop_scene(np.random.default_rng(1), n_blobs=2)
    save_xyz(scene.points, tmp_path / "s.xyz")
    g = ",".join(repr(float(v)) for v in scene.blob_centers[0])
    out = tmp_path / "seg"
    assert cli.run(["segment", "--cloud", str(tmp_path / "s.xyz"), f"--gaze={g}", "--z-min=-0.5", "--out", str(out)]) == 0
    idx = json.loads((out / "segmentation.json").read_text())["indices"]
    labels = scene.labels[idx]
    # stray outliers touching the blob may join it; the other blob and the plane never do
    assert (labels == 1).sum() >= 0.95 * (scene.labels == 1).sum()
    assert not np.isin(labels, [0, 2]).any()


def test_label_command(tmp_path):
    save_xyz(cube_cloud((0, 0, 0.1), 0.2, 6), tmp_path / "c.xyz")
    out = tmp_path / "lab"
    assert cli.run(["label", "--cloud", str(tmp_path / "c.xyz"), "--waypoints", "4", "--label", "cube", "--out", str(out)]) == 0
    names = sorted(p.name for p in (out / "omd" / "cube").iterdir())
    assert len(names) == 16 and names[0] == "0000_camera.json"
    assert cli.run(["label", "--out", str(out)]) == 2


def test_eval_command(tmp_path):
    gt = {"categories": [{"id": 1, "name": "cup"}], "annotations": [{"image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10]}]}
    pred = [{"image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10], "score": 0.9}]
    (tmp_path / "gt.json").write_text(json.dumps(gt))
    (tmp_path / "pred.json").write_text(json.dumps({"categories": gt["categories"], "annotations": pred}))
    out = tmp_path / "ev"
    assert cli.run(["eval", "--gt", str(tmp_path / "gt.json"), "--pred", str(tmp_path / "pred.json"), "--out", str(out)]) == 0
    assert json.loads((out / "report.json").read_text())["mAP"] == 1.0


def test_config_file_and_flag_precedence(image_and_gaze, tmp_path):
    img_path, gaze_path, _ = image_and_gaze
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# saliency settings\nk = 0\nvariant = dga\nroi = true\n")
    out = tmp_path / "c"
    assert cli.run(["saliency", "--image", str(img_path), "--gaze", str(gaze_path), "--config", str(cfg), "--variant", "ga", "--out", str(out)]) == 0
    params = json.loads((out / "manifest.json").read_text())["parameters"]
    assert params["k"] == 0 and params["variant"] == "ga" and params["roi"] is True
    cfg.write_text("nonsense_key = 3\n")
    assert cli.run(["saliency", "--image", str(img_path), "--config", str(cfg), "--out", str(out)]) == 2


def test_manifest_records_inputs_and_outputs(image_and_gaze, tmp_path):
    img_path, gaze_path, _ = image_and_gaze
    out = tmp_path / "m"
    assert cli.run(["saliency", "--image", str(img_path), "--gaze", str(gaze_path), "--seed", "7", "--out", str(out)]) == 0
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["seed"] == 7 and doc["command"] == "saliency"
    assert set(doc["inputs"]) == {"image", "gaze"}
    assert sorted(o["path"] for o in doc["outputs"]) == ["overlay.png", "saliency.bin", "saliency.png"]
    assert "numpy" in doc["versions"]


def test_demo_is_deterministic_across_thread_counts(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run(["demo-synthetic", "--frames", "4", "--waypoints", "3", "--seed", "5", "--out", str(a)]) == 0
    assert cli.run(["demo-synthetic", "--frames", "4", "--waypoints", "3", "--seed", "5", "--threads", "3", "--out", str(b)]) == 0
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_demo_outputs_feed_other_commands(tmp_path):
    demo = tmp_path / "demo"
    assert cli.run(["demo-synthetic", "--frames", "2", "--waypoints", "3", "--out", str(demo)]) == 0
    frame = demo / "frames" / "frame000"
    argv = ["saliency", "--image", f"{frame}.png", "--gaze", f"{frame}_gaze.csv", "--roi", "--out", str(tmp_path / "s")]
    assert cli.run(argv) == 0
    argv = ["eval", "--gt", str(demo / "ground_truth.json"), "--pred", str(demo / "detections.json"), "--out", str(tmp_path / "e")]
    assert cli.run(argv) == 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gazepercept", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
