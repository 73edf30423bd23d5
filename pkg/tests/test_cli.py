import json

import numpy as np
import pytest

from dexgen.cli import EXIT_EMPTY, EXIT_INPUT, main
from dexgen.geometry import PrimitiveShape, Scene, SceneObject
from dexgen.geometry.scene import resting_pose, save_scene

SMALL = {
    "synth": {"grasp_points": 4, "n_approach": 16, "depths": [0.01], "n_inplane": 2, "iterations": 80},
    "train": {"iterations": 30, "points_per_scene": 64, "grasps_per_scene": 8, "scenes_per_batch": 2},
    "render": {"views": [[0.0, 50.0, 0.55], [120.0, 50.0, 0.55]]},
    "sample": {"t_inference": 20, "n_seeds": 16},
}


def sphere_scene(x=0.0):
    shape = PrimitiveShape("sphere", (0.035,))
    return Scene((SceneObject(0, shape, resting_pose(shape, 0.0, (x, 0.0), 0.3)),), 0.0)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """Synth, train and sample once on a one-sphere scene with a small config."""
    d = tmp_path_factory.mktemp("cli")
    save_scene(sphere_scene(), d / "scene.json")
    with open(d / "cfg.json", "w") as fh:
        json.dump(SMALL, fh)
    common = ["--config", str(d / "cfg.json")]
    assert main(["synth", "--scene", str(d / "scene.json"), "--out", str(d / "synth")] + common) == 0
    assert main(["train", "--data", str(d / "synth"), "--out", str(d / "train")] + common) == 0
    assert main(["sample", "--checkpoint", str(d / "train" / "model.ckpt"), "--scene", str(d / "scene.json"),
                 "--out", str(d / "sample"), "--k", "128"] + common) == 0
    return d, common


def _load(path):
    with open(path) as fh:
        return json.load(fh)


def test_synth_outputs(run):
    d, _ = run
    labels = _load(d / "synth" / "labels.json")
    report = _load(d / "synth" / "synth_report.json")
    assert labels["labels"] and report["n_scene_labels"] == len(labels["labels"])
    rec = labels["labels"][0]
    assert len(rec["theta"]) == 16 and rec["scene_id"] == labels["scene_hash"]
    assert 0.0 <= report["valid_rate"] <= 1.0
    cfg = _load(d / "synth" / "synth_config.json")
    assert cfg["config"]["synth"]["iterations"] == 80 and cfg["seed"] == 0


def test_train_outputs(run):
    d, _ = run
    lines = (d / "train" / "loss.csv").read_text().splitlines()
    assert lines[0].startswith("iteration,") and len(lines) == 31
    assert (d / "train" / "model.ckpt").stat().st_size > 0


def test_sample_scores_are_ordered(run):
    d, _ = run
    props = _load(d / "sample" / "proposals.json")["proposals"]
    assert len(props) == 128
    assert [p["rank"] for p in props] == list(range(128))
    scores = np.array([p["score"] for p in props])
    assert np.all(np.diff(scores) <= 0)
    for p in props[:5]:
        r = np.array(p["R"]).reshape(3, 3)
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-9) and np.linalg.det(r) > 0
        assert p["score"] == pytest.approx(p["log_p"] + 10.0 * p["GS"])


def test_eval_on_labels_passes(run):
    d, common = run
    assert main(["eval", "--proposals", str(d / "synth" / "labels.json"), "--scene", str(d / "scene.json"),
                 "--out", str(d / "evallab")] + common) == 0
    m = _load(d / "evallab" / "metrics.json")
    assert m["top1_proxy_success"] is True and m["topk_proxy_rate"] == 1.0


def test_eval_on_proposals_writes_metrics(run):
    d, common = run
    assert main(["eval", "--proposals", str(d / "sample" / "proposals.json"), "--scene", str(d / "scene.json"),
                 "--out", str(d / "eval")] + common) == 0
    m = _load(d / "eval" / "metrics.json")
    assert set(m) >= {"top1_proxy_success", "topk_proxy_rate", "mean_penetration_m", "n_seeds", "runtime_s"}


def test_provenance_mismatch(run, tmp_path):
    d, common = run
    save_scene(sphere_scene(0.05), tmp_path / "other.json")
    args = ["eval", "--proposals", str(d / "sample" / "proposals.json"), "--scene", str(tmp_path / "other.json"),
            "--out", str(tmp_path / "e")] + common
    assert main(args) == EXIT_INPUT
    assert main(args + ["--allow-mismatch"]) == 0


def test_sample_rejects_wrong_feature_width(run, tmp_path):
    d, _ = run
    with open(tmp_path / "cfg.json", "w") as fh:
        json.dump({"train": {"feature_dim": 96}}, fh)
    assert main(["sample", "--checkpoint", str(d / "train" / "model.ckpt"), "--scene", str(d / "scene.json"),
                 "--out", str(tmp_path / "s"), "--config", str(tmp_path / "cfg.json")]) == EXIT_INPUT


def test_malformed_scene(tmp_path, capsys):
    (tmp_path / "bad.json").write_text('{"table_height": 0.0, "objects": [{"id": 0, "kind": "torus", "dims": [1], "pose": {"t": [0, 0, 0], "R": [1, 0, 0, 0, 1, 0, 0, 0, 1]}}]}')
    assert main(["synth", "--scene", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == EXIT_INPUT
    assert "dexgen synth" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    save_scene(sphere_scene(), tmp_path / "scene.json")
    (tmp_path / "cfg.json").write_text('{"synth": {"iteratoins": 3}}')
    code = main(["synth", "--scene", str(tmp_path / "scene.json"), "--out", str(tmp_path / "o"),
                 "--config", str(tmp_path / "cfg.json")])
    assert code == EXIT_INPUT
    assert "synth.iteratoins" in capsys.readouterr().err


def test_train_without_labels(tmp_path):
    save_scene(sphere_scene(), tmp_path / "scene.json")
    (tmp_path / "labels.json").write_text('{"labels": []}')
    assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "t")]) == EXIT_EMPTY


def test_missing_proposals_file(tmp_path):
    save_scene(sphere_scene(), tmp_path / "scene.json")
    assert main(["eval", "--proposals", str(tmp_path / "none.json"), "--scene", str(tmp_path / "scene.json"),
                 "--out", str(tmp_path / "e")]) == EXIT_INPUT


def test_bad_seed_argument(tmp_path):
    with pytest.raises(SystemExit):
        main(["synth", "--scene", "x.json", "--out", str(tmp_path), "--seed", "-1"])
