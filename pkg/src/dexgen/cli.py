"""Command-line driver: ``dexgen {synth,graspness,train,sample,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import pipeline as pl
from .geometry.hand import default_hand, load_hand
from .geometry.scene import SceneFormatError, load_scene, look_at, save_scene
from .geometry.transforms import RigidPose
from .graspness import GraspLabel
from .neural.heads import GraspModel
from .neural.training import write_loss_csv

log = logging.getLogger("dexgen")

EXIT_EMPTY = 3
EXIT_INPUT = 2


class CliError(RuntimeError):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise CliError(f"{what} not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{what} is not valid JSON: {exc}") from exc


def _config(args):
    if args.config:
        cfg = pl.RunConfig.load(args.config, args.profile)
    else:
        cfg = pl.RunConfig.resolve(args.profile)
    return cfg


def _out_dir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _save_config(out, cfg, seed, command):
    _write_json(os.path.join(out, f"{command}_config.json"),
                {"command": command, "seed": seed, "config_hash": cfg.hash, "config": cfg.to_dict()})


def _hand(args):
    return load_hand(args.hand) if getattr(args, "hand", None) else default_hand()


def _camera(path, scene, cfg):
    if not path:
        return pl.camera_from_view(scene, cfg["sample"]["view"], float(cfg["render"]["target_height"]))
    d = _read_json(path, "camera file")
    if "eye" in d:
        return look_at(d["eye"], d.get("target", [0.0, 0.0, 0.0]), d.get("up", [0.0, 0.0, 1.0]))
    return RigidPose.from_dict(d)


def _labels_from(raw):
    recs = raw["labels"] if isinstance(raw, dict) else raw
    return [GraspLabel.from_dict(d) for d in recs]


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    cfg = _config(args)
    scene = load_scene(args.scene)
    hand = _hand(args)
    out = _out_dir(args)
    res = pl.synth_scene(scene, hand, cfg, args.seed)
    sh = pl.scene_hash(scene)
    records = []
    for g in res.labels:
        d = g.to_dict()
        d["scene_id"] = sh
        records.append(d)
    _write_json(os.path.join(out, "labels.json"),
                {"config_hash": cfg.hash, "scene_hash": sh, "hand": hand.name, "labels": records})
    _write_json(os.path.join(out, "synth_report.json"), {"config_hash": cfg.hash, **res.report})
    save_scene(scene, os.path.join(out, "scene.json"))
    _save_config(out, cfg, args.seed, "synth")
    print(json.dumps({k: res.report[k] for k in ("n_in", "n_collision_free", "n_stable", "valid_rate",
                                                   "n_scene_labels")}))
    if not res.labels:
        raise CliError("synthesis produced no valid label", EXIT_EMPTY)


def cmd_graspness(args):
    cfg = _config(args)
    scene = load_scene(args.scene)
    hand = _hand(args)
    labels = _labels_from(_read_json(args.labels, "labels file"))
    camera = _camera(args.camera, scene, cfg)
    out = _out_dir(args)
    rec = pl.graspness_record(scene, labels, hand, camera, cfg)
    rec.update({"config_hash": cfg.hash, "scene_hash": pl.scene_hash(scene)})
    _write_json(os.path.join(out, "graspness.json"), rec)
    _save_config(out, cfg, args.seed, "graspness")


def cmd_train(args):
    cfg = _config(args)
    scene_path = os.path.join(args.data, "scene.json")
    labels_path = os.path.join(args.data, "labels.json")
    scene = load_scene(scene_path)
    raw = _read_json(labels_path, "labels file")
    if isinstance(raw, dict) and raw.get("scene_hash") not in (None, pl.scene_hash(scene)):
        raise pl.ProvenanceError("labels were synthesized for a different scene")
    labels = _labels_from(raw)
    if not labels:
        raise CliError("labels file holds no labels", EXIT_EMPTY)
    hand = _hand(args)
    out = _out_dir(args)
    try:
        result = pl.train_model(scene, labels, hand, cfg, args.seed)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_EMPTY) from exc
    meta = {"config_hash": cfg.hash, "scene_hash": pl.scene_hash(scene), "hand": hand.name,
            "dof": hand.dof, "feature_dim": result.model.feature_dim,
            "radius": float(cfg["features"]["radius"])}
    result.model.save(os.path.join(out, "model.ckpt"), meta)
    write_loss_csv(result.history, os.path.join(out, "loss.csv"))
    _save_config(out, cfg, args.seed, "train")
    last = result.history[-1]
    print(json.dumps({"iterations": len(result.history), "final_total_loss": float(last[5])}))


def _load_model(path, cfg, hand):
    try:
        model, meta = GraspModel.load(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load checkpoint: {exc}") from exc
    if meta.get("dof", model.dof) != hand.dof or model.dof != hand.dof:
        raise CliError(f"checkpoint predicts {model.dof} joint values, hand has {hand.dof}")
    if model.feature_dim != int(cfg["train"]["feature_dim"]):
        raise CliError(f"checkpoint feature width {model.feature_dim} does not match the config "
                       f"({cfg['train']['feature_dim']})")
    if float(meta.get("radius", cfg["features"]["radius"])) != float(cfg["features"]["radius"]):
        raise CliError("checkpoint was trained with a different descriptor radius")
    return model, meta


def cmd_sample(args):
    cfg = _config(args)
    scene = load_scene(args.scene)
    hand = _hand(args)
    model, meta = _load_model(args.checkpoint, cfg, hand)
    camera = _camera(args.camera, scene, cfg)
    out = _out_dir(args)
    props, n_seeds = pl.sample_proposals(model, scene, hand, camera, cfg, args.seed, args.k)
    _write_json(os.path.join(out, "proposals.json"), {
        "config_hash": cfg.hash, "scene_hash": pl.scene_hash(scene),
        "checkpoint_config_hash": meta.get("config_hash"), "camera": camera.to_dict(),
        "n_seeds": n_seeds, "proposals": [p.to_dict(r) for r, p in enumerate(props)]})
    _save_config(out, cfg, args.seed, "sample")
    print(json.dumps({"n_proposals": len(props), "n_seeds": n_seeds, "best_score": props[0].score}))


def cmd_eval(args):
    start = time.perf_counter()
    cfg = _config(args)
    scene = load_scene(args.scene)
    hand = _hand(args)
    raw = _read_json(args.proposals, "proposals file")
    if isinstance(raw, dict) and not args.allow_mismatch:
        if raw.get("scene_hash") not in (None, pl.scene_hash(scene)):
            raise pl.ProvenanceError("proposals were produced for a different scene "
                                     "(pass --allow-mismatch to evaluate anyway)")
    if isinstance(raw, dict) and "proposals" in raw:
        recs = sorted(raw["proposals"], key=lambda d: d["rank"])
        labels = [GraspLabel.from_dict(d) for d in recs]
        n_seeds = int(raw.get("n_seeds", 0))
    else:
        labels = _labels_from(raw)
        n_seeds = 0
    out = _out_dir(args)
    metrics = pl.evaluate(labels, scene, hand, cfg, n_seeds)
    metrics["runtime_s"] = time.perf_counter() - start
    _write_json(os.path.join(out, "metrics.json"), metrics)
    _save_config(out, cfg, args.seed, "eval")
    print(json.dumps(metrics))


# ---------------------------------------------------------------- parser

def _seed(text):
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="dexgen", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file overriding profile values")
        p.add_argument("--seed", type=_seed, default=0)
        p.add_argument("--profile", choices=pl.PROFILES, default="desk")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--hand", help="hand description JSON (default: built-in 16-DoF hand)")

    p = sub.add_parser("synth", help="synthesize and filter grasp labels for a scene")
    common(p)
    p.add_argument("--scene", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("graspness", help="ground-truth graspness of one rendered view")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--camera", help="camera JSON: {eye, target[, up]} or {t, R}")
    p.set_defaults(func=cmd_graspness)

    p = sub.add_parser("train", help="train all heads on a synthesized dataset directory")
    common(p)
    p.add_argument("--data", required=True, help="directory holding scene.json and labels.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="propose and rank grasps for one view")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--camera")
    p.add_argument("--k", type=_positive, default=None, help="number of samples")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="quasi-static proxy evaluation of ranked proposals or labels")
    common(p)
    p.add_argument("--proposals", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--allow-mismatch", action="store_true",
                   help="evaluate even if the proposals name a different scene")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"dexgen {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (SceneFormatError, pl.ConfigError, pl.ProvenanceError) as exc:
        print(f"dexgen {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
