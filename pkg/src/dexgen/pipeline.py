"""End-to-end pipeline: label synthesis, graspness, training, sampling, proxy evaluation.

Every function here is a pure function of its inputs, the resolved
configuration and one integer seed; sub-tasks draw from generators spawned
deterministically from that seed.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import zlib
from dataclasses import dataclass, fields

import numpy as np

from .diffusion import DiffusionSchedule, RankWeights, denoise, rank_order, rank_score
from .geometry.hand import default_hand, penetration_depth
from .geometry.scene import (Scene, SceneObject, look_at, render_depth_cloud, resting_pose,
                             scene_to_dict)
from .geometry.shapes import PrimitiveShape, sample_surface
from .geometry.transforms import RigidPose, farthest_point_sample
from .graspness import GraspLabel, absolute_grasp, graspness_field, propose_seeds
from .neural.descriptor import descriptors
from .neural.heads import GraspModel
from .neural.training import TrainingConfig, prepare_scene, train_loop
from .synthesis import (CONTACT_DISTANCE, PENETRATION_LIMIT, InitGrid, OptimizerConfig,
                        compose_scene_labels, contact_set, fibonacci_sphere, filter_grasps,
                        init_pose_grid, isolated, synthesize)
from .wrench import SynthesisThresholds, resists_gravity_6dir

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class ProvenanceError(ValueError):
    """Inputs were produced for a different scene or configuration."""


_TRAIN_KEYS = [f.name for f in fields(TrainingConfig) if f.name != "seed"]

DESK = {
    "synth": {
        "grasp_points": 32,
        "surface_samples": 2000,
        "n_approach": 16,
        "approach_cone_deg": 60.0,
        "min_approach_z": 0.3,
        "depths": [0.01, 0.02],
        "n_inplane": 4,
        "retreat": 0.04,
        "iterations": 150,
        "tau_fc": 0.05,
        "tau_lambda": 0.1,
        "p_keep": 0.9,
        "mu": 0.2,
        "mass": 0.1,
    },
    "render": {
        "width": 64,
        "height": 64,
        "fov_deg": 50.0,
        "target_height": 0.04,
        # (azimuth deg, elevation deg, distance m) around the scene center
        "views": [[float(a), 50.0, 0.55] for a in range(0, 360, 45)],
    },
    "features": {"radius": 0.03},
    "train": {k: getattr(TrainingConfig.profile("desk"), k) for k in _TRAIN_KEYS},
    "sample": {
        "k": 128,
        "n_seeds": 1024,
        # a 64x64 view holds only a few hundred object points, so 1% would leave 2-3 seeds
        "fraction": 0.1,
        "eta": 10.0,
        "t_inference": 200,
        "view": [75.0, 50.0, 0.55],
    },
    "eval": {"top_k": 10, "mu": 0.2, "mass": 0.1},
}

PAPER_OVERRIDES = {
    "synth": {"n_approach": 256, "approach_cone_deg": 180.0, "min_approach_z": -1.0,
              "depths": [0.0, 0.01, 0.02, 0.03], "n_inplane": 12, "iterations": 600},
    "train": {k: getattr(TrainingConfig.profile("paper"), k) for k in _TRAIN_KEYS},
    "sample": {"fraction": 0.01},
}

PROFILES = ("desk", "paper")


def _merge(base, over, where=""):
    for key, value in over.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(f"unknown config key '{path}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{path}' must be a mapping")
            _merge(base[key], value, path)
        else:
            base[key] = value
    return base


@dataclass(frozen=True)
class RunConfig:
    profile: str
    values: dict

    @classmethod
    def resolve(cls, profile="desk", overrides=None):
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; expected one of {PROFILES}")
        values = copy.deepcopy(DESK)
        if profile == "paper":
            _merge(values, copy.deepcopy(PAPER_OVERRIDES))
        if overrides:
            overrides = dict(overrides)
            if overrides.pop("profile", profile) != profile:
                raise ConfigError("profile given in the config file differs from --profile")
            _merge(values, overrides)
        return cls(profile, values)

    @classmethod
    def load(cls, path, profile="desk"):
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.resolve(raw.get("profile", profile), raw)

    def __getitem__(self, section):
        return self.values[section]

    def to_dict(self):
        return {"profile": self.profile, **copy.deepcopy(self.values)}

    def canonical(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def training(self, seed):
        return TrainingConfig(seed=int(seed), **self.values["train"])


def scene_hash(scene):
    raw = json.dumps(scene_to_dict(scene), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(raw.encode()).hexdigest()[:16]


def sub_rng(seed, *keys):
    """Generator for one named sub-task of a run seeded with ``seed``."""
    tag = zlib.crc32("/".join(str(k) for k in keys).encode())
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2 ** 64 - 1), tag]))


def sub_seed(seed, *keys):
    return int(sub_rng(seed, *keys).integers(0, 2 ** 63 - 1))


def demo_scene(table_height=0.0):
    """Sphere, box and cylinder resting side by side on a table."""
    objs = []
    for oid, (kind, dims, xy, yaw) in enumerate([
            ("sphere", (0.035,), (-0.16, 0.0), 0.0),
            ("box", (0.05, 0.06, 0.08), (0.0, 0.04), 0.4),
            ("cylinder", (0.03, 0.1), (0.16, -0.02), 0.0)]):
        shape = PrimitiveShape(kind, dims)
        objs.append(SceneObject(oid, shape, resting_pose(shape, table_height, xy, yaw)))
    return Scene(tuple(objs), table_height)


def camera_from_view(scene, view, target_height):
    """Camera looking at the scene center from (azimuth, elevation, distance)."""
    az, el, dist = (float(v) for v in view)
    target = np.array([0.0, 0.0, scene.table_height + target_height])
    a, e = math.radians(az), math.radians(el)
    eye = target + dist * np.array([math.cos(e) * math.cos(a), math.cos(e) * math.sin(a), math.sin(e)])
    return look_at(eye, target)


def render(scene, camera, cfg):
    r = cfg["render"]
    return render_depth_cloud(scene, camera, int(r["width"]), int(r["height"]), math.radians(r["fov_deg"]))


# ---------------------------------------------------------------- synthesis

@dataclass
class SynthResult:
    labels: list
    report: dict


def object_inits(obj, hand, cfg, rng, world_rotation=np.eye(3)):
    """Initial poses for one object in its own frame.

    Grasp points are FPS-spread surface samples; approach directions come
    from a Fibonacci sphere, restricted to a cone about the surface normal
    and to directions not coming from under the table.
    """
    s = cfg["synth"]
    pts, nrm, _ = sample_surface(obj.shape, int(s["surface_samples"]), seed=int(rng.integers(0, 2 ** 31)))
    picked = farthest_point_sample(pts, min(int(s["grasp_points"]), len(pts)),
                                   start_index=int(rng.integers(0, len(pts))))
    dirs = fibonacci_sphere(int(s["n_approach"]))
    cos_cone = math.cos(math.radians(float(s["approach_cone_deg"])))
    world_z = (dirs @ (world_rotation @ obj.pose.rotation).T)[:, 2]
    inits = []
    for i in picked:
        keep = (dirs @ nrm[i] >= cos_cone - 1e-12) & (world_z >= float(s["min_approach_z"]))
        if not np.any(keep):
            continue
        grid = InitGrid(int(keep.sum()), tuple(s["depths"]), int(s["n_inplane"]), float(s["retreat"]))
        inits += init_pose_grid(pts[i], grid, hand, approaches=dirs[keep])
    return inits


def synth_scene(scene, hand, cfg, seed):
    """Per-object synthesis and filtering, then scene-level composition."""
    s = cfg["synth"]
    thresholds = SynthesisThresholds(float(s["tau_fc"]), float(s["tau_lambda"]), float(s["p_keep"]))
    per_object, report = {}, {"objects": {}}
    totals = {"n_inits": 0, "n_in": 0, "n_collision_free": 0, "n_stable": 0}
    for obj in scene.objects:
        local = SceneObject(obj.object_id, obj.shape, RigidPose.identity())
        rng = sub_rng(seed, "synth", obj.object_id)
        inits = object_inits(local, hand, cfg, rng, obj.pose.rotation)
        if not inits:
            report["objects"][str(obj.object_id)] = {"n_inits": 0}
            continue
        opt = OptimizerConfig(iterations=int(s["iterations"]), seed=sub_seed(seed, "opt", obj.object_id))
        cands = synthesize(local, hand, inits, opt, thresholds)
        kept, rep = filter_grasps(cands, isolated(local), hand, float(s["mu"]), float(s["mass"]))
        per_object[obj.object_id] = kept
        entry = {"n_inits": len(inits), **rep.to_dict()}
        report["objects"][str(obj.object_id)] = entry
        totals["n_inits"] += len(inits)
        for key in ("n_in", "n_collision_free", "n_stable"):
            totals[key] += entry[key]
        log.info("object %d: %s", obj.object_id, entry)
    composed = compose_scene_labels(per_object, scene, hand)
    # gravity axes are world axes, so stability found in a rotated object frame is re-checked here
    labels, _ = filter_grasps(composed, scene, hand, float(s["mu"]), float(s["mass"]), include_table=True)
    totals["n_composed"] = len(composed)
    totals["valid_rate"] = totals["n_stable"] / totals["n_in"] if totals["n_in"] else 0.0
    totals["n_scene_labels"] = len(labels)
    report.update(totals)
    return SynthResult(labels, report)


# ---------------------------------------------------------------- graspness and training

def training_views(scene, cfg):
    r = cfg["render"]
    return [camera_from_view(scene, v, float(r["target_height"])) for v in r["views"]]


def build_training_scenes(scene, labels, hand, cfg, cameras=None):
    cameras = cameras if cameras is not None else training_views(scene, cfg)
    out = []
    for cam in cameras:
        cloud = render(scene, cam, cfg)
        out.append(prepare_scene(cloud, labels, hand, float(cfg["features"]["radius"]),
                                 int(cfg["train"]["feature_dim"])))
    return out


def graspness_record(scene, labels, hand, camera, cfg):
    cloud = render(scene, camera, cfg)
    fld = graspness_field(labels, cloud, hand)
    return {
        "camera": camera.to_dict(),
        "points": [[float(v) for v in p] for p in cloud.points],
        "object_label": [int(v) for v in cloud.object_label],
        "GS": [None if not m else float(s) for s, m in zip(fld.scores, fld.object_mask)],
        "seed_index": [int(v) for v in fld.seed_index],
    }


def train_model(scene, labels, hand, cfg, seed):
    scenes = build_training_scenes(scene, labels, hand, cfg)
    n = sum(len(s.grasps) for s in scenes)
    if n == 0:
        raise ValueError("no label has a visible seed point in any training view")
    log.info("training on %d views, %d seeded labels", len(scenes), n)
    return train_loop(scenes, cfg.training(sub_seed(seed, "train")), hand.dof)


# ---------------------------------------------------------------- sampling

@dataclass
class Proposal:
    label: GraspLabel
    seed_index: int
    g: np.ndarray
    log_p: float
    graspness: float
    score: float

    def to_dict(self, rank):
        d = self.label.to_dict()
        d.pop("energy")
        d.pop("P_t")
        d.update({"rank": rank, "seed_index": self.seed_index, "g_E": [float(v) for v in self.g],
                  "log_p": self.log_p, "GS": self.graspness, "score": self.score})
        return d


def sample_proposals(model, scene, hand, camera, cfg, seed, k=None):
    """Seeds from predicted graspness, K denoised grasps, ranked best first."""
    sc = cfg["sample"]
    k = int(sc["k"] if k is None else k)
    if k < 1:
        raise ValueError("k must be positive")
    cloud = render(scene, camera, cfg)
    feats = descriptors(cloud.points, float(cfg["features"]["radius"]), width=model.feature_dim)
    logits, gs = model.graspness.predict(feats)
    mask = logits[:, 1] > logits[:, 0]
    if not np.any(mask):
        log.warning("no point predicted as object; proposing seeds from the whole cloud")
        mask = np.ones(len(cloud), dtype=bool)
    seeds = propose_seeds(gs, mask, cloud.points, int(sc["n_seeds"]), float(sc["fraction"]))
    assign = seeds[np.arange(k) % len(seeds)]
    f = feats[assign]
    rng = sub_rng(seed, "sample")
    sched = DiffusionSchedule(t_inference=int(sc["t_inference"]))
    res = denoise(model.denoiser.field(), f, rng.standard_normal((k, 12)), sched, with_log_prob=True)
    theta = hand.clamp(model.joints.predict(f, res.translation, res.rotation), warn=False)
    score = rank_score(res.log_prob, gs[assign], RankWeights(float(sc["eta"])))
    world = cloud.world_points()
    out = []
    for i in rank_order(score):
        lab = absolute_grasp(res.translation[i], res.rotation[i], theta[i], world[assign[i]],
                             camera, object_id=-1)
        out.append(Proposal(lab, int(assign[i]), res.g[i], float(res.log_prob[i]), float(gs[assign[i]]),
                            float(score[i])))
    return out, len(seeds)


# ---------------------------------------------------------------- proxy evaluation

def grasped_object(state, scene):
    """Object with the most fingertips within the contact distance (None if none)."""
    best, best_key = None, None
    for obj in scene.objects:
        gap = obj.sdf(state.contacts) - state.contact_radii
        n = int(np.sum(gap < CONTACT_DISTANCE))
        key = (n, -float(np.mean(np.abs(gap))))
        if n > 0 and (best_key is None or key > best_key):
            best, best_key = obj, key
    return best


def proxy_success(label, scene, hand, mu=0.2, mass=0.1):
    """(success, penetration): collision-free against the whole scene and gravity-denying."""
    state = hand.forward_kinematics(label.wrist.translation, label.wrist.rotation, label.theta)
    pen = float(penetration_depth(state, scene, include_table=True))
    if not pen < PENETRATION_LIMIT:
        return False, pen
    if label.object_id >= 0:
        obj = scene.object(label.object_id)
    else:
        obj = grasped_object(state, scene)
        if obj is None:
            return False, pen
    cs = contact_set(state, obj)
    if cs is None:
        return False, pen
    return bool(resists_gravity_6dir(cs, mu=mu, mass=mass)), pen


def evaluate(labels, scene, hand, cfg, n_seeds=0):
    e = cfg["eval"]
    top = labels[:int(e["top_k"])]
    if not top:
        raise ValueError("nothing to evaluate")
    results = [proxy_success(g, scene, hand, float(e["mu"]), float(e["mass"])) for g in top]
    return {
        "top1_proxy_success": bool(results[0][0]),
        "topk_proxy_rate": float(np.mean([r[0] for r in results])),
        "mean_penetration_m": float(np.mean([r[1] for r in results])),
        "n_seeds": int(n_seeds),
    }


def default_hand_for(name):
    if name in (None, "", "dex16"):
        return default_hand()
    raise ValueError(f"unknown built-in hand {name!r}")


__all__ = [
    "ConfigError", "ProvenanceError", "RunConfig", "DESK", "PAPER_OVERRIDES", "scene_hash", "sub_rng",
    "sub_seed", "demo_scene", "camera_from_view", "render", "SynthResult", "object_inits",
    "synth_scene", "training_views", "build_training_scenes", "graspness_record", "train_model",
    "Proposal", "sample_proposals", "grasped_object", "proxy_success", "evaluate",
]
