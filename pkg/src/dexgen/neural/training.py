"""Joint training of the graspness head, the denoiser and the joint head."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..diffusion import DiffusionSchedule, K_TRANS, embed, noise_sample, velocity_target
from ..graspness import graspness_field, relative_grasp
from .descriptor import DEFAULT_RADIUS, FEATURE_DIM, descriptors, roll_matrix, rotate_descriptor
from .heads import GraspModel
from .losses import cross_entropy, mse, smooth_l1
from .mlp import AdamState, adam_step

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("iteration", "L_o", "L_g", "L_d", "L_theta", "total", "lr")


class TrainingDivergence(FloatingPointError):
    def __init__(self, iteration, losses):
        super().__init__(f"non-finite loss at iteration {iteration}: {losses}")
        self.iteration = iteration
        self.losses = losses


@dataclass(frozen=True)
class TrainingConfig:
    scenes_per_batch: int = 8
    grasps_per_scene: int = 64
    points_per_scene: int = 512
    learning_rate: float = 1e-3
    iterations: int = 5000
    lambda_o: float = 1.0
    lambda_g: float = 1.0
    lambda_d: float = 10.0
    lambda_theta: float = 1.0
    n_points: int = 4096
    feature_dim: int = FEATURE_DIM
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("scenes_per_batch", "grasps_per_scene", "points_per_scene", "iterations",
                     "n_points", "feature_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("lambda_o", "lambda_g", "lambda_d", "lambda_theta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @classmethod
    def profile(cls, name, **overrides):
        if name == "desk":
            base = cls()
        elif name == "paper":
            base = cls(iterations=50000, n_points=40000, feature_dim=512)
        else:
            raise ValueError(f"unknown profile {name!r}")
        return replace(base, **overrides)


def cosine_lr(iteration, total, lr0):
    """Cosine decay from ``lr0`` at the first iteration to 0 at the last."""
    if total <= 1:
        return lr0
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * iteration / (total - 1)))


# ---------------------------------------------------------------- data

@dataclass
class SceneGrasp:
    seed_index: int
    object_id: int
    translation: np.ndarray   # wrist relative to the seed, camera axes
    rotation: np.ndarray
    theta: np.ndarray


@dataclass
class TrainingScene:
    points: np.ndarray        # (N, 3) camera frame
    features: np.ndarray      # (N, F)
    object_mask: np.ndarray   # (N,) bool
    graspness: np.ndarray     # (N,) ln-scale, nan off objects
    grasps: list = field(default_factory=list)

    def groups(self):
        out = {}
        for k, g in enumerate(self.grasps):
            out.setdefault(g.object_id, []).append(k)
        return out


def prepare_scene(cloud, labels, hand, radius=DEFAULT_RADIUS, feature_dim=FEATURE_DIM):
    """Descriptors, ground-truth graspness and seed-relative grasps for one view."""
    fld = graspness_field(labels, cloud, hand)
    world = cloud.world_points()
    grasps = []
    for g, s in zip(labels, fld.seed_index):
        if s < 0:
            continue
        t, r, th = relative_grasp(g, world[s], cloud.camera_pose)
        grasps.append(SceneGrasp(int(s), g.object_id, t, r, th))
    feats = descriptors(cloud.points, radius, width=feature_dim)
    return TrainingScene(cloud.points.copy(), feats, cloud.object_mask.copy(), fld.scores, grasps)


def rebalanced_sample(groups, count, rng):
    """Draw ``count`` items: a uniform non-empty group, then a uniform member."""
    keys = [k for k in sorted(groups) if len(groups[k]) > 0]
    if not keys:
        raise ValueError("no labels to sample from")
    which = rng.integers(0, len(keys), size=count)
    out = []
    for w in which:
        members = groups[keys[w]]
        out.append(members[rng.integers(0, len(members))])
    return out


def augment_rotation(scene, angle):
    """Roll the whole example about the camera's optical axis by ``angle``."""
    rz = roll_matrix(angle)
    grasps = [SceneGrasp(g.seed_index, g.object_id, rz @ g.translation, rz @ g.rotation, g.theta.copy())
              for g in scene.grasps]
    return TrainingScene(scene.points @ rz.T, rotate_descriptor(scene.features, angle),
                         scene.object_mask.copy(), scene.graspness.copy(), grasps)


# ---------------------------------------------------------------- loss

@dataclass
class Batch:
    point_features: np.ndarray
    point_labels: np.ndarray
    point_scores: np.ndarray
    seed_features: np.ndarray
    translation: np.ndarray
    rotation: np.ndarray
    theta: np.ndarray
    steps: np.ndarray
    noise: np.ndarray


def draw_batch(scenes, cfg, sched, rng):
    pf, pl, ps, sf, tr, rot, th = [], [], [], [], [], [], []
    usable = [s for s in scenes if s.grasps]
    if not usable:
        raise ValueError("no training scene has grasp labels")
    for _ in range(cfg.scenes_per_batch):
        scene = usable[rng.integers(0, len(usable))]
        angle = rng.uniform(0.0, 2.0 * math.pi) if cfg.augment else 0.0
        rz = roll_matrix(angle)
        n = len(scene.points)
        pick = rng.choice(n, size=min(cfg.points_per_scene, n), replace=False)
        pf.append(rotate_descriptor(scene.features[pick], angle))
        pl.append(scene.object_mask[pick].astype(np.int64))
        ps.append(scene.graspness[pick])
        # rotating only the drawn rows is the same as rolling the whole scene first
        chosen = [scene.grasps[k] for k in rebalanced_sample(scene.groups(), cfg.grasps_per_scene, rng)]
        sf.append(rotate_descriptor(scene.features[[g.seed_index for g in chosen]], angle))
        tr.append(np.array([g.translation for g in chosen]) @ rz.T)
        rot.append(rz @ np.array([g.rotation for g in chosen]))
        th.append(np.array([g.theta for g in chosen]))
    sf, tr, rot, th = (np.concatenate(a) for a in (sf, tr, rot, th))
    m = len(sf)
    steps = rng.integers(1, sched.t_train + 1, size=m)
    noise = rng.standard_normal((m, 12))
    return Batch(np.concatenate(pf), np.concatenate(pl), np.concatenate(ps), sf, tr, rot, th, steps, noise)


def _graspness_terms(gnet, batch, cfg):
    out, cache = gnet.forward(batch.point_features, keep_cache=True)
    l_o, d_logits = cross_entropy(out[:, :2], batch.point_labels)
    # graspness is only defined on object points
    mask = batch.point_labels.astype(bool)
    l_g, d_gs = smooth_l1(out[mask, 2], batch.point_scores[mask])
    d_out = np.zeros_like(out)
    d_out[:, :2] = cfg.lambda_o * d_logits
    d_out[mask, 2] = cfg.lambda_g * d_gs
    grads, _ = gnet.backward(cache, d_out)
    return l_o, l_g, grads


def loss_and_grads(model, batch, cfg, sched=DiffusionSchedule(), k_trans=K_TRANS):
    """Weighted total loss, its components and gradients for ``model.parameters()``."""
    # heads with zero weight are skipped (their gradients are zero)
    gnet = model.graspness.net
    if cfg.lambda_o == 0 and cfg.lambda_g == 0:
        l_o = l_g = 0.0
        g_grads = [np.zeros_like(p) for p in gnet.parameters()]
    else:
        l_o, l_g, g_grads = _graspness_terms(gnet, batch, cfg)

    # denoiser
    g = embed(batch.translation, batch.rotation, k_trans)
    ab = sched.alpha_bar(batch.steps)
    x = noise_sample(g, ab, batch.noise)
    v = velocity_target(g, ab, batch.noise)
    dnet = model.denoiser.net
    pred, dcache = dnet.forward(model.denoiser.inputs(x, batch.seed_features, batch.steps / sched.t_train),
                                keep_cache=True)
    l_d, d_v = mse(pred, v)
    d_grads, _ = dnet.backward(dcache, cfg.lambda_d * d_v)

    # joint angles
    jnet = model.joints.net
    if cfg.lambda_theta == 0:
        l_t = 0.0
        j_grads = [np.zeros_like(p) for p in jnet.parameters()]
    else:
        th_pred, jcache = jnet.forward(model.joints.inputs(batch.seed_features, batch.translation,
                                                           batch.rotation), keep_cache=True)
        l_t, d_t = smooth_l1(th_pred, batch.theta)
        j_grads, _ = jnet.backward(jcache, cfg.lambda_theta * d_t)

    total = cfg.lambda_o * l_o + cfg.lambda_g * l_g + cfg.lambda_d * l_d + cfg.lambda_theta * l_t
    return total, (l_o, l_g, l_d, l_t), g_grads + d_grads + j_grads


@dataclass
class TrainingResult:
    model: GraspModel
    history: np.ndarray  # rows follow LOSS_COLUMNS


def train_loop(scenes, cfg, dof, model=None, sched=DiffusionSchedule(), log_every=500):
    """Adam with cosine decay on the weighted sum of the four losses.

    Deterministic for a fixed ``cfg.seed``. Raises ``TrainingDivergence``
    on a non-finite loss.
    """
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = GraspModel.create(cfg.feature_dim, dof, rng=rng)
    for s in scenes:
        if s.features.shape[1] != model.feature_dim:
            raise ValueError(f"scene features are {s.features.shape[1]} wide, model expects "
                             f"{model.feature_dim}")
    params = model.parameters()
    state = AdamState.for_params(params)
    history = np.zeros((cfg.iterations, len(LOSS_COLUMNS)))
    for it in range(cfg.iterations):
        batch = draw_batch(scenes, cfg, sched, rng)
        total, parts, grads = loss_and_grads(model, batch, cfg, sched)
        if not (np.isfinite(total) and all(np.all(np.isfinite(g)) for g in grads)):
            raise TrainingDivergence(it, dict(zip(LOSS_COLUMNS[1:5], parts)))
        lr = cosine_lr(it, cfg.iterations, cfg.learning_rate)
        adam_step(params, grads, state, lr)
        history[it] = (it,) + tuple(parts) + (total, lr)
        if log_every and (it % log_every == 0 or it == cfg.iterations - 1):
            log.info("iter %d total %.4f (o %.4f g %.4f d %.4f theta %.4f) lr %.2e",
                     it, total, *parts, lr)
    return TrainingResult(model, history)


def write_loss_csv(history, path):
    with open(path, "w") as fh:
        fh.write(",".join(LOSS_COLUMNS) + "\n")
        for row in history:
            fh.write(f"{int(row[0])}," + ",".join(repr(float(v)) for v in row[1:]) + "\n")
