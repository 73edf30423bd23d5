"""Grasp label factory: init grids, force-closure optimization, filtering, scene composition."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import shapes
from .geometry.hand import penetration_depth
from .geometry.scene import Scene
from .geometry.transforms import RigidPose, axis_angle, frame_from_forward
from .graspness import GraspLabel
from .wrench import (ContactSet, SynthesisThresholds, contact_wrenches, fc_energy_batch,
                     resists_gravity_6dir)

log = logging.getLogger(__name__)

CONTACT_DISTANCE = 0.01
PENETRATION_LIMIT = 0.002


@dataclass(frozen=True)
class InitGrid:
    n_approach: int = 256
    depths: tuple = (0.0, 0.01, 0.02, 0.03)
    n_inplane: int = 12
    retreat: float = 0.04

    def __post_init__(self):
        if self.n_approach < 1 or self.n_inplane < 1 or len(self.depths) < 1:
            raise ValueError("grid counts must be >= 1")
        if list(self.depths) != sorted(self.depths):
            raise ValueError("depths must be ascending")

    @property
    def n_depth(self):
        return len(self.depths)

    def __len__(self):
        return self.n_approach * self.n_depth * self.n_inplane


@dataclass(frozen=True)
class OptimizerConfig:
    iterations: int = 600
    step_translation: float = 0.002
    step_rotation: float = 0.03
    step_joint: float = 0.05
    w_pen: float = 300.0
    w_dist: float = 100.0
    w_lim: float = 10.0
    fd_step: float = 1e-4
    dist_smoothing: float = 0.001
    line_search_tries: int = 3
    seed: int = 0
    torque_length: float = 0.0  # 0 uses the object's bounding radius

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if min(self.step_translation, self.step_rotation, self.step_joint) <= 0:
            raise ValueError("step sizes must be positive")


def fibonacci_sphere(n):
    """``n`` near-uniform unit vectors on the sphere."""
    if n == 1:
        return np.array([[0.0, 0.0, 1.0]])
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def init_pose_grid(grasp_point, grid, hand, approaches=None):
    """Initial wrist poses around one grasp point.

    For every (approach ``a``, depth, in-plane angle) the palm looks along
    ``-a`` from ``grasp_point + a * (retreat - depth)`` and is rolled about
    its forward axis. Joints start at ``hand.open_pose``.
    """
    grasp_point = np.asarray(grasp_point, dtype=float)
    dirs = fibonacci_sphere(grid.n_approach) if approaches is None else np.asarray(approaches, float)
    palm_inv = hand.palm.inverse()
    out = []
    for a in dirs:
        base = frame_from_forward(-a)
        for depth in grid.depths:
            center = grasp_point + a * (grid.retreat - depth)
            for k in range(grid.n_inplane):
                roll = axis_angle(np.array([0.0, 1.0, 0.0]), 2.0 * np.pi * k / grid.n_inplane)
                palm = RigidPose(center, base @ roll)
                out.append((palm @ palm_inv, hand.open_pose.copy()))
    return out


# ---------------------------------------------------------------- energy

@dataclass
class EnergyTerms:
    total: np.ndarray
    fc: np.ndarray
    penetration: np.ndarray
    distance: np.ndarray
    limits: np.ndarray
    regularized: np.ndarray
    p_t: np.ndarray


def object_contacts(state, obj, threshold=CONTACT_DISTANCE):
    """Fingertip contacts on one object (batched).

    Returns surface points, inward normals, the signed gap of each fingertip
    pad, and an activity mask (gap below ``threshold``).
    """
    tips = state.contacts
    local = obj.to_local(tips)
    d = shapes.sdf(obj.shape, local)
    g = shapes.sdf_grad(obj.shape, local)
    surface_local = local - d[..., None] * g
    points = surface_local @ obj.pose.rotation.T + obj.pose.translation
    inward = -(g @ obj.pose.rotation.T)
    gap = d - state.contact_radii
    return points, inward, gap, gap < threshold


def contact_set(state, obj, threshold=CONTACT_DISTANCE):
    """ContactSet of the fingertips within ``threshold`` of ``obj``, or None."""
    points, inward, _, active = object_contacts(state, obj, threshold)
    if not np.any(active):
        return None
    return ContactSet(points[active], inward[active], obj.pose.translation)


def grasp_energy(hand, obj, t, r, theta, cfg, thresholds, keep):
    """Synthesis energy for a batch of hand configurations on one isolated object."""
    state = hand.forward_kinematics(t, r, theta, clamp=False)
    points, inward, gap, _ = object_contacts(state, obj)
    c = obj.pose.translation
    # lever arms measured in object radii so torque balance is not drowned out by force balance
    scale = cfg.torque_length if cfg.torque_length > 0 else obj.shape.bounding_radius
    w = contact_wrenches(c + (points - c) / scale, inward, c)
    # every fingertip counts here; gating at CONTACT_DISTANCE makes the energy jump
    fc, reg, _, p_t = fc_energy_batch(w, np.ones(gap.shape, dtype=bool), thresholds, keep)
    d = obj.sdf(state.sphere_centers)
    pen = np.sum(np.maximum(state.sphere_radii - d, 0.0), axis=-1)
    dist = np.sum(_huber(gap, cfg.dist_smoothing), axis=-1)
    lim = hand.limit_violation(theta)
    total = fc + cfg.w_pen * pen + cfg.w_dist * dist + cfg.w_lim * lim
    return EnergyTerms(total, fc, pen, dist, lim, reg, p_t)


def _huber(x, delta):
    """|x| with a quadratic core of half-width ``delta`` (keeps descent off the kink)."""
    a = np.abs(x)
    return np.where(a > delta, a - 0.5 * delta, 0.5 * x * x / delta)


def _rotvec_exp(w):
    """Batched exponential map for rotation vectors (B, 3)."""
    angle = np.linalg.norm(w, axis=-1)
    safe = np.where(angle > 1e-12, angle, 1.0)
    k = w / safe[:, None]
    x, y, z = k.T
    zero = np.zeros_like(x)
    km = np.stack([np.stack([zero, -z, y], -1), np.stack([z, zero, -x], -1),
                   np.stack([-y, x, zero], -1)], -2)
    s = np.sin(angle)[:, None, None]
    c = np.cos(angle)[:, None, None]
    out = np.eye(3) + s * km + (1 - c) * (km @ km)
    out[angle <= 1e-12] = np.eye(3)
    return out


def _apply_update(t, r, theta, delta, dof):
    t2 = t + delta[:, :3]
    r2 = r @ _rotvec_exp(delta[:, 3:6])
    return t2, r2, theta + delta[:, 6:6 + dof]


@dataclass
class GraspCandidate:
    wrist: RigidPose
    theta: np.ndarray
    object_id: int
    energy: float
    p_t: float
    energy_trace: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    init_index: int = -1

    def label(self):
        return GraspLabel(self.wrist, self.theta, self.object_id, self.energy, self.p_t)


@dataclass
class SynthesisReport:
    n_inits: int = 0
    n_dropped: int = 0
    diagnostics: list = field(default_factory=list)


def _optimize_chunk(hand, obj, t, r, theta, cfg, thresholds, rng):
    """Block-wise normalized gradient descent with per-block backtracking.

    Each iteration draws the Bernoulli switch once per candidate, takes a
    central-difference gradient, then updates translation, rotation and
    joints in turn; a block step is accepted only if the energy (at the
    same switch value) does not increase.
    """
    b = len(t)
    dof = hand.dof
    n_par = 6 + dof
    h = cfg.fd_step
    blocks = [(slice(0, 3), cfg.step_translation), (slice(3, 6), cfg.step_rotation),
              (slice(6, n_par), cfg.step_joint)]
    alpha = np.ones((b, len(blocks)))
    trace = np.empty((cfg.iterations + 1, b))
    deltas = np.concatenate([h * np.eye(n_par), -h * np.eye(n_par)])
    keep = rng.random(b) < thresholds.p_keep
    trace[0] = grasp_energy(hand, obj, t, r, theta, cfg, thresholds, keep).total
    for it in range(cfg.iterations):
        keep = rng.random(b) < thresholds.p_keep
        cur = grasp_energy(hand, obj, t, r, theta, cfg, thresholds, keep).total
        # rows ordered (candidate, sign, parameter)
        rep = [np.repeat(x, 2 * n_par, axis=0) for x in (t, r, theta)]
        pt, pr, pth = _apply_update(*rep, np.tile(deltas, (b, 1)), dof)
        e = grasp_energy(hand, obj, pt, pr, pth, cfg, thresholds,
                         np.repeat(keep, 2 * n_par)).total.reshape(b, 2, n_par)
        grad = (e[:, 0] - e[:, 1]) / (2.0 * h)
        grad[~np.isfinite(grad)] = 0.0
        for k, (blk, step) in enumerate(blocks):
            g = grad[:, blk]
            norm = np.linalg.norm(g, axis=1, keepdims=True)
            direction = np.where(norm > 1e-12, g / np.where(norm > 1e-12, norm, 1.0), 0.0)
            done = norm[:, 0] <= 1e-12
            for _ in range(cfg.line_search_tries):
                delta = np.zeros((b, n_par))
                delta[:, blk] = -(alpha[:, k:k + 1] * step) * direction
                nt, nr, nth = _apply_update(t, r, theta, delta, dof)
                new = grasp_energy(hand, obj, nt, nr, nth, cfg, thresholds, keep).total
                ok = ~done & np.isfinite(new) & (new <= cur)
                t[ok], r[ok], theta[ok] = nt[ok], nr[ok], nth[ok]
                cur = np.where(ok, new, cur)
                alpha[ok, k] = np.minimum(alpha[ok, k] * 2.0, 1.0)
                alpha[~done & ~ok, k] *= 0.5
                done |= ok
                if done.all():
                    break
        np.maximum(alpha, 1e-3, out=alpha)
        trace[it + 1] = cur
    return t, r, theta, trace


def synthesize(obj, hand, inits, cfg=OptimizerConfig(), thresholds=SynthesisThresholds(),
               chunk=64, report=None):
    """Optimize every initial pose against the synthesis energy.

    ``obj`` is a ``SceneObject`` (its pose defines the world frame used for
    the returned wrist poses). Candidates whose energy becomes non-finite
    are dropped and noted in ``report``.
    """
    if not inits:
        raise ValueError("inits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    report = report if report is not None else SynthesisReport()
    report.n_inits += len(inits)
    out = []
    for start in range(0, len(inits), chunk):
        part = inits[start:start + chunk]
        t = np.array([p.translation for p, _ in part])
        r = np.array([p.rotation for p, _ in part])
        theta = np.array([th for _, th in part], dtype=float)
        t, r, theta, trace = _optimize_chunk(hand, obj, t, r, theta, cfg, thresholds, rng)
        theta = np.clip(theta, hand.lower, hand.upper)
        r = _orthonormalize(r)
        final = grasp_energy(hand, obj, t, r, theta, cfg, thresholds,
                             np.ones(len(t), dtype=bool))
        for k in range(len(part)):
            idx = start + k
            if not np.isfinite(final.total[k]) or not np.all(np.isfinite(trace[:, k])):
                report.n_dropped += 1
                report.diagnostics.append({"init_index": idx, "reason": "non-finite energy"})
                log.warning("dropping candidate %d: non-finite energy", idx)
                continue
            out.append(GraspCandidate(RigidPose(t[k], r[k]), theta[k], obj.object_id,
                                      float(final.total[k]), float(final.p_t[k]),
                                      trace[:, k].copy(), idx))
    return out


def _orthonormalize(r):
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    u[:, :, 2] *= d[:, None]
    return u @ vt


# ---------------------------------------------------------------- filtering

@dataclass
class FilterReport:
    n_in: int = 0
    n_collision_free: int = 0
    n_stable: int = 0

    @property
    def valid_rate(self):
        return self.n_stable / self.n_in if self.n_in else 0.0

    def to_dict(self):
        return {"n_in": self.n_in, "n_collision_free": self.n_collision_free,
                "n_stable": self.n_stable, "valid_rate": self.valid_rate}


def grasp_is_valid(label, hand, scene, mu=0.2, mass=0.1, include_table=False):
    """(collision_free, stable) for one label against ``scene``."""
    state = hand.forward_kinematics(label.wrist.translation, label.wrist.rotation, label.theta)
    pen = float(penetration_depth(state, scene, include_table=include_table))
    if not pen < PENETRATION_LIMIT:
        return False, False
    cs = contact_set(state, scene.object(label.object_id))
    if cs is None:
        return True, False
    return True, bool(resists_gravity_6dir(cs, mu=mu, mass=mass))


def filter_grasps(candidates, scene, hand, mu=0.2, mass=0.1, include_table=False):
    """Keep labels that are collision-free (< 2 mm) and deny gravity in all 6 directions."""
    report = FilterReport(n_in=len(candidates))
    kept = []
    for c in candidates:
        label = c.label() if isinstance(c, GraspCandidate) else c
        free, stable = grasp_is_valid(label, hand, scene, mu, mass, include_table)
        report.n_collision_free += free
        report.n_stable += stable
        if stable:
            kept.append(label)
    return kept, report


def compose_scene_labels(per_object_labels, scene, hand):
    """Move object-frame labels into ``scene`` and keep those clear of everything.

    Penetration is checked against every object and the table half-space.
    """
    out = []
    for obj in scene.objects:
        labels = per_object_labels.get(obj.object_id, [])
        if not labels:
            continue
        moved = [g.transformed(obj.pose) for g in labels]
        t = np.array([g.wrist.translation for g in moved])
        r = np.array([g.wrist.rotation for g in moved])
        th = np.array([g.theta for g in moved])
        state = hand.forward_kinematics(t, r, th)
        pen = penetration_depth(state, scene, include_table=True)
        out.extend(g for g, p in zip(moved, pen) if p < PENETRATION_LIMIT)
    return out


def isolated(obj):
    """Scene holding only ``obj`` (no table contact is checked for isolated objects)."""
    return Scene((obj,), table_height=-np.inf)
