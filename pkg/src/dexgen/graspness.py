"""Ground-truth graspness: grasp cones, seed points, log-scale scores, seed proposal."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry.scene import TABLE_LABEL
from .geometry.transforms import RigidPose, farthest_point_sample

LN2 = math.log(2.0)
SCORE_FLOOR = 0.001
DECAY_PER_METER = 150.0
MIN_SEED_VOTE = 1e-4


class NoSeedError(ValueError):
    """No candidate point falls inside the grasp cone."""


@dataclass(frozen=True)
class GraspLabel:
    wrist: RigidPose
    theta: np.ndarray
    object_id: int
    energy: float = float("nan")
    p_t: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float).reshape(-1))

    def to_dict(self):
        return {"object_id": int(self.object_id), "T": [float(v) for v in self.wrist.translation],
                "R": [float(v) for v in self.wrist.rotation.reshape(-1)],
                "theta": [float(v) for v in self.theta], "energy": float(self.energy),
                "P_t": float(self.p_t)}

    @classmethod
    def from_dict(cls, d):
        wrist = RigidPose(np.asarray(d["T"], float), np.asarray(d["R"], float).reshape(3, 3))
        return cls(wrist, d["theta"], int(d["object_id"]), float(d.get("energy", "nan")),
                   float(d.get("P_t", "nan")))

    def transformed(self, pose):
        """Same grasp expressed after applying ``pose`` on the left."""
        return GraspLabel(pose @ self.wrist, self.theta, self.object_id, self.energy, self.p_t)


def save_labels(labels, path):
    with open(path, "w") as fh:
        json.dump([g.to_dict() for g in labels], fh, indent=1, sort_keys=True)


def load_labels(path):
    with open(path) as fh:
        raw = json.load(fh)
    if isinstance(raw, dict):
        raw = raw["labels"]
    return [GraspLabel.from_dict(d) for d in raw]


@dataclass(frozen=True)
class GraspCone:
    apex: np.ndarray
    axis: np.ndarray
    aperture: float = math.pi / 3.0
    angle_half_deg: float = 10.0
    dist_half: float = 0.015

    def __post_init__(self):
        if not 0 < self.aperture < math.pi:
            raise ValueError("aperture must lie in (0, pi)")
        if self.angle_half_deg <= 0 or self.dist_half <= 0:
            raise ValueError("decay constants must be positive")
        axis = np.asarray(self.axis, dtype=float)
        object.__setattr__(self, "axis", axis / np.linalg.norm(axis))
        object.__setattr__(self, "apex", np.asarray(self.apex, dtype=float))


def grasp_cone(label, hand, **kw):
    """Cone with apex at the palm center, opening along the palm's forward axis."""
    state = hand.forward_kinematics(label.wrist.translation, label.wrist.rotation, label.theta)
    return GraspCone(state.palm_translation, state.palm_forward, **kw)


def cone_falloff(angle, dist, angle_half_deg=10.0, dist_half=0.015):
    """``exp(-(ln2/10) * angle_deg - (ln2/0.015) * dist)``; halves per 10 deg or 1.5 cm."""
    return np.exp(-LN2 / angle_half_deg * np.degrees(angle) - LN2 / dist_half * np.asarray(dist))


def cone_vote(cone, p):
    """Vote of one grasp cone for points ``p`` (..., 3); 0 outside the cone."""
    v = np.asarray(p, dtype=float) - cone.apex
    d = v @ cone.axis
    norm = np.linalg.norm(v, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(norm > 0, d / np.where(norm > 0, norm, 1.0), 1.0)
    angle = np.arccos(np.clip(cos, -1.0, 1.0))
    inside = (angle < 0.5 * cone.aperture) & (d >= 0)
    return np.where(inside, cone_falloff(angle, d, cone.angle_half_deg, cone.dist_half), 0.0)


def seed_point_of(cone, object_points):
    """Index of the object point with the largest cone vote (lowest index on ties)."""
    pts = np.asarray(object_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("object_points is empty")
    votes = cone_vote(cone, pts)
    idx = int(np.argmax(votes))
    if votes[idx] <= 0.0:
        raise NoSeedError("every point lies outside the grasp cone")
    return idx


def decayed_contribution(seeds, points):
    """``sum_g 10^(-150 ||seed_g - p||)`` for each point, shape (N,)."""
    seeds = np.asarray(seeds, dtype=float).reshape(-1, 3)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    total = np.zeros(len(points))
    # chunked over seeds to bound memory
    for start in range(0, len(seeds), 256):
        s = seeds[start:start + 256]
        dist = np.linalg.norm(points[:, None, :] - s[None, :, :], axis=-1)
        total += np.sum(10.0 ** (-DECAY_PER_METER * dist), axis=1)
    return total


def graspness_scores(seeds, points):
    """Log-scale graspness ``ln(0.001 + sum of decayed contributions)``."""
    return np.log(SCORE_FLOOR + decayed_contribution(seeds, points))


@dataclass
class GraspnessField:
    scores: np.ndarray       # (N,) natural-log scale, nan on table points
    object_mask: np.ndarray  # (N,) bool
    seed_index: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))  # per label, -1 if none

    def to_records(self):
        return [{"index": int(i), "GS": (None if not m else float(s)), "O": bool(m)}
                for i, (s, m) in enumerate(zip(self.scores, self.object_mask))]


def label_seeds(labels, cloud, hand, min_vote=MIN_SEED_VOTE):
    """Seed index into ``cloud`` for every label, searching only its own object's
    visible points; -1 when the best vote is below ``min_vote``."""
    out = np.full(len(labels), -1, dtype=np.int64)
    world = cloud.world_points()
    by_obj = {}
    for k, g in enumerate(labels):
        if g.object_id not in by_obj:
            by_obj[g.object_id] = np.flatnonzero(cloud.object_label == g.object_id)
        idx = by_obj[g.object_id]
        if len(idx) == 0:
            continue
        votes = cone_vote(grasp_cone(g, hand), world[idx])
        best = int(np.argmax(votes))
        if votes[best] >= min_vote:
            out[k] = idx[best]
    return out


def graspness_field(labels, cloud, hand, seed_index=None):
    """Ground-truth graspness over the object points of a rendered cloud.

    Each label contributes only to points of its own object; table points
    carry no score (nan) and ``object_mask`` false.
    """
    if seed_index is None:
        seed_index = label_seeds(labels, cloud, hand)
    mask = cloud.object_label != TABLE_LABEL
    scores = np.full(len(cloud), np.nan)
    world = cloud.world_points()
    for oid in np.unique(cloud.object_label[mask]):
        pts_idx = np.flatnonzero(cloud.object_label == oid)
        seeds = [seed_index[k] for k, g in enumerate(labels) if g.object_id == oid and seed_index[k] >= 0]
        scores[pts_idx] = graspness_scores(world[np.array(seeds, dtype=np.int64)], world[pts_idx])
    return GraspnessField(scores, mask, np.asarray(seed_index, dtype=np.int64))


def top_fraction(scores, candidates, fraction=0.01):
    """Indices (from ``candidates``) of the top ``ceil(fraction * len)`` scores.

    Ordered by descending score, lowest index first among equals.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    k = int(math.ceil(fraction * len(candidates)))
    order = np.lexsort((candidates, -np.asarray(scores)[candidates]))
    return candidates[order[:k]]


def propose_seeds(scores, object_mask, points, m=1024, fraction=0.01):
    """Top-``fraction`` object points by graspness, thinned to ``min(m, |top|)`` by FPS.

    FPS starts from the highest-scoring point.
    """
    obj = np.flatnonzero(np.asarray(object_mask, dtype=bool))
    if len(obj) == 0:
        raise ValueError("cloud has no object points")
    top = top_fraction(scores, obj, fraction)
    count = min(m, len(top))
    picked = farthest_point_sample(np.asarray(points)[top], count, start_index=0)
    return top[picked]


def relative_grasp(label, seed, camera):
    """Wrist pose relative to ``seed`` in a frame with the camera's axes.

    Returns ``(T, R, theta)`` with ``T = R_cam^T (t_wrist - seed)`` and
    ``R = R_cam^T R_wrist``.
    """
    rc = camera.rotation
    t = rc.T @ (label.wrist.translation - np.asarray(seed, dtype=float))
    return t, rc.T @ label.wrist.rotation, label.theta.copy()


def absolute_grasp(t, r, theta, seed, camera, object_id=-1):
    """Inverse of ``relative_grasp``."""
    rc = camera.rotation
    wrist = RigidPose(rc @ np.asarray(t, float) + np.asarray(seed, float), rc @ np.asarray(r, float))
    return GraspLabel(wrist, theta, object_id)
