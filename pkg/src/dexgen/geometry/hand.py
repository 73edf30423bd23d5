"""Serial revolute hand chains, a parallel-jaw gripper, and sphere-based collision.

Link 0 is the wrist (base) link. Joint ``k`` rotates link ``k + 1`` relative
to its parent link. Forward kinematics is batched: wrist translations
``(B, 3)``, rotations ``(B, 3, 3)`` and joints ``(B, DoF)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .transforms import RigidPose


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int
    origin: RigidPose
    axis: np.ndarray
    lower: float
    upper: float


@dataclass
class HandState:
    """World-frame quantities produced by forward kinematics (batched)."""

    contacts: np.ndarray        # (B, C, 3) fingertip pad centers
    contact_radii: np.ndarray   # (C,)
    palm_translation: np.ndarray  # (B, 3)
    palm_rotation: np.ndarray   # (B, 3, 3); column 1 is the approach direction
    sphere_centers: np.ndarray  # (B, S, 3)
    sphere_radii: np.ndarray    # (S,)

    @property
    def palm_forward(self):
        return self.palm_rotation[..., :, 1]


def _rodrigues(axis, angles):
    """Batched rotations about a fixed unit axis; angles (B,) -> (B, 3, 3)."""
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    s = np.sin(angles)[:, None, None]
    c = np.cos(angles)[:, None, None]
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def _as_batch(wrist_t, wrist_r, theta, dof):
    wrist_t = np.asarray(wrist_t, dtype=float)
    single = wrist_t.ndim == 1
    wrist_t = np.atleast_2d(wrist_t)
    wrist_r = np.asarray(wrist_r, dtype=float).reshape(-1, 3, 3)
    theta = np.asarray(theta, dtype=float).reshape(len(wrist_t), dof) if dof else np.zeros((len(wrist_t), 0))
    return wrist_t, wrist_r, theta, single


class HandModel:
    """Revolute chain with fingertip contact frames and per-link collision spheres."""

    kind = "chain"

    def __init__(self, joints, contacts, spheres, palm=None, open_pose=None, name="hand"):
        self.name = name
        self.joints = list(joints)
        for k, j in enumerate(self.joints):
            if not 0 <= j.parent <= k:
                raise ValueError(f"joint {j.name}: parent link {j.parent} must precede link {k + 1}")
            if not j.lower < j.upper:
                raise ValueError(f"joint {j.name}: lower limit must be below upper")
        n_links = len(self.joints) + 1
        self.contact_links = np.array([c[0] for c in contacts], dtype=np.int64)
        self.contact_offsets = np.array([c[1] for c in contacts], dtype=float).reshape(-1, 3)
        self.contact_radii = np.array([c[2] for c in contacts], dtype=float)
        self.sphere_links = np.array([s[0] for s in spheres], dtype=np.int64)
        self.sphere_offsets = np.array([s[1] for s in spheres], dtype=float).reshape(-1, 3)
        self.sphere_radii = np.array([s[2] for s in spheres], dtype=float)
        for link in list(self.contact_links) + list(self.sphere_links):
            if not 0 <= link < n_links:
                raise ValueError(f"frame references missing link {link}")
        self.palm = palm if palm is not None else RigidPose.identity()
        self.lower = np.array([j.lower for j in self.joints])
        self.upper = np.array([j.upper for j in self.joints])
        self.open_pose = (np.zeros(self.dof) if open_pose is None
                          else np.asarray(open_pose, dtype=float).reshape(self.dof))

    @property
    def dof(self):
        return len(self.joints)

    def clamp(self, theta, warn=True):
        theta = np.asarray(theta, dtype=float)
        clipped = np.clip(theta, self.lower, self.upper)
        if warn and np.any(np.abs(clipped - theta) > 1e-12):
            warnings.warn("joint angles outside limits were clamped", stacklevel=3)
        return clipped

    def limit_violation(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.sum(np.maximum(theta - self.upper, 0.0) + np.maximum(self.lower - theta, 0.0), axis=-1)

    def link_frames(self, wrist_t, wrist_r, theta):
        """Translations (B, L, 3) and rotations (B, L, 3, 3) of every link."""
        b = len(wrist_t)
        n_links = self.dof + 1
        lt = np.empty((b, n_links, 3))
        lr = np.empty((b, n_links, 3, 3))
        lt[:, 0] = wrist_t
        lr[:, 0] = wrist_r
        for k, j in enumerate(self.joints):
            pr = lr[:, j.parent]
            pt = lt[:, j.parent]
            jr = pr @ j.origin.rotation
            lt[:, k + 1] = pt + pr @ j.origin.translation
            lr[:, k + 1] = jr @ _rodrigues(j.axis, theta[:, k])
        return lt, lr

    def forward_kinematics(self, wrist_t, wrist_r, theta, clamp=True):
        wrist_t, wrist_r, theta, single = _as_batch(wrist_t, wrist_r, theta, self.dof)
        if clamp:
            theta = self.clamp(theta)
        lt, lr = self.link_frames(wrist_t, wrist_r, theta)
        contacts = (np.einsum("blij,lj->bli", lr[:, self.contact_links], self.contact_offsets)
                    + lt[:, self.contact_links])
        centers = (np.einsum("blij,lj->bli", lr[:, self.sphere_links], self.sphere_offsets)
                   + lt[:, self.sphere_links])
        palm_r = wrist_r @ self.palm.rotation
        palm_t = wrist_t + wrist_r @ self.palm.translation
        state = HandState(contacts, self.contact_radii, palm_t, palm_r, centers, self.sphere_radii)
        return _squeeze(state) if single else state

    def to_dict(self):
        return {
            "type": "chain",
            "name": self.name,
            "palm": self.palm.to_dict(),
            "open_pose": [float(v) for v in self.open_pose],
            "joints": [
                {"name": j.name, "parent": j.parent, "origin": j.origin.to_dict(),
                 "axis": [float(v) for v in j.axis], "limits": [j.lower, j.upper]}
                for j in self.joints
            ],
            "contacts": [
                {"link": int(l), "offset": [float(v) for v in o], "radius": float(r)}
                for l, o, r in zip(self.contact_links, self.contact_offsets, self.contact_radii)
            ],
            "spheres": [
                {"link": int(l), "center": [float(v) for v in o], "radius": float(r)}
                for l, o, r in zip(self.sphere_links, self.sphere_offsets, self.sphere_radii)
            ],
        }


class GripperModel:
    """Parallel-jaw gripper whose single parameter is the opening width (m)."""

    kind = "gripper"

    def __init__(self, finger_length=0.05, finger_radius=0.006, max_width=0.1, name="gripper"):
        self.name = name
        self.finger_length = finger_length
        self.finger_radius = finger_radius
        self.max_width = max_width
        self.lower = np.array([0.0])
        self.upper = np.array([max_width])
        self.open_pose = np.array([max_width])
        self.contact_radii = np.array([finger_radius, finger_radius])
        self.palm = RigidPose.identity()
        n = 4
        ys = np.linspace(0.5 * finger_radius, finger_length, n)
        self._finger_ys = ys
        palm_x = np.linspace(-0.5 * max_width, 0.5 * max_width, 5)
        self._palm_centers = np.stack([palm_x, np.full(5, -finger_radius), np.zeros(5)], axis=1)
        self.sphere_radii = np.full(2 * n + 5, finger_radius)

    @property
    def dof(self):
        return 1

    def clamp(self, theta, warn=True):
        theta = np.asarray(theta, dtype=float)
        clipped = np.clip(theta, self.lower, self.upper)
        if warn and np.any(np.abs(clipped - theta) > 1e-12):
            warnings.warn("gripper width outside limits was clamped", stacklevel=3)
        return clipped

    def limit_violation(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.sum(np.maximum(theta - self.upper, 0.0) + np.maximum(self.lower - theta, 0.0), axis=-1)

    def forward_kinematics(self, wrist_t, wrist_r, theta, clamp=True):
        wrist_t, wrist_r, theta, single = _as_batch(wrist_t, wrist_r, theta, 1)
        if clamp:
            theta = self.clamp(theta)
        b = len(wrist_t)
        half = 0.5 * theta[:, 0] + self.finger_radius
        local_contacts = np.zeros((b, 2, 3))
        local_contacts[:, 0, 0] = -half
        local_contacts[:, 1, 0] = half
        local_contacts[:, :, 1] = self.finger_length
        n = len(self._finger_ys)
        fingers = np.zeros((b, 2 * n, 3))
        fingers[:, :n, 0] = -half[:, None]
        fingers[:, n:, 0] = half[:, None]
        fingers[:, :n, 1] = self._finger_ys
        fingers[:, n:, 1] = self._finger_ys
        local_spheres = np.concatenate([fingers, np.broadcast_to(self._palm_centers, (b, 5, 3))], axis=1)
        contacts = np.einsum("bij,bkj->bki", wrist_r, local_contacts) + wrist_t[:, None]
        centers = np.einsum("bij,bkj->bki", wrist_r, local_spheres) + wrist_t[:, None]
        state = HandState(contacts, self.contact_radii, wrist_t.copy(), wrist_r.copy(),
                          centers, self.sphere_radii)
        return _squeeze(state) if single else state

    def to_dict(self):
        return {"type": "gripper", "name": self.name, "finger_length": self.finger_length,
                "finger_radius": self.finger_radius, "max_width": self.max_width}


def _squeeze(state):
    return HandState(state.contacts[0], state.contact_radii, state.palm_translation[0],
                     state.palm_rotation[0], state.sphere_centers[0], state.sphere_radii)


def forward_kinematics(hand, wrist, theta):
    """FK for one wrist ``RigidPose``; see ``HandModel.forward_kinematics``."""
    return hand.forward_kinematics(wrist.translation, wrist.rotation, theta)


def penetration_depth(state, scene, include_table=False):
    """Max over collision spheres of ``max(0, radius - sdf(center))``.

    Works on single or batched ``HandState``; returns a scalar or ``(B,)``.
    """
    d = scene.signed_distance(state.sphere_centers, include_table=include_table)
    return np.max(np.maximum(state.sphere_radii - d, 0.0), axis=-1)


# ---------------------------------------------------------------- default models

def _finger(joints, spheres, contacts, base, sign, prefix, lengths=(0.045, 0.03, 0.026)):
    """Append one 4-joint finger. ``sign`` = +1 curls toward +z, -1 toward -z."""
    flex_axis = np.array([sign, 0.0, 0.0])
    first = len(joints)
    joints.append(Joint(f"{prefix}_abd", 0, RigidPose(base, np.eye(3)),
                        np.array([0.0, 0.0, 1.0]), -0.35, 0.35))
    joints.append(Joint(f"{prefix}_mcp", first + 1, RigidPose.identity(), flex_axis, -0.6, 1.6))
    joints.append(Joint(f"{prefix}_pip", first + 2, RigidPose(np.array([0.0, lengths[0], 0.0]), np.eye(3)),
                        flex_axis, -0.2, 1.7))
    joints.append(Joint(f"{prefix}_dip", first + 3, RigidPose(np.array([0.0, lengths[1], 0.0]), np.eye(3)),
                        flex_axis, -0.2, 1.7))
    r = 0.0085
    for link, length in zip((first + 2, first + 3, first + 4), lengths):
        spheres.append((link, np.array([0.0, 0.45 * length, 0.0]), r))
    tip = np.array([0.0, lengths[2] - r, 0.0])
    spheres.append((first + 4, tip, r))
    contacts.append((first + 4, tip, r))


def default_hand():
    """Simplified 16-DoF hand: three fingers opposed by a thumb.

    The palm faces +y (approach direction). Fingers start on the palm face
    and extend forward; index/middle/ring sit at +z and curl toward -z, the
    thumb sits at -z and curls toward +z.
    """
    joints, spheres, contacts = [], [], []
    for x, name in ((-0.028, "index"), (0.0, "middle"), (0.028, "ring")):
        _finger(joints, spheres, contacts, np.array([x, 0.0, 0.04]), -1.0, name)
    _finger(joints, spheres, contacts, np.array([0.0, 0.0, -0.04]), 1.0, "thumb")
    for x in (-0.03, 0.0, 0.03):
        for z in (-0.03, 0.0, 0.03):
            spheres.append((0, np.array([x, -0.016, z]), 0.016))
    open_pose = np.tile([0.0, -0.5, 0.3, 0.2], 4)
    return HandModel(joints, contacts, spheres, RigidPose.identity(), open_pose, name="dex16")


def default_gripper():
    return GripperModel()


def hand_from_dict(d):
    kind = d.get("type", "chain")
    if kind == "gripper":
        return GripperModel(d.get("finger_length", 0.05), d.get("finger_radius", 0.006),
                            d.get("max_width", 0.1), d.get("name", "gripper"))
    if kind != "chain":
        raise ValueError(f"hand: unknown type {kind!r}")
    for key in ("joints", "contacts", "spheres"):
        if key not in d:
            raise ValueError(f"hand: missing field '{key}'")
    joints = []
    for k, jd in enumerate(d["joints"]):
        axis = np.asarray(jd["axis"], dtype=float)
        norm = np.linalg.norm(axis)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"hand.joints[{k}]: axis must be a unit vector")
        lo, hi = jd["limits"]
        origin = RigidPose.from_dict(jd["origin"]) if "origin" in jd else RigidPose.identity()
        joints.append(Joint(jd.get("name", f"j{k}"), int(jd["parent"]), origin, axis, float(lo), float(hi)))
    contacts = [(int(c["link"]), np.asarray(c["offset"], float), float(c.get("radius", 0.0)))
                for c in d["contacts"]]
    spheres = [(int(s["link"]), np.asarray(s["center"], float), float(s["radius"])) for s in d["spheres"]]
    palm = RigidPose.from_dict(d["palm"]) if "palm" in d else None
    return HandModel(joints, contacts, spheres, palm, d.get("open_pose"), d.get("name", "hand"))


def load_hand(path):
    with open(path) as fh:
        return hand_from_dict(json.load(fh))


def save_hand(hand, path):
    with open(path, "w") as fh:
        json.dump(hand.to_dict(), fh, indent=2, sort_keys=True)
