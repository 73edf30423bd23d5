"""Rigid transforms, rotation projection and farthest point sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9


class DegenerateInputError(ValueError):
    """Raised when a matrix has no well-defined nearest rotation."""


def svd_project(m):
    """Nearest rotation (Frobenius norm) to a 3x3 matrix.

    Accepts a single matrix or a stack of shape (..., 3, 3). The result is
    the special-orthogonal polar factor ``U diag(1, 1, det(U V^T)) V^T``.
    """
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DegenerateInputError("matrix has non-finite entries")
    u, s, vt = np.linalg.svd(m)
    scale = np.maximum(s[..., :1], 1e-300)
    # rank < 2 leaves the polar factor ambiguous
    if np.any(s[..., 1] / scale[..., 0] < 1e-12) or np.any(s[..., 0] == 0.0):
        raise DegenerateInputError("matrix rank < 2: nearest rotation is not unique")
    det = np.linalg.det(u @ vt)
    d = np.ones(m.shape[:-1])
    d[..., 2] = np.sign(det)
    d[..., 2][d[..., 2] == 0] = 1.0
    return (u * d[..., None, :]) @ vt


def is_rotation(r, tol=ORTHO_TOL):
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return bool(np.max(np.abs(r.T @ r - np.eye(3))) < tol and np.linalg.det(r) > 0)


def axis_angle(axis, angle):
    """Rodrigues rotation about a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def geodesic_angle(r1, r2):
    """Angle in radians of the relative rotation ``r1^T r2`` (batched)."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    rel = np.swapaxes(r1, -1, -2) @ r2
    cos = (np.trace(rel, axis1=-2, axis2=-1) - 1.0) / 2.0
    return np.arccos(np.clip(cos, -1.0, 1.0))


def random_rotation(rng):
    """Haar-uniform rotation from a numpy Generator."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def frame_from_forward(forward, up_hint=None):
    """Rotation whose +y column is ``forward``; +z is as close to ``up_hint`` as possible."""
    y = np.asarray(forward, dtype=float)
    y = y / np.linalg.norm(y)
    hint = np.array([0.0, 0.0, 1.0]) if up_hint is None else np.asarray(up_hint, dtype=float)
    z = hint - np.dot(hint, y) * y
    if np.linalg.norm(z) < 1e-6:
        hint = np.array([1.0, 0.0, 0.0])
        z = hint - np.dot(hint, y) * y
    z /= np.linalg.norm(z)
    x = np.cross(y, z)
    return np.stack([x, y, z], axis=1)


@dataclass(frozen=True)
class RigidPose:
    """Rotation followed by translation: ``x_world = R @ x_local + t``."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        if not is_rotation(r):
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", r)

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.eye(3))

    @classmethod
    def from_matrix(cls, h):
        h = np.asarray(h, dtype=float)
        return cls(h[:3, 3], h[:3, :3])

    def matrix(self):
        h = np.eye(4)
        h[:3, :3] = self.rotation
        h[:3, 3] = self.translation
        return h

    def inverse(self):
        rt = self.rotation.T
        return RigidPose(-rt @ self.translation, rt)

    def __matmul__(self, other):
        if isinstance(other, RigidPose):
            return RigidPose(self.rotation @ other.translation + self.translation,
                             self.rotation @ other.rotation)
        return NotImplemented

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def apply_vectors(self, vectors):
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def to_dict(self):
        return {"t": [float(v) for v in self.translation],
                "R": [float(v) for v in self.rotation.reshape(-1)]}

    @classmethod
    def from_dict(cls, d):
        if "t" not in d or "R" not in d:
            raise KeyError("pose requires fields 't' and 'R'")
        t = np.asarray(d["t"], dtype=float)
        r = np.asarray(d["R"], dtype=float)
        if t.shape != (3,):
            raise ValueError("pose field 't' must have 3 entries")
        if r.shape != (9,):
            raise ValueError("pose field 'R' must have 9 entries (row-major)")
        return cls(t, r.reshape(3, 3))


def farthest_point_sample(points, count, start_index=0):
    """Greedy max-min subsampling.

    Returns ``count`` indices, the first being ``start_index``. Ties in the
    running min-distance go to the lowest index.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if count < 1 or count > n:
        raise ValueError(f"count must be in [1, {n}], got {count}")
    if not 0 <= start_index < n:
        raise IndexError(f"start_index {start_index} out of range")
    selected = np.empty(count, dtype=np.int64)
    selected[0] = start_index
    mind = np.sum((points - points[start_index]) ** 2, axis=1)
    mind[start_index] = -1.0
    for k in range(1, count):
        idx = int(np.argmax(mind))
        selected[k] = idx
        np.minimum(mind, np.sum((points - points[idx]) ** 2, axis=1), out=mind)
        # duplicates must not be re-selected
        mind[idx] = -1.0
    return selected
