"""Primitive scenes on a table, scene-level distance queries and depth rendering."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import shapes
from .shapes import PrimitiveShape
from .transforms import RigidPose

TABLE_LABEL = -1


class SceneFormatError(ValueError):
    """Malformed scene description; the message names the offending field."""


class EmptyCloudError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneObject:
    object_id: int
    shape: PrimitiveShape
    pose: RigidPose

    def to_local(self, p):
        p = np.asarray(p, dtype=float)
        return (p - self.pose.translation) @ self.pose.rotation

    def sdf(self, p):
        return shapes.sdf(self.shape, self.to_local(p))

    def sdf_grad(self, p):
        return shapes.sdf_grad(self.shape, self.to_local(p)) @ self.pose.rotation.T


@dataclass(frozen=True)
class Scene:
    objects: tuple = ()
    table_height: float = 0.0
    table_half_extent: float = 0.4

    def __post_init__(self):
        objs = tuple(self.objects)
        ids = [o.object_id for o in objs]
        if len(set(ids)) != len(ids):
            raise ValueError(f"object ids must be unique, got {ids}")
        if any(i == TABLE_LABEL for i in ids):
            raise ValueError(f"object id {TABLE_LABEL} is reserved for the table")
        object.__setattr__(self, "objects", objs)

    def object(self, object_id):
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(f"no object with id {object_id}")

    @property
    def object_ids(self):
        return [o.object_id for o in self.objects]

    def only(self, object_id):
        """Scene holding a single object, same table."""
        return Scene((self.object(object_id),), self.table_height, self.table_half_extent)

    def object_distances(self, p):
        """Signed distance to every object, shape (n_objects, ...)."""
        p = np.asarray(p, dtype=float)
        if not self.objects:
            return np.full((0,) + p.shape[:-1], np.inf)
        return np.stack([o.sdf(p) for o in self.objects])

    def table_distance(self, p):
        return np.asarray(p, dtype=float)[..., 2] - self.table_height

    def signed_distance(self, p, include_table=False):
        p = np.asarray(p, dtype=float)
        d = self.object_distances(p)
        best = np.min(d, axis=0) if len(d) else np.full(p.shape[:-1], np.inf)
        if include_table:
            best = np.minimum(best, self.table_distance(p))
        return best


def signed_distance(scene, p, include_table=False):
    """Min over objects (optionally the table half-space) of the signed distance."""
    return scene.signed_distance(p, include_table=include_table)


# ---------------------------------------------------------------- io

def _field(d, key, where):
    if not isinstance(d, dict):
        raise SceneFormatError(f"{where}: expected an object, got {type(d).__name__}")
    if key not in d:
        raise SceneFormatError(f"{where}: missing field '{key}'")
    return d[key]


def scene_from_dict(d):
    try:
        table = float(_field(d, "table_height", "scene"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SceneFormatError):
            raise
        raise SceneFormatError("scene: field 'table_height' must be a number") from exc
    raw = _field(d, "objects", "scene")
    if not isinstance(raw, list):
        raise SceneFormatError("scene: field 'objects' must be a list")
    objs = []
    for k, od in enumerate(raw):
        where = f"objects[{k}]"
        oid = _field(od, "id", where)
        if not isinstance(oid, int) or isinstance(oid, bool):
            raise SceneFormatError(f"{where}: field 'id' must be an integer")
        kind = _field(od, "kind", where)
        dims = _field(od, "dims", where)
        pose = _field(od, "pose", where)
        try:
            shape = PrimitiveShape(kind, tuple(dims))
        except (TypeError, ValueError) as exc:
            raise SceneFormatError(f"{where}: invalid 'kind'/'dims': {exc}") from exc
        try:
            pose = RigidPose.from_dict(pose)
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneFormatError(f"{where}.pose: {exc}") from exc
        objs.append(SceneObject(oid, shape, pose))
    try:
        return Scene(tuple(objs), table, float(d.get("table_half_extent", 0.4)))
    except ValueError as exc:
        raise SceneFormatError(f"scene: {exc}") from exc


def scene_to_dict(scene):
    return {
        "table_height": scene.table_height,
        "table_half_extent": scene.table_half_extent,
        "objects": [
            {"id": o.object_id, "kind": o.shape.kind, "dims": list(o.shape.dims),
             "pose": o.pose.to_dict()}
            for o in scene.objects
        ],
    }


def load_scene(path):
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SceneFormatError(f"scene file is not valid JSON: {exc}") from exc
    return scene_from_dict(d)


def save_scene(scene, path):
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2, sort_keys=True)


def resting_pose(shape, table_height, xy, yaw=0.0):
    """Pose placing a primitive on the table (boxes and cylinders upright)."""
    if shape.kind == "sphere":
        z = shape.dims[0]
    elif shape.kind == "box":
        z = 0.5 * shape.dims[2]
    else:
        z = 0.5 * shape.dims[1]
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return RigidPose(np.array([xy[0], xy[1], table_height + z]), rot)


# ---------------------------------------------------------------- rendering

@dataclass
class SceneCloud:
    """Single-view point cloud in the camera frame."""

    points: np.ndarray
    object_label: np.ndarray
    camera_pose: RigidPose = field(default_factory=RigidPose.identity)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.object_label = np.asarray(self.object_label, dtype=np.int64).reshape(-1)
        if len(self.points) == 0:
            raise EmptyCloudError("cloud has no points")
        if len(self.points) != len(self.object_label):
            raise ValueError("points and labels differ in length")

    def __len__(self):
        return len(self.points)

    @property
    def object_mask(self):
        return self.object_label != TABLE_LABEL

    def world_points(self):
        return self.camera_pose.apply(self.points)

    def subset(self, idx):
        return SceneCloud(self.points[idx], self.object_label[idx], self.camera_pose)


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """Camera pose (camera-to-world) with +z looking from ``eye`` to ``target``, +y image-down."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=float)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return RigidPose(eye, np.stack([x, y, z], axis=1))


def camera_rays(width, height, fov):
    """Unit ray directions (camera frame) through pixel centers, row-major."""
    f = 0.5 * width / np.tan(0.5 * fov)
    u = (np.arange(width) + 0.5 - 0.5 * width) / f
    v = (np.arange(height) + 0.5 - 0.5 * height) / f
    uu, vv = np.meshgrid(u, v)
    d = np.stack([uu, vv, np.ones_like(uu)], axis=-1).reshape(-1, 3)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def render_depth_cloud(scene, camera, width=64, height=64, fov=np.deg2rad(50.0)):
    """Ray-cast one ray per pixel against the scene.

    The nearest hit becomes a camera-frame point labeled with its object id;
    table hits (within the table extent) get ``TABLE_LABEL``.
    """
    if width < 16 or height < 16:
        raise ValueError("grid must be at least 16x16")
    if camera.translation[2] <= scene.table_height:
        warnings.warn("camera is not above the table", stacklevel=2)
    d_cam = camera_rays(width, height, fov)
    d_world = d_cam @ camera.rotation.T
    origin = camera.translation
    best = np.full(len(d_cam), np.inf)
    label = np.full(len(d_cam), TABLE_LABEL - 1, dtype=np.int64)
    for obj in scene.objects:
        o_local = obj.to_local(origin[None, :])
        d_local = d_world @ obj.pose.rotation
        t = shapes.ray_hit(obj.shape, np.broadcast_to(o_local, d_local.shape), d_local)
        closer = t < best
        best = np.where(closer, t, best)
        label = np.where(closer, obj.object_id, label)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_table = (scene.table_height - origin[2]) / d_world[:, 2]
    hit_xy = origin[:2] + t_table[:, None] * d_world[:, :2]
    on_table = (np.isfinite(t_table) & (t_table > 0)
                & np.all(np.abs(hit_xy) <= scene.table_half_extent, axis=1))
    closer = on_table & (t_table < best)
    best = np.where(closer, t_table, best)
    label = np.where(closer, TABLE_LABEL, label)
    hit = np.isfinite(best)
    if not np.any(hit):
        raise EmptyCloudError("no ray hit the scene")
    pts = d_cam[hit] * best[hit, None]
    return SceneCloud(pts, label[hit], camera)
