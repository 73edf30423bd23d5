"""Analytic primitives: signed distance, surface sampling and ray hits.

All functions take points expressed in the primitive's local frame. Boxes
are centered at the origin with full side lengths ``dims``; cylinders are
centered at the origin with their axis along local +z and ``dims =
(radius, height)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = {"sphere": 1, "box": 3, "cylinder": 2}


@dataclass(frozen=True)
class PrimitiveShape:
    kind: str
    dims: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}; expected one of {sorted(KINDS)}")
        dims = tuple(float(d) for d in np.atleast_1d(self.dims))
        if len(dims) != KINDS[self.kind]:
            raise ValueError(f"{self.kind} needs {KINDS[self.kind]} dims, got {len(dims)}")
        if not all(np.isfinite(d) and d > 0 for d in dims):
            raise ValueError(f"{self.kind} dims must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def bounding_radius(self):
        if self.kind == "sphere":
            return self.dims[0]
        if self.kind == "box":
            return 0.5 * float(np.linalg.norm(self.dims))
        r, h = self.dims
        return float(np.hypot(r, 0.5 * h))


def _box2_sdf(q):
    # q: (..., k) = |p| - half extents
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def sdf(shape, p):
    """Exact signed distance of local points ``p`` (..., 3); negative inside."""
    p = np.asarray(p, dtype=float)
    if shape.kind == "sphere":
        return np.linalg.norm(p, axis=-1) - shape.dims[0]
    if shape.kind == "box":
        return _box2_sdf(np.abs(p) - 0.5 * np.asarray(shape.dims))
    r, h = shape.dims
    radial = np.linalg.norm(p[..., :2], axis=-1)
    q = np.stack([radial - r, np.abs(p[..., 2]) - 0.5 * h], axis=-1)
    return _box2_sdf(q)


def _box_grad(p, half):
    """Gradient of the k-dimensional box sdf at points ``p`` (..., k)."""
    q = np.abs(p) - half
    sign = np.where(p < 0, -1.0, 1.0)
    pos = np.maximum(q, 0.0)
    norm = np.linalg.norm(pos, axis=-1, keepdims=True)
    outside = norm[..., 0] > 0
    g_out = sign * pos / np.where(norm > 0, norm, 1.0)
    k = np.argmax(q, axis=-1)
    g_in = np.zeros_like(p)
    np.put_along_axis(g_in, k[..., None], np.take_along_axis(sign, k[..., None], axis=-1), axis=-1)
    return np.where(outside[..., None], g_out, g_in)


def sdf_grad(shape, p):
    """Unit outward gradient of the sdf (surface normal of the closest point)."""
    p = np.asarray(p, dtype=float)
    if shape.kind == "sphere":
        n = np.linalg.norm(p, axis=-1, keepdims=True)
        fallback = np.zeros_like(p)
        fallback[..., 2] = 1.0
        return np.where(n > 1e-15, p / np.where(n > 1e-15, n, 1.0), fallback)
    if shape.kind == "box":
        return _box_grad(p, 0.5 * np.asarray(shape.dims))
    r, h = shape.dims
    radial = np.linalg.norm(p[..., :2], axis=-1, keepdims=True)
    safe = np.where(radial > 1e-15, radial, 1.0)
    ex = np.where(radial > 1e-15, p[..., :2] / safe, np.array([1.0, 0.0]))
    q2 = np.concatenate([radial, p[..., 2:3]], axis=-1)
    g2 = _box_grad(q2, np.array([r, 0.5 * h]))
    return np.concatenate([g2[..., :1] * ex, g2[..., 1:2]], axis=-1)


def closest_surface_point(shape, p):
    """Projection of local points onto the surface, with outward normals."""
    p = np.asarray(p, dtype=float)
    d = sdf(shape, p)
    g = sdf_grad(shape, p)
    return p - d[..., None] * g, g


def surface_area_parts(shape):
    """(name, area) of the pieces sampled by ``sample_surface``."""
    if shape.kind == "sphere":
        r = shape.dims[0]
        return [("sphere", 4.0 * np.pi * r * r)]
    if shape.kind == "box":
        sx, sy, sz = shape.dims
        return [("+x", sy * sz), ("-x", sy * sz), ("+y", sx * sz),
                ("-y", sx * sz), ("+z", sx * sy), ("-z", sx * sy)]
    r, h = shape.dims
    return [("side", 2.0 * np.pi * r * h), ("+z", np.pi * r * r), ("-z", np.pi * r * r)]


def sample_surface(shape, n, seed=None):
    """Area-uniform surface samples.

    Returns ``(points, normals, part)`` where ``part`` indexes
    ``surface_area_parts(shape)``.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    parts = surface_area_parts(shape)
    areas = np.array([a for _, a in parts])
    part = rng.choice(len(parts), size=n, p=areas / areas.sum())
    pts = np.zeros((n, 3))
    nrm = np.zeros((n, 3))
    if shape.kind == "sphere":
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return shape.dims[0] * v, v, part
    if shape.kind == "box":
        half = 0.5 * np.asarray(shape.dims)
        u = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
        axis = part // 2
        sign = np.where(part % 2 == 0, 1.0, -1.0)
        u[np.arange(n), axis] = sign * half[axis]
        nrm[np.arange(n), axis] = sign
        return u, nrm, part
    r, h = shape.dims
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    side = part == 0
    z = rng.uniform(-0.5 * h, 0.5 * h, size=n)
    pts[side] = np.stack([r * np.cos(phi[side]), r * np.sin(phi[side]), z[side]], axis=1)
    nrm[side] = np.stack([np.cos(phi[side]), np.sin(phi[side]), np.zeros(side.sum())], axis=1)
    cap = ~side
    rad = r * np.sqrt(rng.uniform(0.0, 1.0, size=n))
    zc = np.where(part == 1, 0.5 * h, -0.5 * h)
    pts[cap] = np.stack([rad[cap] * np.cos(phi[cap]), rad[cap] * np.sin(phi[cap]), zc[cap]], axis=1)
    nrm[cap, 2] = np.where(part[cap] == 1, 1.0, -1.0)
    return pts, nrm, part


def _slab_hits(o, d, lo, hi):
    """Entry parameter of rays against an axis-aligned slab box (inf on miss)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    tmin = np.max(np.minimum(t1, t2), axis=-1)
    tmax = np.min(np.maximum(t1, t2), axis=-1)
    hit = (tmax >= tmin) & (tmax > 0) & (tmin > 0)
    return np.where(hit, tmin, np.inf)


def ray_hit(shape, origins, dirs):
    """Distance along unit ``dirs`` to the first surface hit from outside (inf on miss)."""
    o = np.asarray(origins, dtype=float)
    d = np.asarray(dirs, dtype=float)
    if shape.kind == "sphere":
        r = shape.dims[0]
        b = np.sum(o * d, axis=-1)
        c = np.sum(o * o, axis=-1) - r * r
        disc = b * b - c
        t = -b - np.sqrt(np.maximum(disc, 0.0))
        return np.where((disc >= 0) & (t > 0), t, np.inf)
    if shape.kind == "box":
        half = 0.5 * np.asarray(shape.dims)
        return _slab_hits(o, d, -half, half)
    r, h = shape.dims
    best = np.full(o.shape[:-1], np.inf)
    # lateral surface
    a = d[..., 0] ** 2 + d[..., 1] ** 2
    b = o[..., 0] * d[..., 0] + o[..., 1] * d[..., 1]
    c = o[..., 0] ** 2 + o[..., 1] ** 2 - r * r
    disc = b * b - a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-b - np.sqrt(np.maximum(disc, 0.0))) / a
    z = o[..., 2] + t * d[..., 2]
    ok = (a > 1e-15) & (disc >= 0) & (t > 0) & (np.abs(z) <= 0.5 * h)
    best = np.where(ok, t, best)
    # caps
    for zc in (0.5 * h, -0.5 * h):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (zc - o[..., 2]) / d[..., 2]
        x = o[..., 0] + t * d[..., 0]
        y = o[..., 1] + t * d[..., 1]
        outside_cap = np.sign(o[..., 2] - zc) == np.sign(zc)
        ok = np.isfinite(t) & (t > 0) & (x * x + y * y <= r * r) & outside_cap
        best = np.where(ok & (t < best), t, best)
    return best
