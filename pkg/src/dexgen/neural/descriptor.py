"""Hand-crafted per-point features standing in for a learned point backbone.

Layout of the 64-wide descriptor (lengths are divided by the radius):

====== ============================================ ==================
slice  content                                      under camera roll
====== ============================================ ==================
0:9    covariance eigenvalues at 3 radii, ascending  invariant
9:18   unit normal at 3 radii, oriented to n_z < 0  x, y rotate
18     height: 0.98 depth quantile of the cloud - z invariant
19:29  radial point-count profile, 10 shells        invariant
29:59  centroid offset per shell (10 x 3)           x, y rotate
59:62  surface variation at 3 radii                 invariant
62     neighbor count / K                           invariant
63     1 when fewer than 5 neighbors were found     invariant
====== ============================================ ==================

"Camera roll" is a rotation about the optical (+z) axis. Every entry
depends on point offsets only (the height entry uses a cloud-wide
quantile that moves with the cloud), so translating the cloud leaves the
descriptors unchanged. Wider descriptors are zero-padded.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

FEATURE_DIM = 64
N_SCALES = 3
N_SHELLS = 10
MAX_NEIGHBORS = 64
DEFAULT_RADIUS = 0.03
SCALES = (0.5, 0.75, 1.0)  # fractions of the radius
MIN_NEIGHBORS = 5
HEIGHT_QUANTILE = 0.98

NORMAL_SLICE = slice(9, 18)
OFFSET_SLICE = slice(29, 59)
FLAG_INDEX = 63


def covariance_eigenvalues(offsets, weights=None):
    """Ascending eigenvalues of the (weighted) covariance of ``offsets`` (..., K, 3)."""
    offsets = np.asarray(offsets, dtype=float)
    if weights is None:
        weights = np.ones(offsets.shape[:-1])
    w = np.asarray(weights, dtype=float)
    n = np.maximum(w.sum(axis=-1), 1.0)
    mean = np.einsum("...k,...kd->...d", w, offsets) / n[..., None]
    c = offsets - mean[..., None, :]
    cov = np.einsum("...k,...ki,...kj->...ij", w, c, c) / n[..., None, None]
    return np.linalg.eigh(cov)


def descriptors(points, radius=DEFAULT_RADIUS, indices=None, width=FEATURE_DIM):
    """Descriptors (M, width) for ``points[indices]`` (all points by default)."""
    if width < FEATURE_DIM:
        raise ValueError(f"width must be at least {FEATURE_DIM}")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if indices is None:
        indices = np.arange(len(points))
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    tree = cKDTree(points)
    k = min(MAX_NEIGHBORS, len(points))
    dist, nbr = tree.query(points[indices], k=k, distance_upper_bound=radius)
    dist = dist.reshape(len(indices), k)
    nbr = nbr.reshape(len(indices), k)
    found = np.isfinite(dist)
    safe = np.where(found, nbr, 0)
    offsets = (points[safe] - points[indices][:, None, :]) / radius
    offsets[~found] = 0.0
    r = np.where(found, dist / radius, np.inf)

    out = np.zeros((len(indices), width))
    for s, scale in enumerate(SCALES):
        w = (r <= scale).astype(float)
        vals, vecs = covariance_eigenvalues(offsets, w)
        vals = np.maximum(vals, 0.0)
        normal = vecs[..., 0]
        normal = np.where(normal[:, 2:3] > 0, -normal, normal)
        # a normal needs a well-separated smallest eigenvalue; collinear patches get none
        enough = (w.sum(axis=1) >= MIN_NEIGHBORS) & (vals[:, 1] - vals[:, 0] > 1e-6)
        out[:, 3 * s:3 * s + 3] = np.where(enough[:, None], vals, 0.0)
        out[:, 9 + 3 * s:12 + 3 * s] = np.where(enough[:, None], normal, 0.0)
        total = vals.sum(axis=1)
        out[:, 59 + s] = np.where(enough & (total > 0), vals[:, 0] / np.where(total > 0, total, 1.0), 0.0)

    floor = np.quantile(points[:, 2], HEIGHT_QUANTILE)
    out[:, 18] = (floor - points[indices, 2]) / radius

    shell = np.where(found, np.minimum(np.floor(np.where(found, r, 0.0) * N_SHELLS), N_SHELLS - 1),
                     -1).astype(np.int64)
    count = found.sum(axis=1)
    for j in range(N_SHELLS):
        m = (shell == j) & found
        cnt = m.sum(axis=1)
        out[:, 19 + j] = cnt / k
        centroid = np.einsum("mk,mkd->md", m.astype(float), offsets) / np.maximum(cnt, 1)[:, None]
        out[:, 29 + 3 * j:32 + 3 * j] = centroid
    out[:, 62] = count / k
    out[:, FLAG_INDEX] = (count < MIN_NEIGHBORS).astype(float)
    return out


def local_descriptor(cloud, index, radius=DEFAULT_RADIUS, width=FEATURE_DIM):
    """Descriptor of one point of a ``SceneCloud`` (or raw (N, 3) array)."""
    pts = getattr(cloud, "points", cloud)
    return descriptors(pts, radius, [index], width)[0]


def roll_matrix(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_descriptor(features, angle):
    """Apply a camera roll of ``angle`` to the axis-covariant entries."""
    f = np.array(features, dtype=float, copy=True)
    rz = roll_matrix(angle)
    lead = f.shape[:-1]
    for sl in (NORMAL_SLICE, OFFSET_SLICE):
        block = f[..., sl].reshape(lead + (-1, 3))
        f[..., sl] = (block @ rz.T).reshape(lead + (-1,))
    return f
