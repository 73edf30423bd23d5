"""Grasp wrench analysis.

Contact forces act along inward normals ``c_i`` at points ``p_i``; wrenches
are taken about a reference point (the object's center of mass) with no
torque normalization. Everything here is batched over a leading axis where
noted so the synthesis optimizer can evaluate many hand poses at once.
"""

from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

log = logging.getLogger(__name__)

GRAVITY = 9.81
MAX_EXACT_CONTACTS = 8


class Branch(str, enum.Enum):
    REGULARIZED = "regularized"
    ORIGINAL = "original"


@dataclass(frozen=True)
class ContactSet:
    points: np.ndarray
    normals: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        c = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if len(p) < 1 or len(p) != len(c):
            raise ValueError("need at least one contact with one normal per point")
        if np.any(np.abs(np.linalg.norm(c, axis=1) - 1.0) > 1e-9):
            raise ValueError("contact normals must be unit length")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "normals", c)
        object.__setattr__(self, "reference", np.asarray(self.reference, dtype=float).reshape(3))

    @property
    def n(self):
        return len(self.points)


@dataclass(frozen=True)
class SynthesisThresholds:
    tau_fc: float = 0.05
    tau_lambda: float = 0.1
    p_keep: float = 0.9

    def __post_init__(self):
        if not self.tau_fc > 0:
            raise ValueError("tau_fc must be positive")
        if not 0 < self.tau_lambda < 1:
            raise ValueError("tau_lambda must lie in (0, 1)")
        if not 0 <= self.p_keep <= 1:
            raise ValueError("p_keep must lie in [0, 1]")


def _skew(v):
    x, y, z = np.moveaxis(v, -1, 0)
    zero = np.zeros_like(x)
    return np.stack([np.stack([zero, -z, y], -1),
                     np.stack([z, zero, -x], -1),
                     np.stack([-y, x, zero], -1)], -2)


def grasp_matrix(cs):
    """6 x 3n map from stacked contact forces to (force, torque) about the reference."""
    blocks = []
    for p in cs.points:
        blocks.append(np.vstack([np.eye(3), _skew(p - cs.reference)]))
    return np.hstack(blocks)


def contact_wrenches(points, normals, reference):
    """Unit-force wrench of every contact, shape (..., 6, n).

    Equals ``G @ blockdiag(c)``: column ``i`` is ``(c_i, (p_i - ref) x c_i)``.
    """
    points = np.asarray(points, dtype=float)
    normals = np.asarray(normals, dtype=float)
    ref = np.asarray(reference, dtype=float)[..., None, :]
    torque = np.cross(points - ref, normals)
    return np.swapaxes(np.concatenate([normals, torque], axis=-1), -1, -2)


@lru_cache(maxsize=None)
def _faces(n):
    """Faces of {lam in [0,1]^n, max = 1} as (free, ones) index tuples.

    Coordinates outside ``free`` and ``ones`` sit at zero; ``ones`` is never
    empty. Grouped by free set so one inverse serves several faces.
    """
    faces = []
    idx = range(n)
    for k in range(n):
        for free in itertools.combinations(idx, k):
            rest = [i for i in idx if i not in free]
            ones_list = [u for m in range(1, len(rest) + 1) for u in itertools.combinations(rest, m)]
            faces.append((free, ones_list))
    return faces


def _sym_inverse(a):
    """Batched inverse of symmetric PSD blocks; ``ok`` is False where singular."""
    k = a.shape[-1]
    scale = np.maximum(np.trace(a, axis1=-2, axis2=-1) / k, 1e-300)
    if k == 1:
        det = a[:, 0, 0]
        ok = det > 1e-12 * scale
        return (1.0 / np.where(ok, det, 1.0))[:, None, None], ok
    if k == 2:
        p, q, r = a[:, 0, 0], a[:, 0, 1], a[:, 1, 1]
        det = p * r - q * q
        ok = det > 1e-12 * scale ** 2
        inv = np.stack([np.stack([r, -q], -1), np.stack([-q, p], -1)], -2)
        return inv / np.where(ok, det, 1.0)[:, None, None], ok
    if k == 3:
        c00 = a[:, 1, 1] * a[:, 2, 2] - a[:, 1, 2] * a[:, 2, 1]
        c01 = a[:, 1, 2] * a[:, 2, 0] - a[:, 1, 0] * a[:, 2, 2]
        c02 = a[:, 1, 0] * a[:, 2, 1] - a[:, 1, 1] * a[:, 2, 0]
        c11 = a[:, 0, 0] * a[:, 2, 2] - a[:, 0, 2] * a[:, 2, 0]
        c12 = a[:, 0, 1] * a[:, 2, 0] - a[:, 0, 0] * a[:, 2, 1]
        c22 = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
        det = a[:, 0, 0] * c00 + a[:, 0, 1] * c01 + a[:, 0, 2] * c02
        ok = det > 1e-12 * scale ** 3
        inv = np.stack([np.stack([c00, c01, c02], -1), np.stack([c01, c11, c12], -1),
                        np.stack([c02, c12, c22], -1)], -2)
        return inv / np.where(ok, det, 1.0)[:, None, None], ok
    ev = np.linalg.eigvalsh(a)
    ok = ev[:, 0] > 1e-12 * np.maximum(ev[:, -1], 1e-300)
    inv = np.linalg.inv(np.where(ok[:, None, None], a, np.eye(k)))
    return inv, ok


def optimal_contact_scale_batch(wrenches, active=None, tol=1e-12):
    """Exact minimizer of ||W lam|| over lam >= 0 with max(lam) = 1.

    ``wrenches`` has shape (B, 6, n). ``active`` (B, n) marks contacts that
    exist; inactive ones are pinned to zero. Every face of the feasible set
    (each coordinate at 0, at 1, or free, with at least one at 1) is solved
    as an unconstrained least-squares problem and the best face point that
    stays inside the box wins. Faces whose subproblem is singular are
    skipped: their minimum is then also attained on a lower-dimensional
    face. Ties go to the first face in enumeration order.

    Returns ``(lam (B, n), p_t (B,))``; rows without active contacts give
    ``lam = 0`` and ``p_t = nan``.
    """
    w = np.asarray(wrenches, dtype=float)
    b, _, n = w.shape
    if n > MAX_EXACT_CONTACTS:
        raise ValueError(f"exact enumeration supports n <= {MAX_EXACT_CONTACTS}")
    active = np.ones((b, n), dtype=bool) if active is None else np.asarray(active, dtype=bool)
    q = np.swapaxes(w, 1, 2) @ w  # Gram matrix (B, n, n)
    best_val = np.full(b, np.inf)
    best_lam = np.zeros((b, n))
    for free, ones_list in _faces(n):
        free = list(free)
        free_ok = np.all(active[:, free], axis=1) if free else np.ones(b, dtype=bool)
        if not np.any(free_ok):
            continue
        if free:
            inv, nonsingular = _sym_inverse(q[:, free][:, :, free])
            free_ok = free_ok & nonsingular
        for ones in ones_list:
            ones = list(ones)
            allowed = free_ok & np.all(active[:, ones], axis=1)
            if not np.any(allowed):
                continue
            s_uu = np.sum(q[:, ones][:, :, ones], axis=(1, 2))
            lam = np.zeros((b, n))
            lam[:, ones] = 1.0
            if free:
                rhs = np.sum(q[:, free][:, :, ones], axis=2)
                x = -np.einsum("bij,bj->bi", inv, rhs)
                allowed &= np.all((x >= -1e-10) & (x <= 1.0 + 1e-10), axis=1)
                x = np.clip(x, 0.0, 1.0)
                lam[:, free] = x
                val = s_uu + np.einsum("bi,bi->b", x, rhs)
            else:
                val = s_uu
            better = allowed & (val < best_val - tol)
            best_val = np.where(better, val, best_val)
            best_lam[better] = lam[better]
    # report the achieved norm directly rather than the face formula
    p_t = np.linalg.norm(np.einsum("bkn,bn->bk", w, best_lam), axis=1)
    p_t[~np.isfinite(best_val)] = np.nan
    return best_lam, p_t


def _projected_gradient(wv, iters=5000, tol=1e-12):
    """Fallback for many contacts: projected gradient per fixed argmax index."""
    n = wv.shape[1]
    q = wv.T @ wv
    step = 1.0 / max(np.linalg.eigvalsh(q)[-1], 1e-12)
    best = (np.inf, None, False)
    for j in range(n):
        lam = np.full(n, 0.5)
        lam[j] = 1.0
        converged = False
        for _ in range(iters):
            new = np.clip(lam - step * (q @ lam), 0.0, 1.0)
            new[j] = 1.0
            if np.max(np.abs(new - lam)) < tol:
                converged = True
                lam = new
                break
            lam = new
        val = float(lam @ q @ lam)
        if val < best[0]:
            best = (val, lam, converged)
    return best[1], np.sqrt(max(best[0], 0.0)), best[2]


def optimal_contact_scale(g, normals):
    """Solve ``min ||G (lam * c)||_2  s.t. max(lam) = 1, lam >= 0``.

    Parameters
    ----------
    g : (6, 3n) grasp matrix
    normals : (n, 3) inward unit normals

    Returns
    -------
    lam : (n,) optimal contact scales, ``max(lam) == 1`` exactly
    p_t : achieved wrench norm
    """
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    n = len(normals)
    wv = np.stack([g[:, 3 * i:3 * i + 3] @ normals[i] for i in range(n)], axis=1)
    if n > MAX_EXACT_CONTACTS:
        lam, p_t, converged = _projected_gradient(wv)
        log.info("projected-gradient fallback for %d contacts: converged=%s", n, converged)
        return lam, p_t
    lam, p_t = optimal_contact_scale_batch(wv[None])
    return lam[0], float(p_t[0])


def fc_energy_batch(wrenches, active, thresholds, keep):
    """Force-closure energy for a batch; ``keep`` is the Bernoulli switch B per row.

    Returns ``(energy (B,), regularized (B,) bool, lam, p_t)``. Rows with no
    active contact get energy 0 on the original branch.
    """
    w = np.asarray(wrenches, dtype=float)
    active = np.asarray(active, dtype=bool)
    lam, p_t = optimal_contact_scale_batch(w, active)
    unit = np.linalg.norm(np.einsum("bkn,bn->bk", w, active.astype(float)), axis=1)
    lam_min = np.min(np.where(active, lam, np.inf), axis=1)
    has = np.any(active, axis=1)
    reg = has & (p_t < thresholds.tau_fc) & (lam_min >= thresholds.tau_lambda) & np.asarray(keep, bool)
    energy = np.where(reg, np.nan_to_num(p_t), unit)
    return energy, reg, lam, p_t


def fc_energy(cs, thresholds, keep):
    """Force-closure energy and the branch taken (``keep`` is B, drawn by the caller)."""
    w = contact_wrenches(cs.points, cs.normals, cs.reference)[None]
    energy, reg, lam, p_t = fc_energy_batch(w, np.ones((1, cs.n), bool), thresholds, [keep])
    return float(energy[0]), Branch.REGULARIZED if reg[0] else Branch.ORIGINAL


def friction_edges(normal, mu, n_edges=8):
    """Polyhedral friction cone edges ``n + mu (cos a t1 + sin a t2)`` (unit normal part)."""
    n = np.asarray(normal, dtype=float)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    ang = 2.0 * np.pi * np.arange(n_edges) / n_edges
    return n + mu * (np.cos(ang)[:, None] * t1 + np.sin(ang)[:, None] * t2)


def can_resist(cs, wrench, mu, force_cap=10.0, n_edges=8):
    """True when cone-bounded contact forces can produce ``wrench`` exactly.

    Each contact force is a non-negative combination of cone edges whose
    normal component is capped at ``force_cap`` newtons.
    """
    cols = []
    for p, c in zip(cs.points, cs.normals):
        r = p - cs.reference
        for e in friction_edges(c, mu, n_edges):
            cols.append(np.concatenate([e, np.cross(r, e)]))
    a_eq = np.array(cols).T
    k = a_eq.shape[1]
    a_ub = np.zeros((cs.n, k))
    for i in range(cs.n):
        a_ub[i, i * n_edges:(i + 1) * n_edges] = 1.0
    res = linprog(np.zeros(k), A_ub=a_ub, b_ub=np.full(cs.n, force_cap), A_eq=a_eq,
                  b_eq=np.asarray(wrench, dtype=float), bounds=(0, None), method="highs")
    return res.status == 0


def resists_gravity_6dir(cs, mu=0.2, mass=0.1, force_cap=10.0, n_edges=8):
    """Quasi-static stability: gravity along each of +-x, +-y, +-z can be denied."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    for axis in range(3):
        for sign in (1.0, -1.0):
            g = np.zeros(6)
            g[axis] = sign * mass * GRAVITY
            if not can_resist(cs, -g, mu, force_cap, n_edges):
                return False
    return True


def diagnostics(cs, thresholds, keep):
    """JSON-ready dump of the bilevel solve for one contact set."""
    lam, p_t = optimal_contact_scale(grasp_matrix(cs), cs.normals)
    energy, branch = fc_energy(cs, thresholds, keep)
    return {"lambda": [float(v) for v in lam], "P_t": float(p_t), "E_FC": energy,
            "branch": branch.value}
