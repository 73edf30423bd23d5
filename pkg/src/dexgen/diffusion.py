"""Velocity-parameterized diffusion over 12D wrist vectors.

The forward process follows a linear DDPM variance schedule. Sampling
integrates the probability-flow ODE with Euler steps from t = 1 down to
t = 0, and the same trajectory yields the log-likelihood through the
divergence of the drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry.transforms import svd_project

K_TRANS = 25.0
EMBED_DIM = 12
FD_TRACE_STEP = 1e-4


class DivergenceError(FloatingPointError):
    """The velocity field produced a non-finite value during integration."""

    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class DiffusionSchedule:
    beta_min: float = 1e-4
    beta_max: float = 0.02
    t_train: int = 1000
    t_inference: int = 200
    betas: np.ndarray = field(init=False, repr=False, compare=False)
    alpha_bars: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.beta_min <= self.beta_max < 1.0:
            raise ValueError("need 0 < beta_min <= beta_max < 1")
        if self.t_train < 2 or self.t_inference < 1:
            raise ValueError("t_train must be >= 2 and t_inference >= 1")
        if self.t_train % self.t_inference:
            raise ValueError(f"t_inference={self.t_inference} must divide t_train={self.t_train}")
        i = np.arange(1, self.t_train + 1)
        betas = self.beta_min + (i - 1) / (self.t_train - 1) * (self.beta_max - self.beta_min)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @property
    def stride(self):
        return self.t_train // self.t_inference

    def _index(self, i):
        i = np.asarray(i)
        if not np.issubdtype(i.dtype, np.integer):
            raise TypeError("step index must be an integer")
        if np.any((i < 1) | (i > self.t_train)):
            raise IndexError(f"step index must lie in [1, {self.t_train}]")
        return i - 1

    def beta(self, i):
        """beta_i for the 1-based training step ``i``."""
        return self.betas[self._index(i)]

    def alpha_bar(self, i):
        """Cumulative product of (1 - beta) up to step ``i`` inclusive."""
        return self.alpha_bars[self._index(i)]

    def step_of(self, t):
        """Training step for time ``t`` in (0, 1] on the training grid."""
        i = np.rint(np.asarray(t, dtype=float) * self.t_train).astype(np.int64)
        if np.any(np.abs(i - np.asarray(t) * self.t_train) > 1e-6):
            raise ValueError("t is not on the training grid")
        return i

    def drift_scale(self, i):
        """``T_train beta_i sqrt(abar_i) / (2 sqrt(1 - abar_i))``, the ODE factor on v."""
        ab = self.alpha_bar(i)
        return self.t_train * self.beta(i) * np.sqrt(ab) / (2.0 * np.sqrt(1.0 - ab))


def beta_at(i, sched):
    return float(sched.beta(i))


def alpha_bar_at(t, sched):
    """ᾱ at time ``t`` in (0, 1]."""
    return float(sched.alpha_bar(int(sched.step_of(t))))


# ---------------------------------------------------------------- embedding

def embed(translation, rotation, k_trans=K_TRANS):
    """12D wrist vector ``[k_trans * T, rows of R]`` (batched)."""
    t = np.asarray(translation, dtype=float)
    r = np.asarray(rotation, dtype=float)
    return np.concatenate([k_trans * t, r.reshape(r.shape[:-2] + (9,))], axis=-1)


def unembed(g, k_trans=K_TRANS):
    """Inverse of :func:`embed`; rotation channels are projected onto SO(3)."""
    g = np.asarray(g, dtype=float)
    if g.shape[-1] != EMBED_DIM:
        raise ValueError(f"expected trailing dimension {EMBED_DIM}, got {g.shape}")
    return g[..., :3] / k_trans, svd_project(g[..., 3:].reshape(g.shape[:-1] + (3, 3)))


# ---------------------------------------------------------------- forward process

def noise_sample(g, alpha_bar, eps):
    """``sqrt(abar) g + sqrt(1 - abar) eps``."""
    ab = np.asarray(alpha_bar, dtype=float)[..., None] if np.ndim(alpha_bar) else alpha_bar
    return np.sqrt(ab) * g + np.sqrt(1.0 - ab) * eps


def velocity_target(g, alpha_bar, eps):
    """``sqrt(abar) eps - sqrt(1 - abar) g``."""
    ab = np.asarray(alpha_bar, dtype=float)[..., None] if np.ndim(alpha_bar) else alpha_bar
    return np.sqrt(ab) * eps - np.sqrt(1.0 - ab) * g


def recover_sample(x, v, alpha_bar):
    """Clean sample from a noisy one and its velocity."""
    ab = np.asarray(alpha_bar, dtype=float)[..., None] if np.ndim(alpha_bar) else alpha_bar
    return np.sqrt(ab) * x - np.sqrt(1.0 - ab) * v


def recover_noise(x, v, alpha_bar):
    ab = np.asarray(alpha_bar, dtype=float)[..., None] if np.ndim(alpha_bar) else alpha_bar
    return np.sqrt(1.0 - ab) * x + np.sqrt(ab) * v


def standard_normal_logpdf(x):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    return -0.5 * d * math.log(2.0 * math.pi) - 0.5 * np.sum(x * x, axis=-1)


# ---------------------------------------------------------------- sampling

@dataclass
class DenoiseResult:
    g: np.ndarray                  # (B, 12) final ODE state
    translation: np.ndarray        # (B, 3)
    rotation: np.ndarray           # (B, 3, 3), projected onto SO(3)
    log_prob: np.ndarray | None    # (B,) when requested
    trajectory: np.ndarray | None  # (T_inference + 1, B, 12) when requested


def _eval_field(field_fn, x, feature, t, step):
    v = np.asarray(field_fn(x, feature, t), dtype=float)
    if v.shape != x.shape:
        raise ValueError(f"velocity field returned shape {v.shape}, expected {x.shape}")
    if not np.all(np.isfinite(v)):
        raise DivergenceError(step, "velocity field returned a non-finite value")
    return v


def denoise(field_fn, feature, x1, sched=DiffusionSchedule(), with_log_prob=False,
            keep_trajectory=False, k_trans=K_TRANS, fd_step=FD_TRACE_STEP):
    """Integrate the probability-flow ODE from ``x1`` (t = 1) to t = 0.

    ``field_fn(x, feature, t)`` maps a (B, 12) batch to velocities; ``feature``
    is passed through untouched (one row per sample). With ``with_log_prob``
    the divergence of the drift is accumulated from 12 central finite
    differences per step, giving ``log N(x1) + sum Tr(d vbar / dx) dt``.
    """
    x = np.array(x1, dtype=float, copy=True)
    if x.ndim != 2 or x.shape[1] != EMBED_DIM:
        raise ValueError(f"x1 must have shape (B, {EMBED_DIM})")
    b = len(x)
    dt = 1.0 / sched.t_inference
    log_p = standard_normal_logpdf(x) if with_log_prob else None
    traj = [x.copy()] if keep_trajectory else None
    if with_log_prob:
        eye = fd_step * np.eye(EMBED_DIM)
        probes = np.concatenate([eye, -eye])  # (24, 12)
        feat_rep = None if feature is None else np.repeat(np.asarray(feature), 1 + 2 * EMBED_DIM, axis=0)
    for k in range(sched.t_inference, 0, -1):
        i = k * sched.stride
        t = i / sched.t_train
        c = sched.drift_scale(i)
        if with_log_prob:
            # current point plus 24 probes, evaluated in one call
            xs = (x[:, None, :] + np.concatenate([np.zeros((1, EMBED_DIM)), probes])[None]).reshape(-1, EMBED_DIM)
            vs = _eval_field(field_fn, xs, feat_rep, t, k).reshape(b, 1 + 2 * EMBED_DIM, EMBED_DIM)
            v = vs[:, 0]
            plus = vs[:, 1:1 + EMBED_DIM]
            minus = vs[:, 1 + EMBED_DIM:]
            trace = np.einsum("bdd->b", plus - minus) / (2.0 * fd_step)
            log_p = log_p + c * trace * dt
        else:
            v = _eval_field(field_fn, x, feature, t, k)
        x = x - c * v * dt
        if keep_trajectory:
            traj.append(x.copy())
    trans, rot = unembed(x, k_trans)
    return DenoiseResult(x, trans, rot, log_p,
                         None if traj is None else np.stack(traj))


def log_prob(field_fn, feature, x1, sched=DiffusionSchedule(), **kw):
    """Log-likelihood of the sample that ``x1`` flows to (see :func:`denoise`)."""
    return denoise(field_fn, feature, x1, sched, with_log_prob=True, **kw).log_prob


# ---------------------------------------------------------------- ranking

@dataclass(frozen=True)
class RankWeights:
    eta: float = 10.0

    def __post_init__(self):
        if not math.isfinite(self.eta):
            raise ValueError("eta must be finite")


def rank_score(log_p, graspness, weights=RankWeights()):
    """``log p + eta * GS``; higher is better."""
    return np.asarray(log_p, dtype=float) + weights.eta * np.asarray(graspness, dtype=float)


def rank_order(scores):
    """Indices by descending score, lowest index first among ties."""
    scores = np.asarray(scores, dtype=float)
    return np.lexsort((np.arange(len(scores)), -scores))


# ---------------------------------------------------------------- analytic fields

def gaussian_velocity_field(mean=0.0, std=1.0, sched=DiffusionSchedule()):
    """Exact velocity field for data distributed as N(mean, std^2 I).

    Uses the Gaussian posterior means of the noise and the clean sample
    given the noisy point. ``std = 0`` gives a point mass at ``mean``.
    """
    mean = np.asarray(mean, dtype=float)
    s2 = float(std) ** 2

    def field_fn(x, feature, t):
        ab = float(sched.alpha_bar(int(sched.step_of(t))))
        sa, var = math.sqrt(ab), 1.0 - ab
        sigma = math.sqrt(var)
        denom = ab * s2 + var
        resid = x - sa * mean
        eps_hat = sigma / denom * resid
        x0_hat = mean + sa * s2 / denom * resid
        return sa * eps_hat - sigma * x0_hat

    return field_fn


def zero_field(x, feature, t):
    return np.zeros_like(x)
