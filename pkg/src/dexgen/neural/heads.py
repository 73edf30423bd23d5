"""Prediction heads: graspness/segmentation, velocity denoiser, joint angles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffusion import EMBED_DIM, K_TRANS
from .mlp import Mlp, load_checkpoint, save_checkpoint

MAX_FREQUENCY = 1e4


def sinusoidal_embed(t, dim):
    """Interleaved ``(sin(w_j t), cos(w_j t))`` with ``w_j`` geometric in [1, 1e4].

    ``t`` is a scalar or (B,) array of times in [0, 1]; returns (..., dim).
    """
    if dim < 2 or dim % 2:
        raise ValueError("dim must be a positive even number")
    half = dim // 2
    freqs = MAX_FREQUENCY ** (np.arange(half) / max(half - 1, 1))
    arg = np.asarray(t, dtype=float)[..., None] * freqs
    out = np.empty(arg.shape[:-1] + (dim,))
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out


@dataclass
class GraspnessHead:
    """Single affine map from a point feature to (2 segmentation logits, GS)."""

    net: Mlp

    @classmethod
    def create(cls, feature_dim, rng=None):
        return cls(Mlp.create((feature_dim, 3), "identity", rng=rng))

    def predict(self, f):
        out = self.net(f)
        return out[..., :2], out[..., 2]


@dataclass
class Denoiser:
    """Velocity predictor on ``concat(x, f + embed(t))``."""

    net: Mlp

    @classmethod
    def create(cls, feature_dim, hidden=(512, 256), rng=None, zero_last=True):
        sizes = (EMBED_DIM + feature_dim,) + tuple(hidden) + (EMBED_DIM,)
        acts = ("mish",) * len(hidden) + ("identity",)
        return cls(Mlp.create(sizes, acts, rng=rng, zero_last=zero_last))

    @property
    def feature_dim(self):
        return self.net.sizes[0] - EMBED_DIM

    def inputs(self, x, f, t):
        f = np.asarray(f, dtype=float)
        cond = f + sinusoidal_embed(np.broadcast_to(t, f.shape[:-1]), f.shape[-1])
        return np.concatenate([np.asarray(x, dtype=float), cond], axis=-1)

    def predict(self, x, f, t):
        return self.net(self.inputs(x, f, t))

    def field(self):
        """Adapter to the ``(x, feature, t)`` signature used by the sampler."""
        return lambda x, feature, t: self.predict(x, feature, t)


@dataclass
class JointHead:
    """Joint angles (or gripper width) from ``concat(f, k_trans T, R)``."""

    net: Mlp
    k_trans: float = K_TRANS

    @classmethod
    def create(cls, feature_dim, dof, hidden=256, rng=None, k_trans=K_TRANS):
        sizes = (feature_dim + EMBED_DIM,) + (hidden,) * 5 + (dof,)
        acts = ("relu",) * 5 + ("identity",)
        residual = (False, True, True, True, True, False)
        return cls(Mlp.create(sizes, acts, residual, rng=rng), k_trans)

    @property
    def dof(self):
        return self.net.sizes[-1]

    def inputs(self, f, translation, rotation):
        r = np.asarray(rotation, dtype=float)
        return np.concatenate([np.asarray(f, dtype=float), self.k_trans * np.asarray(translation, float),
                               r.reshape(r.shape[:-2] + (9,))], axis=-1)

    def predict(self, f, translation, rotation):
        return self.net(self.inputs(f, translation, rotation))


@dataclass
class GraspModel:
    graspness: GraspnessHead
    denoiser: Denoiser
    joints: JointHead

    @classmethod
    def create(cls, feature_dim, dof, rng=None, denoiser_hidden=(512, 256), joint_hidden=256):
        rng = np.random.default_rng(rng)
        return cls(GraspnessHead.create(feature_dim, rng),
                   Denoiser.create(feature_dim, denoiser_hidden, rng),
                   JointHead.create(feature_dim, dof, joint_hidden, rng))

    @property
    def feature_dim(self):
        return self.denoiser.feature_dim

    @property
    def dof(self):
        return self.joints.dof

    def nets(self):
        return {"graspness": self.graspness.net, "denoiser": self.denoiser.net,
                "joints": self.joints.net}

    def parameters(self):
        out = []
        for name in ("graspness", "denoiser", "joints"):
            out += self.nets()[name].parameters()
        return out

    def save(self, path, meta=None):
        meta = dict(meta or {})
        meta["k_trans"] = self.joints.k_trans
        save_checkpoint(path, self.nets(), meta)

    @classmethod
    def load(cls, path):
        nets, meta = load_checkpoint(path)
        missing = {"graspness", "denoiser", "joints"} - set(nets)
        if missing:
            raise ValueError(f"{path}: checkpoint lacks {sorted(missing)}")
        model = cls(GraspnessHead(nets["graspness"]), Denoiser(nets["denoiser"]),
                    JointHead(nets["joints"], meta.get("k_trans", K_TRANS)))
        return model, meta
