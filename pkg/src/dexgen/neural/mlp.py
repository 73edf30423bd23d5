"""Dense networks in plain numpy: forward/backward passes, Adam, checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("identity", "relu", "mish")
CHECKPOINT_MAGIC = b"DXGNCKPT"
CHECKPOINT_VERSION = 1


def _tanh_softplus(x):
    """``tanh(softplus(x))`` and ``sigmoid(x)`` via one exponential."""
    n = np.exp(np.minimum(x, 20.0))
    w = n * (n + 2.0)
    return w / (w + 2.0), n / (1.0 + n)


def mish(x):
    """``x * tanh(softplus(x))``."""
    return x * _tanh_softplus(x)[0]


def mish_grad(x):
    tsp, sig = _tanh_softplus(x)
    return tsp + x * (1.0 - tsp * tsp) * sig


def activate(name, z):
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "mish":
        return mish(z)
    raise ValueError(f"unknown activation {name!r}")


def activate_grad(name, z):
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "mish":
        return mish_grad(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Mlp:
    """Stack of affine layers ``y = act(x W + b)``.

    ``residual[k]`` adds the layer input to its output (requires equal
    widths). Weights are stored (in, out) so rows of ``x`` are samples.
    """

    sizes: tuple
    activations: tuple
    residual: tuple = None
    weights: list = field(default_factory=list, repr=False)
    biases: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        n = len(self.sizes) - 1
        if n < 1:
            raise ValueError("need at least one layer")
        if isinstance(self.activations, str):
            self.activations = (self.activations,) * n
        self.activations = tuple(self.activations)
        if len(self.activations) != n:
            raise ValueError("one activation per layer expected")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.residual = tuple(bool(r) for r in (self.residual or (False,) * n))
        if len(self.residual) != n:
            raise ValueError("one residual flag per layer expected")
        for k, r in enumerate(self.residual):
            if r and self.sizes[k] != self.sizes[k + 1]:
                raise ValueError(f"residual layer {k} needs equal widths")
        if not self.weights:
            self.weights = [np.zeros((a, b)) for a, b in zip(self.sizes[:-1], self.sizes[1:])]
            self.biases = [np.zeros(b) for b in self.sizes[1:]]

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    @classmethod
    def create(cls, sizes, activations, residual=None, rng=None, zero_last=False):
        """Randomly initialized network (He-uniform for rectifiers, Glorot otherwise)."""
        rng = np.random.default_rng(rng)
        net = cls(sizes, activations, residual)
        for k, (a, b) in enumerate(zip(net.sizes[:-1], net.sizes[1:])):
            gain = 6.0 if net.activations[k] in ("relu", "mish") else 3.0
            lim = np.sqrt(gain / a)
            if net.residual[k]:
                lim *= 0.1  # keep residual branches near identity at init
            net.weights[k] = rng.uniform(-lim, lim, size=(a, b))
        if zero_last:
            net.weights[-1][:] = 0.0
        return net

    def parameters(self):
        """Flat list of parameter arrays (views), order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x, keep_cache=False):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.sizes[0]}")
        cache = []
        for w, b, act, res in zip(self.weights, self.biases, self.activations, self.residual):
            z = x @ w + b
            y = activate(act, z)
            if res:
                y = y + x
            if keep_cache:
                cache.append((x, z))
            x = y
        return (x, cache) if keep_cache else x

    __call__ = forward

    def backward(self, cache, grad_out):
        """Parameter gradients (same order as ``parameters``) and dL/dx."""
        g = np.asarray(grad_out, dtype=float)
        grads = [None] * (2 * self.n_layers)
        for k in range(self.n_layers - 1, -1, -1):
            x, z = cache[k]
            gz = g * activate_grad(self.activations[k], z)
            flat_x = x.reshape(-1, x.shape[-1])
            flat_gz = gz.reshape(-1, gz.shape[-1])
            grads[2 * k] = flat_x.T @ flat_gz
            grads[2 * k + 1] = flat_gz.sum(axis=0)
            gx = gz @ self.weights[k].T
            if self.residual[k]:
                gx = gx + g
            g = gx
        return grads, g

    def spec(self):
        return {"sizes": list(self.sizes), "activations": list(self.activations),
                "residual": list(self.residual)}

    def copy(self):
        return Mlp(self.sizes, self.activations, self.residual,
                   [w.copy() for w in self.weights], [b.copy() for b in self.biases])


def mlp_forward(net, x):
    return net.forward(x)


def mlp_backward(net, x, grad_out):
    _, cache = net.forward(x, keep_cache=True)
    return net.backward(cache, grad_out)


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params, grads, state, lr):
    """In-place Adam update of ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state differ in length")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, nets, meta=None):
    """Write named networks: magic, version, JSON header (layer sizes, meta), float64 blob."""
    header = {"nets": {name: net.spec() for name, net in nets.items()}, "meta": meta or {}}
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(raw)))
        fh.write(raw)
        for name in sorted(nets):
            for p in nets[name].parameters():
                fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(nets, meta)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    version, n = struct.unpack_from("<II", data, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    off += 8
    header = json.loads(data[off:off + n])
    off += n
    nets = {}
    for name in sorted(header["nets"]):
        spec = header["nets"][name]
        net = Mlp(spec["sizes"], spec["activations"], spec["residual"])
        for p in net.parameters():
            count = p.size
            p[...] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(p.shape)
            off += 8 * count
        nets[name] = net
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return nets, header["meta"]
