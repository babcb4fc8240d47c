"""Radial-basis-function universal approximator and the AdamW optimizer.

The network is a fixed ``n_in x 10 x 10 x n_out`` stack: affine maps with
``phi(z) = exp(-z**2)`` on the two hidden layers and identity on the output.
An optional frozen input affine map (``shift``/``scale``) is applied before
the first layer and an optional frozen per-output factor (``out_scale``)
after the last; neither is part of the trainable parameter vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import InvalidArgument

HIDDEN = (10, 10)


def rbf(z):
    return np.exp(-np.square(z))


@dataclass(frozen=True, eq=False)
class RbfNetwork:
    layer_dims: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    shift: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    seed: Optional[int] = None
    out_scale: Optional[np.ndarray] = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise InvalidArgument(f"bad layer dims {dims}")
        object.__setattr__(self, "layer_dims", dims)
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise InvalidArgument("one weight matrix and bias vector per layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if np.shape(w) != (dims[k + 1], dims[k]) or np.shape(b) != (dims[k + 1],):
                raise InvalidArgument(f"layer {k} has wrong shape")
        n_in = dims[0]
        shift = np.zeros(n_in) if self.shift is None else np.asarray(self.shift, float)
        scale = np.ones(n_in) if self.scale is None else np.asarray(self.scale, float)
        if shift.shape != (n_in,) or scale.shape != (n_in,) or np.any(scale <= 0):
            raise InvalidArgument("input shift/scale must match n_in, scale > 0")
        out_scale = np.ones(dims[-1]) if self.out_scale is None else np.asarray(self.out_scale, float)
        if out_scale.shape != (dims[-1],) or np.any(out_scale <= 0):
            raise InvalidArgument("out_scale must match n_out and be positive")
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "out_scale", out_scale)

    @property
    def n_in(self) -> int:
        return self.layer_dims[0]

    @property
    def n_out(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_params(self) -> int:
        d = self.layer_dims
        return sum(d[k] * d[k + 1] + d[k + 1] for k in range(len(d) - 1))

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(np.asarray(w, float).ravel())
            parts.append(np.asarray(b, float).ravel())
        return np.concatenate(parts)

    def unflatten(self, theta) -> "RbfNetwork":
        """Same architecture and input map, parameters taken from ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise InvalidArgument(f"expected {self.n_params} parameters, got {theta.shape}")
        ws, bs = [], []
        k = 0
        d = self.layer_dims
        for i in range(len(d) - 1):
            nw = d[i + 1] * d[i]
            ws.append(theta[k:k + nw].reshape(d[i + 1], d[i]).copy())
            k += nw
            bs.append(theta[k:k + d[i + 1]].copy())
            k += d[i + 1]
        return replace(self, weights=ws, biases=bs)

    def __eq__(self, other):
        if not isinstance(other, RbfNetwork):
            return NotImplemented
        return (self.layer_dims == other.layer_dims
                and np.array_equal(self.flatten(), other.flatten())
                and np.array_equal(self.shift, other.shift)
                and np.array_equal(self.scale, other.scale)
                and np.array_equal(self.out_scale, other.out_scale))

    # compiled-kernel layout
    def meta(self) -> np.ndarray:
        if len(self.layer_dims) != 4:
            raise InvalidArgument("compiled kernels support the 4-layer network only")
        return np.array(self.layer_dims, dtype=np.int64)

    def aux(self) -> np.ndarray:
        return np.concatenate([self.shift, self.scale, self.out_scale])


def init_network(n_in: int, n_out: int, seed: int, hidden=HIDDEN, shift=None, scale=None,
                 out_scale=None) -> RbfNetwork:
    """Gaussian weights with std ``1/sqrt(fan_in)`` per layer, zero biases."""
    if n_in < 1 or n_out < 1:
        raise InvalidArgument("n_in and n_out must be >= 1")
    dims = (n_in,) + tuple(hidden) + (n_out,)
    rng = np.random.default_rng(seed)
    ws = [rng.standard_normal((dims[k + 1], dims[k])) / np.sqrt(dims[k]) for k in range(len(dims) - 1)]
    bs = [np.zeros(dims[k + 1]) for k in range(len(dims) - 1)]
    return RbfNetwork(dims, ws, bs, shift=shift, scale=scale, seed=seed, out_scale=out_scale)


def forward(net: RbfNetwork, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of rows."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != net.n_in:
        raise InvalidArgument(f"input dimension {xb.shape[1]} != {net.n_in}")
    h = (xb - net.shift) / net.scale
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if k < last:
            h = rbf(h)
    h = h * net.out_scale
    return h[0] if single else h


# --------------------------------------------------------------------- AdamW

@dataclass(frozen=True)
class AdamWHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-4


@dataclass(frozen=True, eq=False)
class AdamWState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    hyper: AdamWHyper = field(default_factory=AdamWHyper)

    @classmethod
    def zeros(cls, n: int, hyper: AdamWHyper = AdamWHyper()) -> "AdamWState":
        return cls(np.zeros(n), np.zeros(n), 0, hyper)


def adamw_step(theta, g, state: AdamWState, lr_scale: float = 1.0):
    """One AdamW update; returns the new parameters and optimizer state.

    ``lr_scale`` multiplies the configured learning rate for this step only.
    """
    theta = np.asarray(theta, dtype=float)
    g = np.asarray(g, dtype=float)
    if theta.shape != g.shape or theta.shape != state.first_moment.shape:
        raise InvalidArgument("parameter, gradient and moment lengths differ")
    hp = state.hyper
    t = state.step_count + 1
    m = hp.beta1 * state.first_moment + (1.0 - hp.beta1) * g
    v = hp.beta2 * state.second_moment + (1.0 - hp.beta2) * g * g
    m_hat = m / (1.0 - hp.beta1 ** t)
    v_hat = v / (1.0 - hp.beta2 ** t)
    lr = hp.learning_rate * lr_scale
    stepped = theta - lr * m_hat / (np.sqrt(v_hat) + hp.epsilon)
    new_theta = stepped - lr * hp.weight_decay * theta
    return new_theta, AdamWState(m, v, t, hp)


# ------------------------------------------------------------ gradient checks

def finite_difference_gradient(loss: Callable, theta, h: float = 1e-5, coords=None) -> np.ndarray:
    """Central differences; only ``coords`` are filled when given (others NaN)."""
    theta = np.asarray(theta, dtype=float)
    idx = range(theta.size) if coords is None else coords
    g = np.full(theta.size, np.nan) if coords is not None else np.zeros(theta.size)
    for i in idx:
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (loss(tp) - loss(tm)) / (2.0 * h)
    return g


def loss_gradient(problem_loss: Callable, theta, grad: Optional[Callable] = None, h: float = 1e-5):
    """Gradient of ``problem_loss`` at ``theta``.

    ``grad`` is the analytic engine (for PEM-UDE problems, see
    :meth:`pemude.pem.PemUdeProblem.loss_and_grad`); without one the central
    difference fallback is used.
    """
    theta = np.asarray(theta, dtype=float)
    if grad is not None:
        return np.asarray(grad(theta), dtype=float)
    return finite_difference_gradient(problem_loss, theta, h)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, net: RbfNetwork, theta=None, epoch: int = 0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    theta = net.flatten() if theta is None else np.asarray(theta, float)
    doc = {
        "layer_dims": list(net.layer_dims),
        "activation": "exp(-x^2)",
        "seed": net.seed,
        "epoch": int(epoch),
        "input_shift": [float(v) for v in net.shift],
        "input_scale": [float(v) for v in net.scale],
        "output_scale": [float(v) for v in net.out_scale],
        # json writes shortest round-trip reprs, i.e. exact doubles
        "theta": [float(v) for v in theta],
    }
    path.write_text(json.dumps(doc, indent=1))
    return path


def load_checkpoint(path) -> Tuple[RbfNetwork, int]:
    doc = json.loads(Path(path).read_text())
    dims = tuple(doc["layer_dims"])
    template = init_network(dims[0], dims[-1], seed=0, hidden=dims[1:-1],
                            shift=doc.get("input_shift"), scale=doc.get("input_scale"),
                            out_scale=doc.get("output_scale"))
    net = template.unflatten(np.array(doc["theta"], dtype=float))
    return replace(net, seed=doc.get("seed")), int(doc.get("epoch", 0))
