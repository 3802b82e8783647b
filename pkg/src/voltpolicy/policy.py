"""Fully connected inverter policy with a headroom-scaled tanh output.

The network maps a proxy vector ``phi`` to reactive setpoints of the
controlled inverters::

    q_n = sqrt(max(s_max_n**2 - p_g_n**2, 0)) * tanh(z_n)

so every output lies inside the inverter's apparent-power capability no
matter what the weights are. Gradients are computed in reverse mode only.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "PolicyNetwork",
    "ForwardCache",
    "StaleCacheError",
    "Adam",
    "init_weights",
    "reactive_headroom",
    "forward",
    "vjp",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_SCHEMA",
]

CHECKPOINT_SCHEMA = "voltpolicy.checkpoint/v1"


class StaleCacheError(RuntimeError):
    """Forward cache does not belong to the current network parameters."""


def reactive_headroom(s_max, p_g) -> np.ndarray:
    """``sqrt(max(s_max^2 - p_g^2, 0))``, elementwise."""
    s_max = np.asarray(s_max, dtype=float)
    p_g = np.asarray(p_g, dtype=float)
    return np.sqrt(np.maximum(s_max**2 - p_g**2, 0.0))


@dataclass
class PolicyNetwork:
    """MLP parameters. ``weights[k]`` has shape ``(dims[k+1], dims[k])``."""

    weights: list
    biases: list
    activation: str = "relu"
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[0] != b.shape[0]:
                raise ValueError(f"layer {k}: weight/bias mismatch")
            if k and W.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: input size does not match previous layer")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self) -> list:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def params(self) -> list:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self) -> "PolicyNetwork":
        return PolicyNetwork(
            [W.copy() for W in self.weights], [b.copy() for b in self.biases], self.activation
        )

    def touch(self) -> None:
        """Mark parameters as modified, invalidating outstanding caches."""
        self.version += 1

    def n_params(self) -> int:
        return sum(p.size for p in self.params)


@dataclass
class ForwardCache:
    inputs: list
    pre_activations: list
    tanh_z: np.ndarray
    scale: np.ndarray
    version: int
    net_id: int


def init_weights(layer_dims, seed=None, *, scale: str = "unit", activation: str = "relu"):
    """Gaussian weights and zero biases.

    ``scale="unit"`` draws weights from N(0, 1); ``scale="he"`` uses
    N(0, 2 / fan_in) instead.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid layer dims {layer_dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = rng.standard_normal((fan_out, fan_in))
        if scale == "he":
            W *= np.sqrt(2.0 / fan_in)
        elif scale != "unit":
            raise ValueError(f"unknown init scale {scale!r}")
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return PolicyNetwork(weights, biases, activation)


def forward(net: PolicyNetwork, phi, p_g_controlled, s_max, *, return_cache: bool = False):
    """Setpoints for one input or a batch of inputs (rows).

    Returns ``q`` or ``(q, cache)`` when ``return_cache`` is set.
    """
    x = np.asarray(phi, dtype=float)
    if x.shape[-1] != net.weights[0].shape[1]:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {net.weights[0].shape[1]}")
    scale = reactive_headroom(s_max, p_g_controlled)
    if scale.shape[-1] != net.weights[-1].shape[0]:
        raise ValueError("p_g / s_max length does not match the output layer")

    inputs, pre = [], []
    h = x
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ W.T + b
        pre.append(z)
        if k < last:
            h = np.maximum(z, 0.0) if net.activation == "relu" else z
    t = np.tanh(pre[-1])
    q = scale * t
    if not return_cache:
        return q
    return q, ForwardCache(inputs, pre, t, scale, net.version, id(net))


def vjp(net: PolicyNetwork, cache: ForwardCache, adjoint) -> list:
    """Gradient of ``adjoint @ q`` w.r.t. all parameters, ``[dW0, db0, ...]``.

    For a batch cache, ``adjoint`` has one row per input and the gradients
    are summed over the batch.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise StaleCacheError("forward cache is stale; rerun forward()")
    a = np.asarray(adjoint, dtype=float)
    delta = a * cache.scale * (1.0 - cache.tanh_z**2)
    grads = [None] * (2 * len(net.weights))
    for k in range(len(net.weights) - 1, -1, -1):
        h = cache.inputs[k]
        if delta.ndim == 1:
            grads[2 * k] = np.outer(delta, h)
            grads[2 * k + 1] = delta.copy()
        else:
            grads[2 * k] = delta.T @ h
            grads[2 * k + 1] = delta.sum(axis=0)
        if k:
            delta = delta @ net.weights[k]
            if net.activation == "relu":
                delta = delta * (cache.pre_activations[k - 1] > 0)
    return grads


class Adam:
    """Bias-corrected Adam acting in place on a list of arrays."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None
        self.rejected = 0

    def step(self, params, grads) -> bool:
        """Update ``params`` in place. Non-finite gradients reject the step."""
        if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
            raise ValueError("parameter and gradient shapes differ")
        if not all(np.all(np.isfinite(g)) for g in grads):
            self.rejected += 1
            return False
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True

    def state_dict(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t}


def save_checkpoint(path, net: PolicyNetwork, **metadata) -> None:
    """JSON checkpoint: dims, row-major weights and biases, free-form metadata.

    Floats are written with ``repr`` precision, so a load round-trips
    bit-exactly.
    """
    doc = {
        "schema": CHECKPOINT_SCHEMA,
        "layer_dims": net.layer_dims,
        "activation": net.activation,
        "weights": [W.ravel().tolist() for W in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "metadata": metadata,
    }
    Path(path).write_text(json.dumps(doc, indent=None, sort_keys=True, default=_jsonable))


def load_checkpoint(path):
    """Return ``(net, metadata)`` from a checkpoint file."""
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"{path}: unsupported checkpoint schema {doc.get('schema')!r}")
    dims = doc["layer_dims"]
    weights = [
        np.array(w, dtype=float).reshape(dims[k + 1], dims[k]) for k, w in enumerate(doc["weights"])
    ]
    biases = [np.array(b, dtype=float) for b in doc["biases"]]
    return PolicyNetwork(weights, biases, doc.get("activation", "relu")), doc["metadata"]


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
