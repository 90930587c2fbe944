"""Small dense-network engine in float64 numpy.

Affine + ReLU stacks with an explicit reverse pass, bias-corrected Adam,
and the Gaussian / categorical policy heads the trainer needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ProtocolError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Mlp:
    weights: list[np.ndarray]  # layer i maps (in_i,) -> (out_i,), stored (in_i, out_i)
    biases: list[np.ndarray]
    log_std: np.ndarray | None = None  # state-independent Gaussian scale, actors only
    version: int = 0

    def __post_init__(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} input {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def tensors(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        if self.log_std is not None:
            out.append(self.log_std)
        return out

    def named_tensors(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}layer{i}.weight"] = w
            out[f"{prefix}layer{i}.bias"] = b
        if self.log_std is not None:
            out[f"{prefix}log_std"] = self.log_std
        return out

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   None if self.log_std is None else self.log_std.copy(), self.version)


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, out_gain: float = 1.0,
             log_std: float | None = None) -> Mlp:
    """He-scaled normal init for hidden layers, ``out_gain``-scaled final layer."""
    ws, bs = [], []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = out_gain if i == len(sizes) - 2 else math.sqrt(2.0)
        ws.append(rng.standard_normal((a, b)) * gain / math.sqrt(a))
        bs.append(np.zeros(b))
    ls = None if log_std is None else np.full(sizes[-1], float(log_std))
    return Mlp(ws, bs, ls)


@dataclass
class MlpCache:
    inputs: list[np.ndarray]  # input to each affine layer
    pre: list[np.ndarray]  # pre-activation of each hidden layer
    version: int
    owner: int


def mlp_forward(params: Mlp, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    """ReLU hidden layers, linear output. ``x`` is (D,) or (N, D)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.in_dim:
        raise ShapeError(f"input width {x.shape[-1]} != network input {params.in_dim}")
    inputs, pre = [], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        if i < last:
            pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h, MlpCache(inputs, pre, params.version, id(params))


def mlp_backward(params: Mlp, cache: MlpCache, upstream: np.ndarray) -> list[np.ndarray]:
    """Gradients ``[dW0, db0, dW1, db1, ...]`` of ``sum(upstream * output)``."""
    if cache.owner != id(params) or cache.version != params.version:
        raise ProtocolError("stale forward cache: parameters changed since the forward pass")
    g = np.asarray(upstream, dtype=np.float64)
    grads: list[np.ndarray] = [None] * (2 * len(params.weights))  # type: ignore[list-item]
    for i in range(len(params.weights) - 1, -1, -1):
        h = cache.inputs[i]
        if g.ndim == 1:
            grads[2 * i] = np.outer(h, g)
            grads[2 * i + 1] = g.copy()
        else:
            grads[2 * i] = h.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
        if i:
            g = (g @ params.weights[i].T) * (cache.pre[i - 1] > 0)
    return grads


def mlp_input_gradient(params: Mlp, cache: MlpCache, upstream: np.ndarray) -> np.ndarray:
    g = np.asarray(upstream, dtype=np.float64)
    for i in range(len(params.weights) - 1, -1, -1):
        g = g @ params.weights[i].T
        if i:
            g = g * (cache.pre[i - 1] > 0)
    return g


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    skipped: int = 0  # updates dropped for non-finite gradients

    @classmethod
    def zeros_like(cls, tensors: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in tensors], [np.zeros_like(p) for p in tensors])

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v], self.t, self.skipped)


def adam_update(params, grads: Sequence[np.ndarray], state: AdamState, lr: float = 3e-4,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam step, applied in place.

    ``params`` is an :class:`Mlp` (its version is bumped) or a list of arrays.
    Non-finite gradients skip the step and increment ``state.skipped``.
    """
    tensors = params.tensors() if isinstance(params, Mlp) else list(params)
    if len(tensors) != len(grads) or len(tensors) != len(state.m):
        raise ShapeError("parameter, gradient and optimizer state lists differ in length")
    for p, g, m in zip(tensors, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
    if not all(np.all(np.isfinite(g)) for g in grads):
        state.skipped += 1
        return params
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(tensors, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    if isinstance(params, Mlp):
        params.version += 1
    return params


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        grads = [g * (max_norm / norm) for g in grads]
    return grads, norm


# ---------------------------------------------------------------- heads

def gaussian_log_prob(x: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density, summed over the last axis."""
    z = (x - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))


def gaussian_head_sample(mean: np.ndarray, log_std: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.broadcast_to(np.asarray(log_std, dtype=np.float64), mean.shape)
    x = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return x, float(gaussian_log_prob(x, mean, log_std))


def tanh_log_det(x: np.ndarray) -> np.ndarray:
    """log |d tanh(x)/dx| summed over the last axis, computed stably."""
    return np.sum(2.0 * (math.log(2.0) - x - np.logaddexp(0.0, -2.0 * x)), axis=-1)


def squashed_log_prob(x: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Log density of ``tanh(x)`` when ``x`` is drawn from the Gaussian."""
    return gaussian_log_prob(x, mean, log_std) - tanh_log_det(x)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    # infinite logits act as hard choices
    logits = np.nan_to_num(np.asarray(logits, dtype=np.float64), posinf=1e300, neginf=-1e300)
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - np.max(logits, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


def entropy(logits: np.ndarray) -> np.ndarray:
    lp = log_softmax(np.asarray(logits, dtype=np.float64))
    p = np.exp(lp)
    return -np.sum(np.where(p > 0, p * lp, 0.0), axis=-1)


def categorical_head_sample(logits: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] < 2:
        raise ShapeError("a categorical head needs at least two logits")
    lp = log_softmax(logits)
    cdf = np.cumsum(np.exp(lp))
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    idx = min(idx, len(cdf) - 1)
    return idx, float(lp[idx])


def categorical_mode(logits: np.ndarray) -> tuple[int, float]:
    lp = log_softmax(np.asarray(logits, dtype=np.float64))
    idx = int(np.argmax(lp))
    return idx, float(lp[idx])
