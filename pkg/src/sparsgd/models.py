"""Small differentiable models with hand-written gradients.

A model exposes ``structure`` plus ``forward`` / ``backward``. ``forward``
returns the mean mini-batch loss and a cache; ``backward`` turns that cache
into a :class:`LayeredParams` gradient with the same structure as the
parameters.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .params import LayeredParams, Structure, flatten, unflatten


class Model(Protocol):
    structure: Structure

    def init_params(self, seed: int, dtype=np.float64) -> LayeredParams: ...

    def forward(self, params: LayeredParams, X: np.ndarray, y: np.ndarray) -> tuple[float, object]: ...

    def backward(self, params: LayeredParams, cache: object) -> LayeredParams: ...

    def metric(self, params: LayeredParams, X: np.ndarray, y: np.ndarray) -> float: ...


def forward_loss(model: Model, params: LayeredParams, X: np.ndarray, y: np.ndarray) -> float:
    return model.forward(params, X, y)[0]


def loss_and_grad(model: Model, params: LayeredParams, X: np.ndarray, y: np.ndarray) -> tuple[float, LayeredParams]:
    loss, cache = model.forward(params, X, y)
    return loss, model.backward(params, cache)


class LeastSquaresModel:
    """f(x) = 0.5/n * ||Ax - b||^2 with a single parameter layer ``w``.

    ``metric`` reports suboptimality against ``f_star`` when one is given.
    """

    def __init__(self, dim: int, f_star: float | None = None):
        self.dim = dim
        self.f_star = f_star
        self.structure: Structure = (("w", dim),)

    def init_params(self, seed: int = 0, dtype=np.float64) -> LayeredParams:
        return LayeredParams.zeros(self.structure, dtype)

    def forward(self, params, X, y):
        r = X @ params["w"] - y
        return 0.5 * float(r @ r) / X.shape[0], (X, r)

    def backward(self, params, cache):
        X, r = cache
        return LayeredParams([("w", X.T @ r / X.shape[0])], dtype=params.dtype)

    def metric(self, params, X, y):
        loss = forward_loss(self, params, X, y)
        return loss - self.f_star if self.f_star is not None else loss


class MLP:
    """Fully-connected network with softmax cross-entropy loss.

    Each weight matrix and each bias vector is its own named layer, stored
    flat in row-major (out, in) order.
    """

    activations = ("relu", "tanh")

    def __init__(self, sizes: list[int] | tuple[int, ...], activation: str = "relu"):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output size")
        if activation not in self.activations:
            raise ValueError(f"activation must be one of {self.activations}, got {activation!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            layers.append((f"fc{i}.weight", fan_in * fan_out))
            layers.append((f"fc{i}.bias", fan_out))
        self.structure: Structure = tuple(layers)

    @property
    def n_linear(self) -> int:
        return len(self.sizes) - 1

    def init_params(self, seed: int = 0, dtype=np.float64) -> LayeredParams:
        rng = np.random.default_rng(seed)
        gain = 2.0 if self.activation == "relu" else 1.0
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(gain / fan_in)
            layers.append((f"fc{i}.weight", w))
            layers.append((f"fc{i}.bias", np.zeros(fan_out)))
        return LayeredParams(layers, dtype=dtype)

    def _weights(self, params):
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            yield params[f"fc{i}.weight"].reshape(fan_out, fan_in), params[f"fc{i}.bias"]

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    def _act_grad(self, z, a):
        return (z > 0).astype(z.dtype) if self.activation == "relu" else 1.0 - a * a

    def logits(self, params, X):
        a = X
        weights = list(self._weights(params))
        for i, (W, b) in enumerate(weights):
            z = a @ W.T + b
            a = z if i == len(weights) - 1 else self._act(z)
        return a

    def forward(self, params, X, y):
        X = np.asarray(X, dtype=params.dtype)
        acts, pre = [X], []
        weights = list(self._weights(params))
        a = X
        for i, (W, b) in enumerate(weights):
            z = a @ W.T + b
            pre.append(z)
            a = z if i == len(weights) - 1 else self._act(z)
            acts.append(a)
        shifted = a - a.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        n = X.shape[0]
        loss = float(np.mean(log_norm - shifted[np.arange(n), y]))
        probs = np.exp(shifted - log_norm[:, None])
        return loss, (acts, pre, probs, y)

    def backward(self, params, cache):
        acts, pre, probs, y = cache
        n = probs.shape[0]
        delta = probs.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
        weights = list(self._weights(params))
        grads = {}
        for i in range(len(weights) - 1, -1, -1):
            W, _ = weights[i]
            grads[f"fc{i}.weight"] = delta.T @ acts[i]
            grads[f"fc{i}.bias"] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ W) * self._act_grad(pre[i - 1], acts[i])
        return LayeredParams(((name, grads[name]) for name, _ in self.structure), dtype=params.dtype)

    def metric(self, params, X, y):
        """Classification accuracy."""
        return float(np.mean(np.argmax(self.logits(params, X), axis=1) == y))


def finite_difference_check(
    model: Model, params: LayeredParams, X: np.ndarray, y: np.ndarray, h: float = 1e-5, floor: float = 1e-6
) -> float:
    """Max relative deviation between ``backward`` and central differences.

    Deviation per coordinate is ``|fd - g| / max(|fd|, |g|, floor)``; the
    floor keeps near-zero gradients from dividing by rounding noise.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    _, analytic = loss_and_grad(model, params, X, y)
    g = flatten(analytic)
    x0 = flatten(params)
    fd = np.empty_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += h
        xm = x0.copy()
        xm[i] -= h
        fp = forward_loss(model, unflatten(xp, params.structure), X, y)
        fm = forward_loss(model, unflatten(xm, params.structure), X, y)
        fd[i] = (fp - fm) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(g)), floor)
    return float(np.max(np.abs(fd - g) / denom))
