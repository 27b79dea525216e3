"""Small dense-network engine: forward, manual backprop, Adam.

Everything works on batches: inputs are ``(batch, in_dim)`` arrays, and a
1-D input is treated as a batch of one and returned 1-D again.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, UsageError

ACTIVATIONS = ("relu", "sigmoid", "linear")

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"layer dims must be >= 1, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class MlpSpec:
    layers: tuple[LayerSpec, ...]
    dropout_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ConfigError("an MLP needs at least one layer")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        for i, (a, b) in enumerate(zip(self.layers[:-1], self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ConfigError(
                    f"layer {i} outputs {a.out_dim} values but layer {i + 1} expects {b.in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @classmethod
    def build(cls, in_dim: int, hidden: Sequence[int], out_dim: int,
              out_activation: str = "linear", dropout_rate: float = 0.0) -> "MlpSpec":
        """Stack relu hidden layers of the given widths and one output layer."""
        dims = [in_dim, *hidden, out_dim]
        layers = [LayerSpec(dims[i], dims[i + 1], "relu") for i in range(len(dims) - 2)]
        layers.append(LayerSpec(dims[-2], dims[-1], out_activation))
        return cls(tuple(layers), dropout_rate)


@dataclass
class MlpParams:
    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    # bumped on every optimizer update so stale caches can be detected
    version: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.spec.layers) or len(self.biases) != len(self.spec.layers):
            raise ShapeError("parameter count does not match the layer count")
        for i, (layer, w, b) in enumerate(zip(self.spec.layers, self.weights, self.biases)):
            if w.shape != (layer.out_dim, layer.in_dim) or b.shape != (layer.out_dim,):
                raise ShapeError(
                    f"layer {i}: expected W {(layer.out_dim, layer.in_dim)} and b ({layer.out_dim},), "
                    f"got {w.shape} and {b.shape}"
                )

    def arrays(self) -> list[np.ndarray]:
        """Flat view ``[W0, b0, W1, b1, ...]``; mutating these mutates the network."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.version)

    def zeros_like(self) -> list[np.ndarray]:
        return [np.zeros_like(a) for a in self.arrays()]

    def equals(self, other: "MlpParams") -> bool:
        return self.spec == other.spec and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


def init_mlp(spec: MlpSpec, rng: Rng) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for layer in spec.layers:
        s = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
        weights.append(rng.uniform(-s, s, size=(layer.out_dim, layer.in_dim)))
        biases.append(np.zeros(layer.out_dim))
    return MlpParams(spec, weights, biases)


@dataclass
class Cache:
    params_id: int
    version: int
    squeeze: bool
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        # split branches keep exp() from overflowing
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def forward(params: MlpParams, x, mode: str = "eval", rng: Rng | None = None):
    """Evaluate the network; returns ``(output, cache)``.

    Train mode applies inverted dropout to every hidden layer output, so the
    eval-mode output is the expectation of the train-mode one.
    """
    if mode not in ("train", "eval"):
        raise UsageError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != params.spec.in_dim:
        raise ShapeError(f"network expects inputs of width {params.spec.in_dim}, got shape {x.shape}")
    rate = params.spec.dropout_rate
    use_dropout = mode == "train" and rate > 0.0
    if use_dropout and rng is None:
        raise UsageError("train-mode forward with dropout needs an rng")

    cache = Cache(id(params), params.version, squeeze)
    n_layers = len(params.spec.layers)
    for i, layer in enumerate(params.spec.layers):
        cache.inputs.append(h)
        z = h @ params.weights[i].T + params.biases[i]
        a = _activate(z, layer.activation)
        cache.pre.append(z)
        cache.outputs.append(a)
        mask = None
        if use_dropout and i < n_layers - 1:
            mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
            a = a * mask
        cache.masks.append(mask)
        h = a
    return (h[0] if squeeze else h), cache


def backward(params: MlpParams, cache: Cache, grad_output):
    """Reverse-mode gradients of ``sum(grad_output * output)``.

    Returns ``(grads, grad_input)`` where ``grads`` is aligned with
    ``params.arrays()``. Gradients are summed over the batch.
    """
    if cache.params_id != id(params) or cache.version != params.version:
        raise UsageError("cache was produced by a different or since-updated network")
    g = np.asarray(grad_output, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    expected = cache.outputs[-1].shape
    if g.shape != expected:
        raise ShapeError(f"grad_output shape {g.shape} does not match output shape {expected}")

    grads: list[np.ndarray] = [None] * (2 * len(params.spec.layers))  # type: ignore[list-item]
    for i in reversed(range(len(params.spec.layers))):
        layer = params.spec.layers[i]
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        gz = g * _activation_grad(cache.pre[i], cache.outputs[i], layer.activation)
        grads[2 * i] = gz.T @ cache.inputs[i]
        grads[2 * i + 1] = gz.sum(axis=0)
        g = gz @ params.weights[i]
    return grads, (g[0] if cache.squeeze else g)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    @classmethod
    def for_params(cls, params: MlpParams, learning_rate: float = 1e-3, **kw) -> "AdamState":
        if learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        return cls(params.zeros_like(), params.zeros_like(), learning_rate, **kw)


def adam_step(state: AdamState, params: MlpParams, grads: Sequence[np.ndarray]):
    """One bias-corrected Adam update, in place. Returns ``(state, params)``."""
    arrays = params.arrays()
    if len(grads) != len(arrays):
        raise ShapeError(f"expected {len(arrays)} gradient arrays, got {len(grads)}")
    for a, g in zip(arrays, grads):
        if a.shape != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} does not match parameter {a.shape}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        a -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    params.version += 1
    return state, params


def sample_uniform(rng: Rng, dim, low: float = -1.0, high: float = 1.0) -> np.ndarray:
    """Independent uniform draws on ``[low, high)``; ``dim`` may be a shape tuple."""
    if not low < high:
        raise ConfigError(f"need low < high, got [{low}, {high})")
    if isinstance(dim, int) and dim < 1:
        raise ConfigError(f"dim must be positive, got {dim}")
    return rng.uniform(low, high, size=dim)


def grad_check(loss_fn: Callable[[], tuple[float, Sequence[np.ndarray]]],
               params: Sequence[np.ndarray], step: float = 1e-5) -> float:
    """Compare analytic gradients against central differences.

    ``params`` are the arrays the loss depends on; they are perturbed in
    place and restored. ``loss_fn()`` must return ``(loss, grads)`` with
    ``grads`` aligned to ``params``. Returns the max relative error.
    """
    value, analytic = loss_fn()
    if not np.isfinite(value):
        raise NumericError(f"loss is not finite: {value}")
    if len(analytic) != len(params):
        raise ShapeError("loss_fn returned a gradient list of the wrong length")
    worst = 0.0
    for arr, grad in zip(params, analytic):
        grad = np.asarray(grad, dtype=float)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up, _ = loss_fn()
            arr[idx] = orig - step
            down, _ = loss_fn()
            arr[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("loss became non-finite under perturbation")
            fd = (up - down) / (2.0 * step)
            a = grad[idx]
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
    return worst
