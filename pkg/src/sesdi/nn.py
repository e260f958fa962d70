"""Dense MLP layers with hand-written backprop, Adam, and a finite-difference checker.

Weights are stored ``out x in`` so a layer computes ``x @ W.T + b``. Inputs may be
a single vector of shape ``(in,)`` or a batch of row vectors ``(n, in)``; for a
batch, backward sums parameter gradients over rows in row order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError, ShapeError

RELU = "relu"
IDENTITY = "identity"
_ACTIVATIONS = (RELU, IDENTITY)


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.layer_dims) < 2:
            raise ParameterError("an MLP needs at least one layer (two dims)")
        if any(d <= 0 for d in self.layer_dims):
            raise ParameterError(f"layer dims must be positive: {self.layer_dims}")
        if len(self.activations) != self.n_layers:
            raise ParameterError(
                f"{self.n_layers} layers but {len(self.activations)} activation flags"
            )
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise ParameterError(f"unknown activation {a!r}")

    @classmethod
    def build(cls, dims, final=RELU):
        """ReLU on every hidden layer, ``final`` on the last."""
        dims = tuple(dims)
        n = len(dims) - 1
        return cls(dims, (RELU,) * (n - 1) + (final,))

    @property
    def n_layers(self):
        return len(self.layer_dims) - 1

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: tuple[str, ...]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ShapeError("weights, biases and activations differ in length")
        prev = None
        for W, b in zip(self.weights, self.biases):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ShapeError(f"layer shapes W{W.shape} b{b.shape} are inconsistent")
            if prev is not None and W.shape[1] != prev:
                raise ShapeError(f"layer expects {W.shape[1]} inputs, previous gives {prev}")
            prev = W.shape[0]

    @property
    def spec(self):
        dims = [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]
        return MlpSpec(tuple(dims), self.activations)

    def arrays(self):
        """Flat list ``[W0, b0, W1, b1, ...]``; the arrays are shared, not copied."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self):
        return MlpParams(
            [W.copy() for W in self.weights], [b.copy() for b in self.biases], self.activations
        )

    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, spec.activations)


def zeros_like_mlp(spec: MlpSpec) -> MlpParams:
    dims = spec.layer_dims
    return MlpParams(
        [np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])],
        [np.zeros(o) for o in dims[1:]],
        spec.activations,
    )


@dataclass
class MlpCache:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    vector_input: bool


def mlp_forward(params: MlpParams, x: np.ndarray):
    """Return ``(output, cache)``; the cache holds each layer's input and pre-activation."""
    x = np.asarray(x, dtype=np.float64)
    vector_input = x.ndim == 1
    h = x[None, :] if vector_input else x
    if h.ndim != 2 or h.shape[1] != params.weights[0].shape[1]:
        raise ShapeError(
            f"input of shape {x.shape} does not match first layer width "
            f"{params.weights[0].shape[1]}"
        )
    inputs, preacts = [], []
    for W, b, act in zip(params.weights, params.biases, params.activations):
        inputs.append(h)
        z = h @ W.T + b
        preacts.append(z)
        h = np.maximum(z, 0.0) if act == RELU else z
    out = h[0] if vector_input else h
    return out, MlpCache(inputs, preacts, vector_input)


def mlp_backward(params: MlpParams, cache: MlpCache, grad_output: np.ndarray):
    """Return ``(grads, grad_input)`` where ``grads`` is an ``MlpParams`` of gradients."""
    if len(cache.preacts) != len(params.weights):
        raise ShapeError("cache has a different layer count than params")
    g = np.asarray(grad_output, dtype=np.float64)
    if cache.vector_input:
        g = g[None, :]
    if g.shape != cache.preacts[-1].shape:
        raise ShapeError(f"grad_output {g.shape} does not match output {cache.preacts[-1].shape}")
    n_layers = len(params.weights)
    dWs, dbs = [None] * n_layers, [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        W = params.weights[i]
        z, x = cache.preacts[i], cache.inputs[i]
        if z.shape[1] != W.shape[0] or x.shape[1] != W.shape[1]:
            raise ShapeError(f"cache for layer {i} does not match weight shape {W.shape}")
        if params.activations[i] == RELU:
            g = g * (z > 0.0)
        dWs[i] = g.T @ x
        dbs[i] = g.sum(axis=0)
        g = g @ W
    grad_input = g[0] if cache.vector_input else g
    return MlpParams(dWs, dbs, params.activations), grad_input


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, arrays, lr=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(
            lr, beta1, beta2, epsilon, 0,
            [np.zeros_like(a) for a in arrays],
            [np.zeros_like(a) for a in arrays],
        )


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]):
    """Bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("params, grads and Adam moments have different lengths")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"param {p.shape} vs grad {g.shape} vs moment {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


def relative_error(analytic, numeric, floor=1e-6):
    a = np.abs(np.asarray(analytic))
    f = np.abs(np.asarray(numeric))
    denom = np.maximum(np.maximum(a, f), floor)
    return np.abs(np.asarray(analytic) - np.asarray(numeric)) / denom


def finite_difference_grads(fn, arrays, epsilon):
    """Central differences of scalar ``fn()`` with respect to every entry of ``arrays``.

    ``fn`` must read the arrays it closes over; entries are perturbed in place and
    restored exactly.
    """
    out = []
    for a in arrays:
        g = np.empty_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            fp = fn()
            flat[j] = orig - epsilon
            fm = fn()
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("non-finite value during finite differencing")
            gflat[j] = (fp - fm) / (2.0 * epsilon)
        out.append(g)
    return out


def grad_check(spec: MlpSpec, seed: int, epsilon: float = 1e-5, *, n_inputs=3,
               floor=1e-6, backward=None):
    """Max relative error between backprop and central differences on a random probe.

    The probe loss is ``sum(c * mlp(x))`` for a random batch ``x`` and random
    weights ``c``, which is linear in the output so its gradient is ``c``.
    ``backward`` replaces ``mlp_backward`` (used for negative controls).
    """
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive")
    rng = np.random.default_rng(seed)
    params = init_mlp(spec, rng)
    for b in params.biases:
        b[:] = rng.uniform(-0.1, 0.1, size=b.shape)
    x = rng.normal(size=(n_inputs, spec.in_dim))
    c = rng.normal(size=(n_inputs, spec.out_dim))
    backward = backward or mlp_backward

    def loss():
        out, _ = mlp_forward(params, x)
        return float(np.sum(c * out))

    out, cache = mlp_forward(params, x)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite forward output")
    grads, grad_x = backward(params, cache, c)
    analytic = grads.arrays() + [grad_x]
    numeric = finite_difference_grads(loss, params.arrays() + [x], epsilon)
    return max(float(relative_error(a, n, floor).max()) for a, n in zip(analytic, numeric))
