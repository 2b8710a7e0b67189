"""Minimal scalar-output feedforward networks with exact analytic derivatives.

This is the only "deep learning" machinery in the repo: fully-connected
nets y -> R with smooth activations, differentiated by hand both with
respect to the input (Langevin drift) and with respect to every parameter
(dual-ascent gradient).  No autodiff framework is involved, so every
gradient is checkable against central finite differences.

Parameters live in a single flat float64 array in layer-major order:
for each layer, the weight matrix (out x in, row-major) followed by the
bias vector.  The layout is fixed so checkpoints are portable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Activation(str, Enum):
    """Everywhere-differentiable, non-affine activations.

    All members are smooth with a nonvanishing derivative somewhere, which
    is what the dual potentials need (Langevin drift requires gradients of
    the net at every point; this also rules out ReLU).
    """

    SOFTPLUS = "softplus"
    SIGMOID = "sigmoid"
    TANH = "tanh"


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Branchless stable logistic: exp(-|z|) never overflows.
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _act(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.SOFTPLUS:
        # max(z,0) + log1p(exp(-|z|)) avoids overflow for large |z|
        return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    if kind is Activation.SIGMOID:
        return _sigmoid(z)
    return np.tanh(z)


def _act_deriv(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.SOFTPLUS:
        return _sigmoid(z)
    if kind is Activation.SIGMOID:
        s = _sigmoid(z)
        return s * (1.0 - s)
    t = np.tanh(z)
    return 1.0 - t * t


def _act_and_deriv(kind: Activation, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Activation value and derivative sharing one exp evaluation."""
    if kind is Activation.SOFTPLUS:
        e = np.exp(-np.abs(z))
        val = np.maximum(z, 0.0) + np.log1p(e)
        return val, np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    if kind is Activation.SIGMOID:
        s = _sigmoid(z)
        return s, s * (1.0 - s)
    t = np.tanh(z)
    return t, 1.0 - t * t


@dataclass(frozen=True)
class NetSpec:
    """Architecture of a scalar-output MLP."""

    input_dim: int
    hidden_widths: tuple[int, ...]
    activation: Activation = Activation.SOFTPLUS

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if len(self.hidden_widths) < 1:
            raise ValueError("at least one hidden layer is required")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        if not isinstance(self.activation, Activation):
            object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def layer_dims(self) -> tuple[int, ...]:
        """(input_dim, h_1, ..., h_L, 1)."""
        return (self.input_dim, *self.hidden_widths, 1)

    @property
    def n_params(self) -> int:
        dims = self.layer_dims
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


@dataclass
class NetParams:
    """A NetSpec plus its flat parameter vector (layer-major: W row-major, then b)."""

    spec: NetSpec
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.spec.n_params,):
            raise ValueError(
                f"expected {self.spec.n_params} parameters, got {self.weights.shape}"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("parameters must be finite")

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) per layer into the flat array; W has shape (out, in)."""
        dims = self.spec.layer_dims
        out = []
        ofs = 0
        for i in range(len(dims) - 1):
            fan_in, fan_out = dims[i], dims[i + 1]
            w = self.weights[ofs : ofs + fan_in * fan_out].reshape(fan_out, fan_in)
            ofs += fan_in * fan_out
            b = self.weights[ofs : ofs + fan_out]
            ofs += fan_out
            out.append((w, b))
        return out

    def copy(self) -> "NetParams":
        return NetParams(self.spec, self.weights.copy())


def net_init(spec: NetSpec, seed: int) -> NetParams:
    """Deterministic init: weights ~ N(0, 1/fan_in), biases exactly zero."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
    dims = spec.layer_dims
    chunks = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=fan_in * fan_out)
        chunks.append(w)
        chunks.append(np.zeros(fan_out))
    return NetParams(spec, np.concatenate(chunks))


def _forward_pass(p: NetParams, y: np.ndarray):
    """Returns (output (B,), pre-activations per layer, activations per layer incl. input)."""
    act = p.spec.activation
    a = y
    zs, acts = [], [a]
    layers = p.layers()
    for w, b in layers[:-1]:
        z = a @ w.T + b
        zs.append(z)
        a = _act(act, z)
        acts.append(a)
    w, b = layers[-1]
    out = a @ w.T + b
    return out[:, 0], zs, acts


def _check_input(p: NetParams, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (p.spec.input_dim,):
        raise ValueError(f"expected input of shape ({p.spec.input_dim},), got {y.shape}")
    return y


def _check_batch(p: NetParams, ys: np.ndarray) -> np.ndarray:
    ys = np.asarray(ys, dtype=np.float64)
    if ys.ndim != 2 or ys.shape[1] != p.spec.input_dim:
        raise ValueError(f"expected batch of shape (B, {p.spec.input_dim}), got {ys.shape}")
    return ys


def net_forward(p: NetParams, y: np.ndarray) -> float:
    """Scalar net output at a single point."""
    y = _check_input(p, y)
    out, _, _ = _forward_pass(p, y[None, :])
    return float(out[0])


def net_forward_batch(p: NetParams, ys: np.ndarray) -> np.ndarray:
    """Net outputs for a (B, input_dim) batch, shape (B,)."""
    ys = _check_batch(p, ys)
    out, _, _ = _forward_pass(p, ys)
    return out


def net_grad_input(p: NetParams, y: np.ndarray) -> np.ndarray:
    """Exact gradient of net_forward with respect to the input point."""
    y = _check_input(p, y)
    return net_grad_input_batch(p, y[None, :])[0]


def net_grad_input_batch(p: NetParams, ys: np.ndarray) -> np.ndarray:
    """Row-wise input gradients for a batch, shape (B, input_dim)."""
    ys = _check_batch(p, ys)
    act = p.spec.activation
    _, zs, _ = _forward_pass(p, ys)
    layers = p.layers()
    delta = np.broadcast_to(layers[-1][0], (ys.shape[0], layers[-1][0].shape[1])).copy()
    for (w, _), z in zip(reversed(layers[:-1]), reversed(zs)):
        delta = (delta * _act_deriv(act, z)) @ w
    return delta


def net_grad_params(p: NetParams, y: np.ndarray) -> np.ndarray:
    """Exact gradient of net_forward with respect to every parameter (flat order)."""
    y = _check_input(p, y)
    return net_grad_params_batch(p, y[None, :])[0]


def net_grad_params_batch(p: NetParams, ys: np.ndarray) -> np.ndarray:
    """Row-wise parameter gradients, shape (B, n_params), in NetParams order."""
    ys = _check_batch(p, ys)
    act = p.spec.activation
    _, zs, acts = _forward_pass(p, ys)
    layers = p.layers()
    B = ys.shape[0]
    L = len(layers)

    # dOut/dz per layer; the output layer is affine so its seed is 1.
    deltas: list[np.ndarray] = [np.empty(0)] * L
    deltas[L - 1] = np.ones((B, 1))
    for i in range(L - 2, -1, -1):
        deltas[i] = (deltas[i + 1] @ layers[i + 1][0]) * _act_deriv(act, zs[i])

    chunks = []
    for i in range(L):
        dw = np.einsum("bo,bi->boi", deltas[i], acts[i]).reshape(B, -1)
        chunks.append(dw)
        chunks.append(deltas[i])
    return np.concatenate(chunks, axis=1)


def stacked_value_and_grad_input(nets: list[NetParams], ys: np.ndarray):
    """Outputs and input-gradients of several nets on one shared batch.

    Returns (values (K, B), grads (K, B, D)).  When all nets share a spec the
    layers are evaluated as stacked tensors, which is the hot path of
    Langevin sampling during training.
    """
    if not nets:
        raise ValueError("need at least one net")
    spec = nets[0].spec
    if any(n.spec != spec for n in nets):
        vals = np.stack([net_forward_batch(n, ys) for n in nets])
        grads = np.stack([net_grad_input_batch(n, ys) for n in nets])
        return vals, grads

    ys = _check_batch(nets[0], ys)
    act = spec.activation
    all_layers = [n.layers() for n in nets]
    L = len(spec.layer_dims) - 1
    # (K, in, out) so the hot loop is pure batched matmul (BLAS per slice).
    wts = [np.ascontiguousarray(np.stack([al[i][0].T for al in all_layers])) for i in range(L)]
    ws = [np.stack([al[i][0] for al in all_layers]) for i in range(L)]
    bs = [np.stack([al[i][1] for al in all_layers]) for i in range(L)]

    a = np.matmul(ys[None, :, :], wts[0]) + bs[0][:, None, :]
    derivs = []
    a, d = _act_and_deriv(act, a)
    derivs.append(d)
    for w, b in zip(wts[1:-1], bs[1:-1]):
        z = np.matmul(a, w) + b[:, None, :]
        a, d = _act_and_deriv(act, z)
        derivs.append(d)
    vals = (np.matmul(a, wts[-1]) + bs[-1][:, None, :])[:, :, 0]

    delta = np.broadcast_to(ws[-1][:, 0, :][:, None, :], derivs[-1].shape)
    for w, d in zip(reversed(ws[:-1]), reversed(derivs)):
        delta = np.matmul(delta * d, w)
    return vals, delta


@dataclass(frozen=True)
class VectorNetSpec:
    """Vector-output MLP architecture (used for decoders and feature maps)."""

    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int
    activation: Activation = Activation.SOFTPLUS

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("dimensions must be positive")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        if not isinstance(self.activation, Activation):
            object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.output_dim)

    @property
    def n_params(self) -> int:
        dims = self.layer_dims
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


@dataclass
class VectorNetParams:
    """Flat parameters of a VectorNetSpec, same layer-major layout as NetParams."""

    spec: VectorNetSpec
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.spec.n_params,):
            raise ValueError(
                f"expected {self.spec.n_params} parameters, got {self.weights.shape}"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("parameters must be finite")

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        dims = self.spec.layer_dims
        out = []
        ofs = 0
        for i in range(len(dims) - 1):
            fan_in, fan_out = dims[i], dims[i + 1]
            w = self.weights[ofs : ofs + fan_in * fan_out].reshape(fan_out, fan_in)
            ofs += fan_in * fan_out
            b = self.weights[ofs : ofs + fan_out]
            ofs += fan_out
            out.append((w, b))
        return out


def vec_net_init(spec: VectorNetSpec, seed: int) -> VectorNetParams:
    """Same scheme as net_init: N(0, 1/fan_in) weights, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
    dims = spec.layer_dims
    chunks = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        chunks.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return VectorNetParams(spec, np.concatenate(chunks))


def vec_forward_batch(p: VectorNetParams, ys: np.ndarray) -> np.ndarray:
    """Decoder outputs for a (B, input_dim) batch, shape (B, output_dim)."""
    ys = np.asarray(ys, dtype=np.float64)
    if ys.ndim != 2 or ys.shape[1] != p.spec.input_dim:
        raise ValueError(f"expected batch of shape (B, {p.spec.input_dim}), got {ys.shape}")
    act = p.spec.activation
    a = ys
    layers = p.layers()
    for w, b in layers[:-1]:
        a = _act(act, a @ w.T + b)
    w, b = layers[-1]
    return a @ w.T + b


def vec_jacobian_batch(p: VectorNetParams, ys: np.ndarray) -> np.ndarray:
    """Row-wise Jacobians d out / d in, shape (B, output_dim, input_dim)."""
    ys = np.asarray(ys, dtype=np.float64)
    if ys.ndim != 2 or ys.shape[1] != p.spec.input_dim:
        raise ValueError(f"expected batch of shape (B, {p.spec.input_dim}), got {ys.shape}")
    act = p.spec.activation
    a = ys
    layers = p.layers()
    zs = []
    for w, b in layers[:-1]:
        z = a @ w.T + b
        zs.append(z)
        a = _act(act, z)
    # Propagate the full Jacobian forward: J <- diag(act'(z)) W J per layer.
    jac = np.broadcast_to(np.eye(p.spec.input_dim), (ys.shape[0],) + (p.spec.input_dim,) * 2)
    for (w, _), z in zip(layers[:-1], zs):
        jac = _act_deriv(act, z)[:, :, None] * np.einsum("oi,bij->boj", w, jac)
    return np.einsum("oi,bij->boj", layers[-1][0], jac)
