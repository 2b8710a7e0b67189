"""Shared test utilities: finite-difference oracles and quick constructors."""

from __future__ import annotations

import numpy as np

from baryforge import nnet
from baryforge.congruent import CongruentPotentials


def fd_grad(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return out


def fd_grad_inplace(fn, params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences over a parameter array mutated in place."""
    out = np.empty_like(params)
    for i in range(params.size):
        w0 = params[i]
        params[i] = w0 + h
        hi = fn()
        params[i] = w0 - h
        lo = fn()
        params[i] = w0
        out[i] = (hi - lo) / (2.0 * h)
    return out


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error of a against reference b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(b.ravel()), 1e-12)
    return float(np.linalg.norm((a - b).ravel()) / denom)


def random_net(rng, dim=2, hidden=(4, 3), activation=nnet.Activation.SOFTPLUS, scale=0.4):
    """Small random net with nonzero biases (init gives zero biases)."""
    spec = nnet.NetSpec(dim, hidden, activation)
    p = nnet.net_init(spec, int(rng.integers(0, 2**31)))
    p.weights = p.weights + scale * rng.standard_normal(p.weights.shape)
    return p


def random_potentials(rng, k=3, dim=2, hidden=(4, 3), weights=None):
    nets = [random_net(rng, dim, hidden) for _ in range(k)]
    if weights is None:
        weights = np.full(k, 1.0 / k)
    return CongruentPotentials(nets, np.asarray(weights, dtype=np.float64))


def constant_potentials(values, weights, dim=2):
    """Nets that are constant in y: all weights zero, output bias = value.

    Every parameter gradient of such a net is independent of the input, so
    estimator cancellations that hold in expectation hold exactly.
    """
    nets = []
    for v in values:
        p = nnet.net_init(nnet.NetSpec(dim, (3,)), 0)
        p.weights[:] = 0.0
        p.weights[-1] = v
        nets.append(p)
    return CongruentPotentials(nets, np.asarray(weights, dtype=np.float64))
