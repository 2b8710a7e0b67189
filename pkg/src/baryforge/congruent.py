"""Congruent dual potentials f_k = g_k - sum_j lambda_j g_j.

Parameterizing the K potentials through K unconstrained nets g_k makes the
weighted-sum constraint  sum_k lambda_k f_k = 0  an algebraic identity, so
no penalty terms or projections are ever needed.  Gradients are assembled
per-network through the same chain rule:

    d f_k / d theta_j = (delta_kj - lambda_j) * d g_j / d theta_j

which keeps  sum_k lambda_k * d f_k / d theta_j = 0  exact as well.
Indices k are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nnet
from .nnet import NetParams

WEIGHT_SUM_TOL = 1e-12


@dataclass
class CongruentPotentials:
    """K nets g_k plus positive weights lambda_k summing to one."""

    nets: list[NetParams]
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.nets) < 1:
            raise ValueError("need at least one net")
        if self.weights.shape != (len(self.nets),):
            raise ValueError("one weight per net is required")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        if abs(self.weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1 (got {self.weights.sum()!r})")
        d = self.nets[0].spec.input_dim
        if any(n.spec.input_dim != d for n in self.nets):
            raise ValueError("all nets must share their input dimension")

    @property
    def k_count(self) -> int:
        return len(self.nets)

    @property
    def input_dim(self) -> int:
        return self.nets[0].spec.input_dim

    def _check_k(self, k: int) -> int:
        k = int(k)
        if not 0 <= k < self.k_count:
            raise IndexError(f"potential index {k} out of range [0, {self.k_count})")
        return k

    def eval_all(self, ys: np.ndarray) -> np.ndarray:
        """f_k(y) for every k on a (B, D) batch; shape (K, B)."""
        g_vals = np.stack([nnet.net_forward_batch(n, ys) for n in self.nets])
        return g_vals - self.weights @ g_vals

    def eval_batch(self, k: int, ys: np.ndarray) -> np.ndarray:
        return self.eval_all(ys)[self._check_k(k)]

    def grad_input_all(self, ys: np.ndarray) -> np.ndarray:
        """Input gradients of every f_k on a shared batch; shape (K, B, D)."""
        _, g_grads = nnet.stacked_value_and_grad_input(self.nets, ys)
        return g_grads - np.einsum("k,kbd->bd", self.weights, g_grads)

    def grad_input_batch(self, k: int, ys: np.ndarray) -> np.ndarray:
        return self.grad_input_all(ys)[self._check_k(k)]

    def net_param_grads(self, j: int, ys: np.ndarray) -> np.ndarray:
        """Row-wise d g_j(y) / d theta_j on a batch; shape (B, n_params_j)."""
        return nnet.net_grad_params_batch(self.nets[self._check_k(j)], ys)

    def copy(self) -> "CongruentPotentials":
        return CongruentPotentials([n.copy() for n in self.nets], self.weights.copy())


def potential_eval(ps: CongruentPotentials, k: int, y: np.ndarray) -> float:
    """f_k(y) = g_k(y) - sum_j lambda_j g_j(y) at a single point."""
    y = np.asarray(y, dtype=np.float64)
    return float(ps.eval_batch(k, y[None, :])[0])


def potential_grad_input(ps: CongruentPotentials, k: int, y: np.ndarray) -> np.ndarray:
    """Analytic gradient of f_k with respect to the input point."""
    y = np.asarray(y, dtype=np.float64)
    return ps.grad_input_batch(k, y[None, :])[0]


def potential_grad_params(ps: CongruentPotentials, k: int, y: np.ndarray) -> list[np.ndarray]:
    """d f_k(y) / d theta_j for every j, as a list of flat vectors."""
    k = ps._check_k(k)
    y = np.asarray(y, dtype=np.float64)[None, :]
    out = []
    for j in range(ps.k_count):
        coeff = (1.0 if j == k else 0.0) - ps.weights[j]
        out.append(coeff * ps.net_param_grads(j, y)[0])
    return out


def congruence_residual(ps: CongruentPotentials, y: np.ndarray) -> float:
    """|sum_k lambda_k f_k(y)|: zero up to floating-point rounding."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    return float(np.max(np.abs(ps.weights @ ps.eval_all(y))))


def init_potentials(
    k_count: int,
    input_dim: int,
    hidden: tuple[int, ...],
    weights,
    seed: int,
    activation: nnet.Activation = nnet.Activation.SOFTPLUS,
) -> CongruentPotentials:
    """Fresh congruent set with independently initialized nets."""
    spec = nnet.NetSpec(input_dim, tuple(hidden), activation)
    nets = [nnet.net_init(spec, int(np.random.SeedSequence(entropy=int(seed), spawn_key=(k,)).generate_state(1)[0])) for k in range(k_count)]
    return CongruentPotentials(nets, np.asarray(weights, dtype=np.float64))
