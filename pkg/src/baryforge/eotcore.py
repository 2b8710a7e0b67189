"""Dual objective of the entropic barycenter problem and its gradients.

The conditional plan for source point x has unnormalized log density
(f(y) - c(x, y)) / eps.  Its normalizer

    Z(f, x) = integral exp((f(y) - c(x, y)) / eps) dy

gives the transform  fC(x) = -eps log Z(f, x),  and the dual objective of
the barycenter problem over congruent potentials is

    L = sum_k lambda_k E_{x ~ P_k} fC_k(x).

On a finite grid the integral becomes a quadrature sum and everything is
computable exactly; that is the reference path the Monte-Carlo estimators
are tested against.  All partition arithmetic is done in the log domain
with a max shift: eps as small as 1e-4 makes raw exponentials overflow.

Parameter gradients never need Z itself:

    dL/dtheta = - sum_k lambda_k E_{x ~ P_k} E_{y ~ mu_x^{f_k}} [df_k(y)/dtheta],

estimated either from Langevin samples (loss_grad_mcmc), from exact grid
expectations (loss_grad_grid), or by self-normalized importance sampling
against a fixed proposal (loss_grad_is).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .congruent import CongruentPotentials
from .costs import CostFn, cost_cross

CONGRUENCE_TOL = 1e-9


@dataclass
class GridSpec:
    """Uniform quadrature grid: M points in R^D with one cell weight."""

    points: np.ndarray
    cell_weight: float

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.points.shape[0] < 1:
            raise ValueError("grid needs at least one point")
        if self.cell_weight <= 0:
            raise ValueError("cell weight must be positive")
        if np.unique(self.points, axis=0).shape[0] != self.points.shape[0]:
            raise ValueError("grid points must be distinct")

    @property
    def m_count(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def regular_grid_1d(lo: float, hi: float, m: int) -> GridSpec:
    """Midpoint rule on [lo, hi] with m cells."""
    edges = np.linspace(lo, hi, m + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    return GridSpec(mids[:, None], (hi - lo) / m)


def regular_grid_2d(lo: float, hi: float, m_per_axis: int) -> GridSpec:
    """Midpoint rule on the square [lo, hi]^2."""
    edges = np.linspace(lo, hi, m_per_axis + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    xx, yy = np.meshgrid(mids, mids, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    return GridSpec(pts, ((hi - lo) / m_per_axis) ** 2)


@dataclass
class BarycenterProblem:
    """K sources with costs and positive weights summing to one."""

    sources: list
    costs: list[CostFn]
    weights: np.ndarray = field(repr=False)
    epsilon: float = 1.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        k = len(self.sources)
        if k < 1:
            raise ValueError("need at least one source")
        if len(self.costs) != k or self.weights.shape != (k,):
            raise ValueError("sources, costs and weights must have equal length")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 (got {self.weights.sum()!r})")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        dims = {c.y_dim for c in self.costs}
        if len(dims) != 1:
            raise ValueError("all costs must share the barycenter-side dimension")

    @property
    def k_count(self) -> int:
        return len(self.sources)

    @property
    def ambient_dim(self) -> int:
        return self.costs[0].y_dim


def logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    """Max-shifted log-sum-exp."""
    a = np.asarray(a, dtype=np.float64)
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    out = np.log(np.sum(np.exp(a - amax), axis=axis)) + np.squeeze(amax, axis=axis)
    return out


def neg_energy(ps: CongruentPotentials, k: int, cost: CostFn, x, y, eps: float) -> float:
    """(f_k(y) - c(x, y)) / eps: log of the unnormalized conditional density."""
    from .congruent import potential_eval
    from .costs import cost_eval

    return (potential_eval(ps, k, y) - cost_eval(cost, x, y)) / eps


def log_partition_grid(f_vals: np.ndarray, cost: CostFn, x, eps: float, grid: GridSpec):
    """log of the quadrature sum  sum_j Delta exp((f_j - c(x, y_j)) / eps).

    x may be a single point (returns a scalar) or an (N, Dx) batch
    (returns shape (N,)).  f_vals are the potential values on grid.points.
    """
    f_vals = np.asarray(f_vals, dtype=np.float64)
    if f_vals.shape != (grid.m_count,):
        raise ValueError(f"f_vals must have shape ({grid.m_count},), got {f_vals.shape}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xs = x[None, :] if single else x
    c_mat = cost_cross(cost, xs, grid.points)
    vals = logsumexp((f_vals[None, :] - c_mat) / eps, axis=1) + np.log(grid.cell_weight)
    return float(vals[0]) if single else vals


def c_transform_grid(f_vals: np.ndarray, cost: CostFn, x, eps: float, grid: GridSpec):
    """fC(x) = -eps log Z(f, x) evaluated by grid quadrature."""
    lp = log_partition_grid(f_vals, cost, x, eps, grid)
    return -eps * lp


def conditional_probs_grid(f_vals: np.ndarray, cost: CostFn, xs: np.ndarray, eps: float, grid: GridSpec) -> np.ndarray:
    """Conditional plan masses on the grid, one row per source point (rows sum to 1)."""
    f_vals = np.asarray(f_vals, dtype=np.float64)
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    logits = (f_vals[None, :] - cost_cross(cost, xs, grid.points)) / eps
    logits = logits - logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def dual_value_grid(
    f_grids: np.ndarray,
    problem: BarycenterProblem,
    grid: GridSpec,
    source_samples: list[np.ndarray],
) -> float:
    """Exact-on-the-grid dual objective for tabular potentials.

    f_grids has shape (K, M) and must satisfy the congruence condition on
    every grid point.  Returns sum_k lambda_k * mean_x fC_k(x) over the
    empirical source samples.
    """
    f_grids = np.asarray(f_grids, dtype=np.float64)
    if f_grids.shape != (problem.k_count, grid.m_count):
        raise ValueError(f"f_grids must have shape ({problem.k_count}, {grid.m_count})")
    resid = np.max(np.abs(problem.weights @ f_grids))
    if resid > CONGRUENCE_TOL:
        raise ValueError(f"congruence violated on the grid: max residual {resid:.3e}")
    total = 0.0
    for k in range(problem.k_count):
        vals = c_transform_grid(f_grids[k], problem.costs[k], np.atleast_2d(source_samples[k]), problem.epsilon, grid)
        total += problem.weights[k] * float(np.mean(vals))
    return total


def potentials_on_grid(ps: CongruentPotentials, grid: GridSpec) -> np.ndarray:
    """Evaluate all congruent potentials on the grid points, shape (K, M)."""
    return ps.eval_all(grid.points)


def _assemble_net_grads(ps: CongruentPotentials, mean_grads: list[list[np.ndarray]], weights: np.ndarray) -> list[np.ndarray]:
    """Combine per-(net j, batch k) means of d g_j / d theta_j into dL/dtheta_j.

    mean_grads[j][k] is the batch-k average of d g_j / d theta_j; the
    congruence chain rule turns these into

        dL/dtheta_j = -lambda_j * (mean_grads[j][j] - sum_k lambda_k mean_grads[j][k]).
    """
    out = []
    for j in range(ps.k_count):
        stacked = np.stack(mean_grads[j])
        mix = weights @ stacked
        out.append(-ps.weights[j] * (mean_grads[j][j] - mix))
    return out


def loss_grad_mcmc(
    ps: CongruentPotentials,
    problem: BarycenterProblem,
    x_batches: list[np.ndarray],
    y_batches: list[np.ndarray],
) -> list[np.ndarray]:
    """Gradient of the dual objective from conditional-plan samples.

    y_batches[k] must hold one sample per row of x_batches[k], drawn from
    the current potentials' conditional plans.  Returns one flat gradient
    per network (ascent direction is +gradient).
    """
    if len(x_batches) != problem.k_count or len(y_batches) != problem.k_count:
        raise ValueError("need one x batch and one y batch per source")
    for k in range(problem.k_count):
        if len(x_batches[k]) != len(y_batches[k]):
            raise ValueError(f"batch size mismatch for source {k}")
    mean_grads = [
        [ps.net_param_grads(j, np.asarray(y_batches[k], dtype=np.float64)).mean(axis=0) for k in range(problem.k_count)]
        for j in range(ps.k_count)
    ]
    return _assemble_net_grads(ps, mean_grads, problem.weights)


def loss_grad_grid(
    ps: CongruentPotentials,
    problem: BarycenterProblem,
    x_batches: list[np.ndarray],
    grid: GridSpec,
) -> list[np.ndarray]:
    """Exact discrete-Y gradient: conditional expectations taken on the grid.

    Matches central finite differences of dual_value_grid applied to the
    same potentials; used as the reference for both sampling estimators.
    """
    f_grids = potentials_on_grid(ps, grid)
    param_grids = [ps.net_param_grads(j, grid.points) for j in range(ps.k_count)]  # (M, P_j)
    mean_grads: list[list[np.ndarray]] = [[None] * problem.k_count for _ in range(ps.k_count)]
    for k in range(problem.k_count):
        probs = conditional_probs_grid(
            f_grids[k], problem.costs[k], np.atleast_2d(x_batches[k]), problem.epsilon, grid
        )
        weights_on_grid = probs.mean(axis=0)
        for j in range(ps.k_count):
            mean_grads[j][k] = weights_on_grid @ param_grids[j]
    return _assemble_net_grads(ps, mean_grads, problem.weights)


class ImportanceUnderflowError(RuntimeError):
    """All importance weights vanished; carries the effective sample size."""

    def __init__(self, message: str, ess: float):
        super().__init__(message)
        self.ess = ess


def gaussian_log_density(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Multivariate normal log density, one value per row."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    d = mean.shape[0]
    chol = np.linalg.cholesky(cov)
    diff = points - mean
    sol = np.linalg.solve(chol, diff.T)
    quad = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (quad + logdet + d * np.log(2.0 * np.pi))


def importance_log_weights(
    f_vals: np.ndarray,
    cost: CostFn,
    xs: np.ndarray,
    proposal_points: np.ndarray,
    proposal_logpdf: np.ndarray,
    eps: float,
) -> np.ndarray:
    """log of (unnormalized conditional density / proposal density), shape (S, P).

    f_vals holds the potential's values on the proposal points.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    c_mat = cost_cross(cost, xs, proposal_points)
    return (np.asarray(f_vals)[None, :] - c_mat) / eps - proposal_logpdf[None, :]


def _normalized_weights(log_w: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(np.max(log_w, axis=1))):
        ess = 0.0
        raise ImportanceUnderflowError(
            f"importance weights degenerate (effective sample size {ess:.3g})", ess
        )
    shifted = log_w - log_w.max(axis=1, keepdims=True)
    w = np.exp(shifted)
    totals = w.sum(axis=1, keepdims=True)
    w = w / totals
    ess = float(np.min(1.0 / np.sum(w * w, axis=1)))
    if not np.isfinite(ess) or ess <= 0:
        raise ImportanceUnderflowError(
            f"importance weights degenerate (effective sample size {ess:.3g})", ess
        )
    return w


def loss_grad_is(
    ps: CongruentPotentials,
    problem: BarycenterProblem,
    x_batches: list[np.ndarray],
    proposal,
    proposal_count: int,
    rng: np.random.Generator,
) -> tuple[list[np.ndarray], float]:
    """Self-normalized importance-sampling gradient against a Gaussian proposal.

    Draws one batch of P proposal points y_p ~ q per call (shared across the
    K sources; the weights differ per source anyway), forms log-domain
    weights (f_k(y_p) - c(x_s, y_p)) / eps - log q(y_p), normalizes per
    source point, and averages d g_j / d theta_j under those weights.
    Returns the per-net gradients and the surrogate loss value under the
    same weights.
    """
    from .datagen import sample_gaussian

    pts = sample_gaussian(proposal, proposal_count, rng)
    logq = gaussian_log_density(pts, proposal.mean, proposal.covariance)
    f_vals_all = ps.eval_all(pts)
    param_grads = [ps.net_param_grads(j, pts) for j in range(ps.k_count)]
    mean_grads: list[list[np.ndarray]] = [[None] * problem.k_count for _ in range(ps.k_count)]
    loss = 0.0
    for k in range(problem.k_count):
        log_w = importance_log_weights(
            f_vals_all[k], problem.costs[k], x_batches[k], pts, logq, problem.epsilon
        )
        w = _normalized_weights(log_w)
        weights_on_points = w.mean(axis=0)
        loss += -problem.weights[k] * float(weights_on_points @ f_vals_all[k])
        for j in range(ps.k_count):
            mean_grads[j][k] = weights_on_points @ param_grads[j]
    return _assemble_net_grads(ps, mean_grads, problem.weights), loss


def surrogate_loss(ps: CongruentPotentials, weights: np.ndarray, y_batches: list[np.ndarray]) -> float:
    """L-hat = -sum_k lambda_k mean_s f_k(y_k^s); its theta-gradient is the dual gradient."""
    total = 0.0
    for k in range(len(y_batches)):
        total += -weights[k] * float(np.mean(ps.eval_batch(k, np.asarray(y_batches[k], dtype=np.float64))))
    return total
