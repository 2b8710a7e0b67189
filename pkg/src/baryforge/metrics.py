"""Quantitative evaluation of learned barycenters."""

from __future__ import annotations

import numpy as np

from .langevin import UlaConfig, ula_sample


def barycentric_projection(
    potentials,
    k: int,
    cost,
    x: np.ndarray,
    m_samples: int,
    ula: UlaConfig,
    seed: int,
) -> np.ndarray:
    """Conditional-mean map estimate: average of m Langevin draws from the plan at x."""
    if m_samples < 1:
        raise ValueError("need at least one sample per point")
    x = np.asarray(x, dtype=np.float64)
    xs = np.repeat(x[None, :], m_samples, axis=0)
    ys = ula_sample(potentials, k, cost, xs, ula, seed)
    return ys.mean(axis=0)


def barycentric_projection_batch(
    potentials,
    k: int,
    cost,
    xs: np.ndarray,
    m_samples: int,
    ula: UlaConfig,
    seed: int,
) -> np.ndarray:
    """barycentric_projection for every row of xs at once (shared chain budget)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    rep = np.repeat(xs, m_samples, axis=0)
    ys = ula_sample(potentials, k, cost, rep, ula, seed)
    return ys.reshape(xs.shape[0], m_samples, -1).mean(axis=1)


def l2_uvp(t_hat: np.ndarray, t_star: np.ndarray, q_variance: float) -> float:
    """Unexplained variance percentage of a map estimate.

    100 * mean ||T_hat(x) - T_star(x)||^2 / Var(Q), with Var(Q) the trace of
    the target barycenter covariance.  Both maps are given as their values
    on a shared set of source samples.
    """
    t_hat = np.atleast_2d(np.asarray(t_hat, dtype=np.float64))
    t_star = np.atleast_2d(np.asarray(t_star, dtype=np.float64))
    if t_hat.shape != t_star.shape:
        raise ValueError("map evaluations must have identical shapes")
    if t_hat.shape[0] < 1:
        raise ValueError("need at least one sample")
    if q_variance <= 0:
        raise ValueError("target variance must be positive")
    sq = np.sum((t_hat - t_star) ** 2, axis=1)
    return 100.0 * float(np.mean(sq)) / float(q_variance)


def dual_gap(l_star: float, l_hat: float, eps: float) -> tuple[float, float]:
    """Duality gap and the KL budget it certifies.

    gap = L* - L_hat; gap / eps equals the weight-averaged KL divergence
    between the optimal plans and the recovered ones (and upper-bounds the
    barycenter KLs).  A negative gap is reported as-is: it flags Monte-Carlo
    error or a loose oracle, not a bug.
    """
    gap = float(l_star) - float(l_hat)
    return gap, gap / float(eps)


def moment_diag(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unbiased sample mean and covariance."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] < 2:
        raise ValueError("need at least two samples")
    mean = samples.mean(axis=0)
    cov = np.cov(samples, rowvar=False, ddof=1)
    return mean, np.atleast_2d(cov)


def tv_on_grid(q1: np.ndarray, q2: np.ndarray) -> float:
    """Total variation distance between two probability vectors on a shared grid."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    if q1.shape != q2.shape:
        raise ValueError("weight vectors must share their shape")
    for q in (q1, q2):
        if np.any(q < 0):
            raise ValueError("weights must be nonnegative")
        if abs(q.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1 (got {q.sum()!r})")
    return 0.5 * float(np.sum(np.abs(q1 - q2)))
