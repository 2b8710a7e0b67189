"""Batch unadjusted Langevin algorithm (ULA) for the conditional plans.

The target for source point x and potential f_k is the Gibbs distribution
with density proportional to exp((f_k(y) - c(x, y)) / eps).  One update is

    y  <-  y + (eta / (2 eps)) * grad_y(f_k(y) - c(x, y)) + sqrt(eta) * xi,

xi ~ N(0, I).  No Metropolis correction, no replay buffer; chains are
restarted from N(0, I) (or given points) on every call.  On the unit
sphere each step is renormalized back onto the manifold.

Every chain owns an rng stream derived deterministically from
(seed, chain index), so results are identical no matter how the batch is
chunked or scheduled.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

INIT_STANDARD_NORMAL = "standard_normal"
INIT_GIVEN_POINTS = "given_points"
MANIFOLD_NONE = "none"
MANIFOLD_UNIT_SPHERE = "unit_sphere"

DIVERGENCE_NORM = 1e6


class DivergenceError(RuntimeError):
    """A chain left the numerically trusted region; carries diagnostics."""

    def __init__(self, message: str, y=None, drift=None, step=None):
        super().__init__(message)
        self.y = y
        self.drift = drift
        self.step = step


@dataclass(frozen=True)
class UlaConfig:
    """Langevin schedule: L steps of size eta at regularization eps.

    Config files store sqrt(eta); this object stores eta itself.
    """

    steps: int
    step_size: float
    epsilon: float
    init: str = INIT_STANDARD_NORMAL
    manifold: str = MANIFOLD_NONE

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step size must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.init not in (INIT_STANDARD_NORMAL, INIT_GIVEN_POINTS):
            raise ValueError(f"unknown init law {self.init!r}")
        if self.manifold not in (MANIFOLD_NONE, MANIFOLD_UNIT_SPHERE):
            raise ValueError(f"unknown manifold {self.manifold!r}")


def _advance(y: np.ndarray, drift: np.ndarray, noise: np.ndarray, cfg: UlaConfig, step: int) -> np.ndarray:
    """The single ULA update formula; shared by ula_step and ula_sample."""
    if not np.all(np.isfinite(drift)):
        raise DivergenceError(
            f"non-finite drift at step {step}: y={y!r} drift={drift!r}", y=y, drift=drift, step=step
        )
    out = y + (cfg.step_size / (2.0 * cfg.epsilon)) * drift + np.sqrt(cfg.step_size) * noise
    if cfg.manifold == MANIFOLD_UNIT_SPHERE:
        out = out / np.linalg.norm(out, axis=-1, keepdims=True)
    if np.any(np.linalg.norm(out, axis=-1) > DIVERGENCE_NORM):
        raise DivergenceError(
            f"chain norm exceeded {DIVERGENCE_NORM:g} at step {step}: y={y!r} drift={drift!r}",
            y=y,
            drift=drift,
            step=step,
        )
    return out


def ula_step(drift_fn, y: np.ndarray, cfg: UlaConfig, rng: np.random.Generator) -> np.ndarray:
    """One ULA update of a point (D,) or a batch (B, D); noise drawn from rng."""
    y = np.asarray(y, dtype=np.float64)
    drift = np.asarray(drift_fn(y), dtype=np.float64)
    if drift.shape != y.shape:
        raise ValueError(f"drift shape {drift.shape} does not match state shape {y.shape}")
    return _advance(y, drift, rng.standard_normal(y.shape), cfg, step=0)


def _block_size(cfg: UlaConfig, dim: int, cap_bytes: int = 1 << 26) -> int:
    per_chain = (cfg.steps + 2) * dim * 8
    return max(64, min(8192, cap_bytes // max(per_chain, 1)))


def _thread_count() -> int:
    raw = os.environ.get("BARYFORGE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as e:
        raise ValueError(f"BARYFORGE_THREADS must be an integer, got {raw!r}") from e
    return max(1, n)


def ula_sample(
    potentials,
    k: int,
    cost,
    xs: np.ndarray,
    cfg: UlaConfig,
    seed: int,
    init_points: np.ndarray | None = None,
    _chain_offset: int = 0,
) -> np.ndarray:
    """Draw one conditional-plan sample per source point.

    For each row x of xs, runs an independent chain with drift
    y -> grad f_k(y) - grad_y c(x, y) for cfg.steps updates and returns the
    final states, shape (B, D).  `potentials` only needs a
    grad_input_batch(k, Y) method (CongruentPotentials or a test stub).

    Chain i draws its init and per-step noise from the stream
    (seed, _chain_offset + i), independent of batching and scheduling; the
    offset lets callers reproduce any single chain of a larger batch.
    """
    from .costs import cost_grad_y_pairs

    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[0] < 1:
        raise ValueError("need a nonempty batch of source points")
    dim = cost.y_dim
    n = xs.shape[0]
    if cfg.init == INIT_GIVEN_POINTS:
        if init_points is None:
            raise ValueError("init law 'given_points' requires init_points")
        init_points = np.asarray(init_points, dtype=np.float64)
        if init_points.shape != (n, dim):
            raise ValueError(f"init_points must have shape ({n}, {dim})")

    def drift(ys: np.ndarray, rows: slice) -> np.ndarray:
        return potentials.grad_input_batch(k, ys) - cost_grad_y_pairs(cost, xs[rows], ys)

    out = np.empty((n, dim))
    block = _block_size(cfg, dim)
    spans = [slice(s, min(s + block, n)) for s in range(0, n, block)]

    def run_span(span: slice):
        rows = range(span.start, span.stop)
        noise = np.empty((len(rows), cfg.steps + 1, dim))
        for i, chain in enumerate(rows):
            gen = np.random.default_rng(
                np.random.SeedSequence(entropy=int(seed), spawn_key=(int(_chain_offset + chain),))
            )
            noise[i] = gen.standard_normal((cfg.steps + 1, dim))
        if cfg.init == INIT_GIVEN_POINTS:
            y = init_points[span].copy()
        else:
            y = noise[:, 0, :].copy()
        if cfg.manifold == MANIFOLD_UNIT_SPHERE:
            y = y / np.linalg.norm(y, axis=1, keepdims=True)
        for step in range(cfg.steps):
            y = _advance(y, drift(y, span), noise[:, step + 1, :], cfg, step=step)
        out[span] = y

    threads = _thread_count()
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_span, spans))
    else:
        for span in spans:
            run_span(span)
    return out
