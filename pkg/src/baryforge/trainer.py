"""Stochastic dual-ascent training loop.

Each iteration, per source k: draw a batch of source points, draw one
conditional-plan sample per point (Langevin chains, or reweighted proposal
draws in importance-sampling mode), form the surrogate loss

    L_hat = sum_k ( -lambda_k * mean_s f_k(y_k^s) ),

and ascend all K networks simultaneously along the gradient of the dual
objective.  The reported loss is L_hat, whose parameter gradient matches
the dual gradient while samples are held fixed; it is NOT the dual value
itself, so only its trend is meaningful.

All randomness is keyed by (seed, purpose, iteration, ...), never by
consumed generator state, which is what makes checkpoint resume bit-exact.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, replace

import numpy as np

from . import eotcore, rngstream
from .congruent import CongruentPotentials
from .eotcore import BarycenterProblem
from .langevin import UlaConfig, ula_sample
from .oracles import GaussianSpec

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteLossError(RuntimeError):
    """Training produced a non-finite loss; carries the offending iteration."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    batch_size: int
    learning_rate: float
    ula: UlaConfig
    optimizer: str = "adam"          # adam | sgd
    grad_estimator: str = "mcmc"     # mcmc | importance
    proposal: GaussianSpec | None = None
    proposal_count: int = 1024
    seed: int = 0
    eval_every: int = 50
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.grad_estimator not in ("mcmc", "importance"):
            raise ValueError(f"unknown gradient estimator {self.grad_estimator!r}")
        if self.grad_estimator == "importance":
            if self.proposal is None:
                raise ValueError("importance-sampling estimator requires a proposal")
            if self.proposal_count < 1:
                raise ValueError("proposal count must be positive")

    def to_dict(self) -> dict:
        d = {
            "iterations": self.iterations,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "grad_estimator": self.grad_estimator,
            "proposal_count": self.proposal_count,
            "seed": self.seed,
            "eval_every": self.eval_every,
            "checkpoint_every": self.checkpoint_every,
            "ula": {
                "steps": self.ula.steps,
                "step_size": self.ula.step_size,
                "epsilon": self.ula.epsilon,
                "init": self.ula.init,
                "manifold": self.ula.manifold,
            },
        }
        if self.proposal is not None:
            d["proposal"] = {
                "mean": [float(v) for v in self.proposal.mean],
                "covariance": [[float(v) for v in row] for row in self.proposal.covariance],
            }
        return d


@dataclass
class AdamState:
    """First/second moment accumulators per parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_update(state: AdamState, params: np.ndarray, grad: np.ndarray, lr: float) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam step in the ASCENT direction (params move along +grad)."""
    if state.m.shape != params.shape or grad.shape != params.shape:
        raise ValueError("parameter, gradient and moment shapes must match")
    t = state.t + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grad * grad
    m_hat = m / (1.0 - ADAM_BETA1**t)
    v_hat = v / (1.0 - ADAM_BETA2**t)
    return AdamState(m, v, t), params + lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def sgd_update(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    return params + lr * grad


def rng_digest(seed: int, iteration: int) -> str:
    """Fingerprint of the stream position; resume recomputes and verifies it."""
    return hashlib.sha256(f"{int(seed)}:{int(iteration)}".encode()).hexdigest()


@dataclass
class Checkpoint:
    """Everything needed to restart or evaluate a run."""

    potentials: CongruentPotentials
    epsilon: float
    cost_dicts: list[dict]
    source_dicts: list[dict]
    iteration: int
    seed: int
    rng_state_digest: str
    loss_history: list[tuple[int, float, float]]  # (iteration, L_hat, wallclock_s)
    optimizer_state: dict
    train_config: dict
    format_version: int = 1

    @property
    def ambient_dim(self) -> int:
        return self.potentials.input_dim


def _iteration_seed(seed: int, domain: int, iteration: int, k: int) -> int:
    state = rngstream.child_sequence(seed, domain, iteration, k).generate_state(2, dtype=np.uint64)
    return int(state[0])


def _optimizer_state_to_dict(states: list[AdamState] | None) -> dict:
    if states is None:
        return {"name": "sgd"}
    return {
        "name": "adam",
        "t": states[0].t,
        "m": [[float(v) for v in s.m] for s in states],
        "v": [[float(v) for v in s.v] for s in states],
    }


def _optimizer_state_from_dict(d: dict, ps: CongruentPotentials) -> list[AdamState] | None:
    if d.get("name") != "adam":
        return None
    return [
        AdamState(np.asarray(m, dtype=np.float64), np.asarray(v, dtype=np.float64), int(d["t"]))
        for m, v in zip(d["m"], d["v"])
    ]


def train(
    problem: BarycenterProblem,
    cfg: TrainConfig,
    potentials: CongruentPotentials,
    *,
    start_iteration: int = 0,
    optimizer_state: dict | None = None,
    history: list[tuple[int, float, float]] | None = None,
    checkpoint_cb=None,
    log_fn=None,
) -> Checkpoint:
    """Run Algorithm-style dual ascent from start_iteration to cfg.iterations.

    Deterministic for a fixed cfg.seed: rerunning (or resuming from any
    intermediate checkpoint) reproduces parameters and the (iteration,
    loss) history bit-exactly.  Raises NonFiniteLossError with the failing
    iteration if the surrogate loss leaves the finite range; Langevin
    divergences propagate as DivergenceError.
    """
    ps = potentials.copy()
    if np.max(np.abs(ps.weights - problem.weights)) > 1e-12:
        raise ValueError("potential weights must match the problem weights")
    if ps.input_dim != problem.ambient_dim:
        raise ValueError("potential input dimension must match the problem's ambient dimension")

    adam_states: list[AdamState] | None
    if cfg.optimizer == "adam":
        if optimizer_state is not None and optimizer_state.get("name") == "adam":
            adam_states = _optimizer_state_from_dict(optimizer_state, ps)
        else:
            adam_states = [AdamState.zeros(n.weights.size) for n in ps.nets]
    else:
        adam_states = None

    loss_history: list[tuple[int, float, float]] = list(history or [])
    k_count = problem.k_count

    for it in range(start_iteration, cfg.iterations):
        t0 = time.perf_counter()
        x_batches = [
            problem.sources[k].draw(cfg.batch_size, rngstream.child_rng(cfg.seed, rngstream.TRAIN_XBATCH, it, k))
            for k in range(k_count)
        ]
        if cfg.grad_estimator == "mcmc":
            y_batches = [
                ula_sample(
                    ps,
                    k,
                    problem.costs[k],
                    x_batches[k],
                    cfg.ula,
                    seed=_iteration_seed(cfg.seed, rngstream.TRAIN_ULA, it, k),
                )
                for k in range(k_count)
            ]
            loss = eotcore.surrogate_loss(ps, problem.weights, y_batches)
            grads = eotcore.loss_grad_mcmc(ps, problem, x_batches, y_batches)
        else:
            grads, loss = eotcore.loss_grad_is(
                ps,
                problem,
                x_batches,
                cfg.proposal,
                cfg.proposal_count,
                rngstream.child_rng(cfg.seed, rngstream.TRAIN_PROPOSAL, it),
            )
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"non-finite loss {loss!r} at iteration {it}", iteration=it)

        for j in range(k_count):
            if adam_states is not None:
                adam_states[j], new_w = adam_update(adam_states[j], ps.nets[j].weights, grads[j], cfg.learning_rate)
            else:
                new_w = sgd_update(ps.nets[j].weights, grads[j], cfg.learning_rate)
            ps.nets[j].weights = new_w

        loss_history.append((it, float(loss), time.perf_counter() - t0))
        if log_fn is not None and cfg.eval_every > 0 and (it + 1) % cfg.eval_every == 0:
            log_fn(f"iter {it + 1}/{cfg.iterations}  L_hat={loss:.6f}")
        if checkpoint_cb is not None and cfg.checkpoint_every > 0 and (it + 1) % cfg.checkpoint_every == 0 and (it + 1) < cfg.iterations:
            checkpoint_cb(_make_checkpoint(ps, problem, cfg, it + 1, loss_history, adam_states))

    return _make_checkpoint(ps, problem, cfg, cfg.iterations, loss_history, adam_states)


def _make_checkpoint(ps, problem, cfg, iteration, loss_history, adam_states) -> Checkpoint:
    return Checkpoint(
        potentials=ps.copy(),
        epsilon=problem.epsilon,
        cost_dicts=[c.to_dict() for c in problem.costs],
        source_dicts=[s.to_dict() for s in problem.sources],
        iteration=iteration,
        seed=cfg.seed,
        rng_state_digest=rng_digest(cfg.seed, iteration),
        loss_history=list(loss_history),
        optimizer_state=_optimizer_state_to_dict(adam_states),
        train_config=cfg.to_dict(),
    )


def train_config_from_dict(d: dict) -> TrainConfig:
    ula = UlaConfig(
        steps=int(d["ula"]["steps"]),
        step_size=float(d["ula"]["step_size"]),
        epsilon=float(d["ula"]["epsilon"]),
        init=d["ula"]["init"],
        manifold=d["ula"]["manifold"],
    )
    proposal = None
    if "proposal" in d:
        proposal = GaussianSpec(np.asarray(d["proposal"]["mean"]), np.asarray(d["proposal"]["covariance"]))
    return TrainConfig(
        iterations=int(d["iterations"]),
        batch_size=int(d["batch_size"]),
        learning_rate=float(d["learning_rate"]),
        ula=ula,
        optimizer=d.get("optimizer", "adam"),
        grad_estimator=d.get("grad_estimator", "mcmc"),
        proposal=proposal,
        proposal_count=int(d.get("proposal_count", 1024)),
        seed=int(d.get("seed", 0)),
        eval_every=int(d.get("eval_every", 50)),
        checkpoint_every=int(d.get("checkpoint_every", 0)),
    )


def resume(checkpoint: Checkpoint, iterations: int | None = None, checkpoint_cb=None, log_fn=None) -> Checkpoint:
    """Continue a checkpointed run; bit-identical to the uninterrupted run."""
    from .costs import cost_from_dict
    from .datagen import sampler_from_dict

    cfg = train_config_from_dict(checkpoint.train_config)
    if iterations is not None:
        cfg = replace(cfg, iterations=int(iterations))
    expected = rng_digest(checkpoint.seed, checkpoint.iteration)
    if checkpoint.rng_state_digest != expected:
        raise ValueError("checkpoint rng digest does not match its seed/iteration")
    problem = BarycenterProblem(
        sources=[sampler_from_dict(d) for d in checkpoint.source_dicts],
        costs=[cost_from_dict(d) for d in checkpoint.cost_dicts],
        weights=checkpoint.potentials.weights,
        epsilon=checkpoint.epsilon,
    )
    return train(
        problem,
        cfg,
        checkpoint.potentials,
        start_iteration=checkpoint.iteration,
        optimizer_state=checkpoint.optimizer_state,
        history=checkpoint.loss_history,
        checkpoint_cb=checkpoint_cb,
        log_fn=log_fn,
    )
