"""Experiment configuration: strict INI-style key/value files.

Grammar: standard INI sections of `key = value` pairs, `#`/`;` comments,
keys are case-sensitive.  Nested structure uses dotted section names
(`[source.0]`, `[cost.1]`).  Unknown sections or keys are rejected, as are
missing required keys and any cross-field dimension mismatch.  Lists are
comma-separated; covariance matrices are semicolon-separated rows.

A config resolves into an ExperimentConfig: the barycenter problem with
live sampler handles, network architecture, training schedule, evaluation
plan and output location, plus the fully-resolved plain dict used for the
run manifest.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .costs import (
    CostFn,
    NetMap,
    generator_composed,
    sphere_geodesic_sq,
    sq_euclid,
    twisted,
)
from .datagen import (
    EmpiricalSampler,
    GaussianSampler,
    SourceSampler,
    TwisterCometSampler,
    VonMisesSampler,
    load_csv,
)
from .eotcore import BarycenterProblem
from .langevin import UlaConfig
from .nnet import Activation, VectorNetSpec, vec_net_init
from .oracles import GaussianSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


_SCHEMA = {
    "experiment": {"name", "seed"},
    "problem": {"kind", "epsilon", "weights", "dim", "spread_seed", "kappa", "variant", "k"},
    "net": {"hidden", "activation"},
    "train": {
        "iterations",
        "batch_size",
        "learning_rate",
        "optimizer",
        "estimator",
        "ula_steps",
        "ula_sqrt_step",
        "manifold",
        "proposal_cov_scale",
        "proposal_count",
        "eval_every",
        "checkpoint_every",
    },
    "eval": {
        "metrics",
        "n_x",
        "n_samples_per_x",
        "pooled_samples",
        "ula_steps",
        "ula_sqrt_step",
        "grid_lo",
        "grid_hi",
        "grid_m",
    },
    "io": {"out_dir"},
}
_SOURCE_KEYS = {"kind", "mean", "cov_diag", "cov_rows", "path", "index", "variant", "mu", "kappa"}
_COST_KEYS = {"kind", "dim", "decoder_latent_dim", "decoder_hidden", "decoder_seed"}

PROBLEM_KINDS = ("twister", "gaussians", "sphere", "custom")
METRIC_NAMES = ("moments", "l2_uvp", "dual_gap")


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _ints(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _matrix(text: str) -> np.ndarray:
    return np.asarray([_floats(row) for row in text.split(";")], dtype=np.float64)


def _require(section: dict, key: str, where: str) -> str:
    if key not in section:
        raise ConfigError(f"missing required key '{key}' in section [{where}]")
    return section[key]


def spread_gaussians(dim: int, count: int, spread_seed: int) -> list[GaussianSpec]:
    """Deterministic family of well-conditioned Gaussians for the preset problem."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(spread_seed)))
    specs = []
    for _ in range(count):
        mean = rng.uniform(-2.0, 2.0, size=dim)
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        eig = rng.uniform(0.5, 1.5, size=dim)
        cov = (q * eig) @ q.T
        specs.append(GaussianSpec(mean, 0.5 * (cov + cov.T)))
    return specs


def tetrahedral_means() -> list[np.ndarray]:
    raw = np.asarray([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
    return [m / np.linalg.norm(m) for m in raw]


def _parse_weights(text: str, k: int) -> np.ndarray:
    if text.strip() == "uniform":
        return np.full(k, 1.0 / k)
    w = np.asarray(_floats(text))
    if w.shape != (k,):
        raise ConfigError(f"expected {k} weights, got {w.shape[0]}")
    return w


def _build_source(sec: dict, name: str) -> SourceSampler:
    kind = _require(sec, "kind", name)
    if kind == "gaussian":
        mean = np.asarray(_floats(_require(sec, "mean", name)))
        if "cov_rows" in sec:
            cov = _matrix(sec["cov_rows"])
        elif "cov_diag" in sec:
            cov = np.diag(_floats(sec["cov_diag"]))
        else:
            raise ConfigError(f"[{name}] needs cov_rows or cov_diag")
        try:
            return GaussianSampler(GaussianSpec(mean, cov))
        except ValueError as e:
            raise ConfigError(f"[{name}] {e}") from e
    if kind == "csv":
        return EmpiricalSampler(load_csv(_require(sec, "path", name)), origin=sec["path"])
    if kind == "twister_comet":
        return TwisterCometSampler(int(_require(sec, "index", name)), sec.get("variant", "symmetric"))
    if kind == "von_mises":
        mu = np.asarray(_floats(_require(sec, "mu", name)))
        return VonMisesSampler(mu / np.linalg.norm(mu), float(_require(sec, "kappa", name)))
    raise ConfigError(f"[{name}] unknown source kind {kind!r}")


def _build_cost(sec: dict, name: str) -> CostFn:
    kind = _require(sec, "kind", name)
    if kind == "sq_euclid":
        return sq_euclid(int(_require(sec, "dim", name)))
    if kind == "twisted":
        return twisted()
    if kind == "sphere_geodesic_sq":
        return sphere_geodesic_sq()
    if kind == "generator_composed":
        data_dim = int(_require(sec, "dim", name))
        latent = int(_require(sec, "decoder_latent_dim", name))
        hidden = tuple(_ints(sec.get("decoder_hidden", "16")))
        dec_seed = int(sec.get("decoder_seed", "0"))
        decoder = NetMap(vec_net_init(VectorNetSpec(latent, hidden, data_dim), dec_seed))
        return generator_composed(sq_euclid(data_dim), decoder)
    raise ConfigError(f"[{name}] unknown cost kind {kind!r}")


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    problem: BarycenterProblem
    net_hidden: tuple[int, ...]
    activation: Activation
    train: TrainConfig
    eval_spec: dict
    out_dir: Path
    resolved: dict

    @property
    def problem_kind(self) -> str:
        return self.resolved["problem"]["kind"]


def _read_ini(path: Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with path.open() as fh:
            parser.read_file(fh)
    except (configparser.Error, OSError) as e:
        raise ConfigError(f"{path}: {e}") from e
    return {name: dict(parser[name]) for name in parser.sections()}


def _apply_overrides(sections: dict, overrides: list[str]) -> None:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        target, value = item.split("=", 1)
        if "." not in target:
            raise ConfigError(f"override key {target!r} must be section.key")
        sec, key = target.rsplit(".", 1)
        sections.setdefault(sec, {})[key] = value


def _validate_keys(sections: dict) -> None:
    for name, keys in sections.items():
        if name in _SCHEMA:
            allowed = _SCHEMA[name]
        elif name.startswith("source."):
            allowed = _SOURCE_KEYS
        elif name.startswith("cost."):
            allowed = _COST_KEYS
        else:
            raise ConfigError(f"unknown section [{name}]")
        for key in keys:
            if key not in allowed:
                raise ConfigError(f"unknown key '{key}' in section [{name}]")


def load_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    path = Path(path)
    sections = _read_ini(path)
    _apply_overrides(sections, list(overrides or []))
    _validate_keys(sections)

    exp = sections.get("experiment", {})
    name = exp.get("name", path.stem)
    seed = int(exp.get("seed", "0"))

    prob = sections.get("problem", {})
    kind = _require(prob, "kind", "problem")
    if kind not in PROBLEM_KINDS:
        raise ConfigError(f"problem kind must be one of {PROBLEM_KINDS}, got {kind!r}")
    epsilon = float(_require(prob, "epsilon", "problem"))

    if kind == "twister":
        variant = prob.get("variant", "symmetric")
        sources: list[SourceSampler] = [TwisterCometSampler(i, variant) for i in range(3)]
        costs = [twisted() for _ in range(3)]
    elif kind == "gaussians":
        dim = int(prob.get("dim", "2"))
        spread_seed = int(prob.get("spread_seed", "11"))
        specs = spread_gaussians(dim, 3, spread_seed)
        sources = [GaussianSampler(s) for s in specs]
        costs = [sq_euclid(dim) for _ in range(3)]
    elif kind == "sphere":
        kappa = float(prob.get("kappa", "50"))
        sources = [VonMisesSampler(mu, kappa) for mu in tetrahedral_means()]
        costs = [sphere_geodesic_sq() for _ in range(4)]
    else:
        k = int(_require(prob, "k", "problem"))
        sources, costs = [], []
        for i in range(k):
            src_name, cost_name = f"source.{i}", f"cost.{i}"
            if src_name not in sections or cost_name not in sections:
                raise ConfigError(f"custom problem needs sections [{src_name}] and [{cost_name}]")
            sources.append(_build_source(sections[src_name], src_name))
            costs.append(_build_cost(sections[cost_name], cost_name))

    k_count = len(sources)
    weights = _parse_weights(prob.get("weights", "uniform"), k_count)
    for i, (src, cost) in enumerate(zip(sources, costs)):
        if src.dim != cost.x_dim:
            raise ConfigError(f"source {i} has dimension {src.dim} but its cost expects {cost.x_dim}")
    try:
        problem = BarycenterProblem(sources=sources, costs=costs, weights=weights, epsilon=epsilon)
    except ValueError as e:
        raise ConfigError(str(e)) from e

    net = sections.get("net", {})
    hidden = tuple(_ints(net.get("hidden", "64, 64")))
    try:
        activation = Activation(net.get("activation", "softplus"))
    except ValueError:
        raise ConfigError(f"unknown activation {net.get('activation')!r}") from None

    tr = sections.get("train", {})
    manifold = tr.get("manifold", "unit_sphere" if kind == "sphere" else "none")
    sqrt_step = float(tr.get("ula_sqrt_step", "0.1"))
    ula = UlaConfig(
        steps=int(tr.get("ula_steps", "300")),
        step_size=sqrt_step**2,
        epsilon=epsilon,
        manifold=manifold,
    )
    estimator = tr.get("estimator", "mcmc")
    proposal = None
    if estimator == "importance":
        scale = float(tr.get("proposal_cov_scale", "16"))
        d = problem.ambient_dim
        proposal = GaussianSpec(np.zeros(d), scale * np.eye(d))
    train_cfg = TrainConfig(
        iterations=int(_require(tr, "iterations", "train")),
        batch_size=int(tr.get("batch_size", "256")),
        learning_rate=float(tr.get("learning_rate", "0.01")),
        ula=ula,
        optimizer=tr.get("optimizer", "adam"),
        grad_estimator=estimator,
        proposal=proposal,
        proposal_count=int(tr.get("proposal_count", "1024")),
        seed=seed,
        eval_every=int(tr.get("eval_every", "50")),
        checkpoint_every=int(tr.get("checkpoint_every", "0")),
    )

    ev = sections.get("eval", {})
    metrics = [m.strip() for m in ev.get("metrics", "moments").split(",") if m.strip()]
    for m in metrics:
        if m not in METRIC_NAMES:
            raise ConfigError(f"unknown metric {m!r} (choose from {METRIC_NAMES})")
    eval_spec = {
        "metrics": metrics,
        "n_x": int(ev.get("n_x", "500")),
        "n_samples_per_x": int(ev.get("n_samples_per_x", "64")),
        "pooled_samples": int(ev.get("pooled_samples", "6000")),
        "ula_steps": int(ev.get("ula_steps", str(ula.steps))),
        "ula_sqrt_step": float(ev.get("ula_sqrt_step", str(sqrt_step))),
        "grid_lo": float(ev.get("grid_lo", "-6")),
        "grid_hi": float(ev.get("grid_hi", "6")),
        "grid_m": int(ev.get("grid_m", "200")),
    }

    out_dir = Path(sections.get("io", {}).get("out_dir", f"runs/{name}"))

    resolved = {
        "experiment": {"name": name, "seed": seed},
        "problem": {
            "kind": kind,
            "epsilon": epsilon,
            "weights": [float(w) for w in weights],
            "sources": [s.to_dict() for s in sources],
            "costs": [c.to_dict() for c in costs],
        },
        "net": {"hidden": list(hidden), "activation": activation.value},
        "train": train_cfg.to_dict(),
        "eval": dict(eval_spec),
        "io": {"out_dir": str(out_dir)},
    }
    return ExperimentConfig(
        name=name,
        seed=seed,
        problem=problem,
        net_hidden=hidden,
        activation=activation,
        train=train_cfg,
        eval_spec=eval_spec,
        out_dir=out_dir,
        resolved=resolved,
    )
