"""Command-line experiment runner.

Subcommands:
    train     run a config end to end; emits checkpoint(s), loss_history.csv
              and run_manifest.json
    sample    draw conditional-plan samples from a checkpoint as (x, y) CSV
    eval      run the configured metric suite against a checkpoint
    oracle    compute and store ground-truth artifacts (Gaussian barycenter,
              grid dual solve, comet reference)
    selftest  fast invariant suite; exit 0 iff every property holds

Exit codes: 0 ok, 1 selftest failure, 2 config error, 3 numerical abort,
4 oracle convergence failure.  The environment variable BARYFORGE_THREADS
caps sampler parallelism (default 1; results do not depend on it).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, rngstream
from .checkpoint import atomic_write_bytes, load_checkpoint, save_checkpoint
from .config import ConfigError, load_config
from .congruent import init_potentials
from .costs import cost_from_dict
from .datagen import load_csv, sampler_from_dict
from .eotcore import BarycenterProblem, potentials_on_grid, regular_grid_1d, regular_grid_2d
from .langevin import DivergenceError, UlaConfig, ula_sample
from .metrics import barycentric_projection_batch, dual_gap, l2_uvp, moment_diag
from .oracles import (
    GaussianSpec,
    apply_affine_map,
    gaussian_fixed_point,
    gaussian_ot_map,
    grid_dual_ascent,
    twister_reference,
)
from .selftest import run_selftest
from .trainer import NonFiniteLossError, train


def _write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def _fmt(v) -> str:
    return repr(float(v))


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.override)
    if args.seed is not None:
        cfg = load_config(args.config, args.override + [f"experiment.seed={args.seed}"])
    out_dir = Path(args.out) if args.out else cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    config_digest = hashlib.sha256(Path(args.config).read_bytes()).hexdigest()
    input_hashes = {}
    for src in cfg.resolved["problem"]["sources"]:
        if src.get("source") == "empirical" and src.get("path"):
            input_hashes[src["path"]] = hashlib.sha256(Path(src["path"]).read_bytes()).hexdigest()
    manifest = {
        "config_sha256": config_digest,
        "input_sha256": input_hashes,
        "overrides": list(args.override),
        "package_version": __version__,
        "resolved": cfg.resolved,
    }
    atomic_write_bytes(out_dir / "run_manifest.json", json.dumps(manifest, sort_keys=True, indent=2).encode())

    potentials = init_potentials(
        cfg.problem.k_count,
        cfg.problem.ambient_dim,
        cfg.net_hidden,
        cfg.problem.weights,
        seed=cfg.seed,
        activation=cfg.activation,
    )

    def checkpoint_cb(ckpt):
        save_checkpoint(out_dir / f"ckpt_{ckpt.iteration:06d}.eotb", ckpt)

    try:
        ckpt = train(cfg.problem, cfg.train, potentials, checkpoint_cb=checkpoint_cb, log_fn=print)
    except (DivergenceError, NonFiniteLossError) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3
    save_checkpoint(out_dir / "checkpoint.eotb", ckpt)
    _write_csv(
        out_dir / "loss_history.csv",
        ["iter", "L_hat", "wallclock_s"],
        [[it, _fmt(lh), _fmt(w)] for it, lh, w in ckpt.loss_history],
    )
    print(f"wrote {out_dir / 'checkpoint.eotb'} and loss_history.csv ({ckpt.iteration} iterations)")
    return 0


def _inference_ula(ckpt, args) -> UlaConfig:
    base = ckpt.train_config["ula"]
    steps = args.ula_steps if args.ula_steps is not None else int(base["steps"])
    sqrt_step = args.ula_sqrt_step if args.ula_sqrt_step is not None else float(base["step_size"]) ** 0.5
    return UlaConfig(
        steps=steps,
        step_size=sqrt_step**2,
        epsilon=ckpt.epsilon,
        manifold=base["manifold"],
    )


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    k = args.k
    if not 0 <= k < ckpt.potentials.k_count:
        print(f"error: k={k} out of range for a {ckpt.potentials.k_count}-source checkpoint", file=sys.stderr)
        return 2
    cost = cost_from_dict(ckpt.cost_dicts[k])
    if args.x_csv:
        xs = load_csv(args.x_csv)
        if xs.shape[1] != cost.x_dim:
            print(f"error: input CSV has dimension {xs.shape[1]}, cost expects {cost.x_dim}", file=sys.stderr)
            return 2
    else:
        sampler = sampler_from_dict(ckpt.source_dicts[k])
        xs = sampler.draw(args.n_points, rngstream.child_rng(args.seed or 0, rngstream.SAMPLE, 0, k))
    ula = _inference_ula(ckpt, args)
    header = [f"x{i}" for i in range(xs.shape[1])] + [f"y{i}" for i in range(ckpt.ambient_dim)]
    rows = []
    if args.n_per_point > 0:
        rep = np.repeat(xs, args.n_per_point, axis=0)
        try:
            ys = ula_sample(ckpt.potentials, k, cost, rep, ula, seed=_sample_seed(args.seed or 0, k))
        except DivergenceError as e:
            print(f"numerical abort: {e}", file=sys.stderr)
            return 3
        rows = [[_fmt(v) for v in np.concatenate([x, y])] for x, y in zip(rep, ys)]
    _write_csv(Path(args.out_csv), header, rows)
    print(f"wrote {len(rows)} plan samples to {args.out_csv}")
    return 0


def _sample_seed(seed: int, k: int) -> int:
    return int(rngstream.child_sequence(seed, rngstream.SAMPLE, 1, k).generate_state(2, dtype=np.uint64)[0])


def _rebuild_problem(ckpt) -> BarycenterProblem:
    return BarycenterProblem(
        sources=[sampler_from_dict(d) for d in ckpt.source_dicts],
        costs=[cost_from_dict(d) for d in ckpt.cost_dicts],
        weights=ckpt.potentials.weights,
        epsilon=ckpt.epsilon,
    )


def _eval_moments(ckpt, problem, eval_spec, seed, rows):
    pooled = []
    per_source = max(1, eval_spec["pooled_samples"] // problem.k_count)
    ula = UlaConfig(
        steps=eval_spec["ula_steps"],
        step_size=eval_spec["ula_sqrt_step"] ** 2,
        epsilon=ckpt.epsilon,
        manifold=ckpt.train_config["ula"]["manifold"],
    )
    for k in range(problem.k_count):
        xs = problem.sources[k].draw(per_source, rngstream.child_rng(seed, rngstream.EVAL, 0, k))
        ys = ula_sample(ckpt.potentials, k, problem.costs[k], xs, ula, seed=_sample_seed(seed + 1, k))
        pooled.append(ys)
    pooled = np.concatenate(pooled, axis=0)
    mean, cov = moment_diag(pooled)
    rows.append(["pooled_mean_norm", _fmt(np.linalg.norm(mean)), f"n={pooled.shape[0]}"])
    rows.append(["pooled_cov_eye_fro", _fmt(np.linalg.norm(cov - np.eye(cov.shape[0]), ord="fro")), "vs identity"])
    for i, v in enumerate(mean):
        rows.append([f"pooled_mean_{i}", _fmt(v), ""])
    for i in range(cov.shape[0]):
        for j in range(cov.shape[1]):
            rows.append([f"pooled_cov_{i}{j}", _fmt(cov[i, j]), ""])
    return pooled


class MissingOracleError(RuntimeError):
    """The requested metric needs a ground-truth oracle this problem lacks."""


def _eval_l2_uvp(ckpt, problem, eval_spec, seed, rows):
    specs = []
    for d in ckpt.source_dicts:
        if d.get("source") != "gaussian":
            raise MissingOracleError("l2_uvp needs Gaussian sources for the fixed-point oracle")
        specs.append(GaussianSpec(np.asarray(d["mean"]), np.asarray(d["covariance"])))
    bary = gaussian_fixed_point(specs, ckpt.potentials.weights)
    q_var = float(np.trace(bary.covariance))
    ula = UlaConfig(
        steps=eval_spec["ula_steps"],
        step_size=eval_spec["ula_sqrt_step"] ** 2,
        epsilon=ckpt.epsilon,
    )
    total = 0.0
    for k, spec in enumerate(specs):
        xs = problem.sources[k].draw(eval_spec["n_x"], rngstream.child_rng(seed, rngstream.EVAL, 1, k))
        t_hat = barycentric_projection_batch(
            ckpt.potentials,
            k,
            problem.costs[k],
            xs,
            eval_spec["n_samples_per_x"],
            ula,
            seed=_sample_seed(seed + 2, k),
        )
        a, b = gaussian_ot_map(spec, bary)
        t_star = apply_affine_map(a, b, spec.mean, xs)
        val = l2_uvp(t_hat, t_star, q_var)
        rows.append([f"l2_uvp_{k}", _fmt(val), f"n_x={eval_spec['n_x']}"])
        total += ckpt.potentials.weights[k] * val
    rows.append(["l2_uvp_weighted", _fmt(total), "lambda-weighted average"])


def _eval_dual_gap(ckpt, problem, eval_spec, seed, rows):
    dim = problem.ambient_dim
    if dim == 1:
        grid = regular_grid_1d(eval_spec["grid_lo"], eval_spec["grid_hi"], eval_spec["grid_m"])
    elif dim == 2:
        m = min(eval_spec["grid_m"], 100)
        grid = regular_grid_2d(eval_spec["grid_lo"], eval_spec["grid_hi"], m)
    else:
        raise MissingOracleError("dual_gap's grid oracle needs ambient dimension <= 2")
    sources = [
        problem.sources[k].draw(eval_spec["n_x"], rngstream.child_rng(seed, rngstream.EVAL, 2, k))
        for k in range(problem.k_count)
    ]
    result = grid_dual_ascent(
        sources, grid, problem.costs, problem.weights, problem.epsilon, tol=1e-8
    )
    from .eotcore import dual_value_grid

    f_grids = potentials_on_grid(ckpt.potentials, grid)
    l_hat = dual_value_grid(f_grids, problem, grid, sources)
    gap, kl_bound = dual_gap(result.dual_value, l_hat, problem.epsilon)
    rows.append(["dual_gap", _fmt(gap), f"grid M={grid.m_count}"])
    rows.append(["kl_bound", _fmt(kl_bound), "gap / epsilon"])


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = load_config(args.config, args.override) if args.config else None
    eval_spec = cfg.eval_spec if cfg else {
        "metrics": ["moments"],
        "n_x": 500,
        "n_samples_per_x": 64,
        "pooled_samples": 6000,
        "ula_steps": int(ckpt.train_config["ula"]["steps"]),
        "ula_sqrt_step": float(ckpt.train_config["ula"]["step_size"]) ** 0.5,
        "grid_lo": -6.0,
        "grid_hi": 6.0,
        "grid_m": 200,
    }
    seed = args.seed if args.seed is not None else ckpt.seed
    problem = _rebuild_problem(ckpt)
    rows: list[list[str]] = []
    try:
        if "moments" in eval_spec["metrics"]:
            _eval_moments(ckpt, problem, eval_spec, seed, rows)
        if "l2_uvp" in eval_spec["metrics"]:
            _eval_l2_uvp(ckpt, problem, eval_spec, seed, rows)
        if "dual_gap" in eval_spec["metrics"]:
            _eval_dual_gap(ckpt, problem, eval_spec, seed, rows)
    except DivergenceError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3
    except MissingOracleError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "metrics.csv"
    _write_csv(out, ["metric", "value", "details"], rows)
    for metric, value, details in rows:
        print(f"{metric} = {value}  {details}")
    print(f"wrote {out}")
    return 0


def cmd_oracle(args) -> int:
    cfg = load_config(args.config, args.override)
    out_dir = Path(args.out) if args.out else cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    kind = cfg.problem_kind
    try:
        if kind == "gaussians":
            specs = [GaussianSpec(np.asarray(d["mean"]), np.asarray(d["covariance"])) for d in cfg.resolved["problem"]["sources"]]
            bary = gaussian_fixed_point(specs, cfg.problem.weights)
            _write_csv(out_dir / "oracle_barycenter_mean.csv", [f"x{i}" for i in range(bary.dim)], [[_fmt(v) for v in bary.mean]])
            _write_csv(out_dir / "oracle_barycenter_cov.csv", [f"x{i}" for i in range(bary.dim)], [[_fmt(v) for v in row] for row in bary.covariance])
            print(f"fixed-point barycenter stored in {out_dir}")
        elif kind == "twister":
            pre, bary = twister_reference(cfg.resolved["problem"]["sources"][0].get("variant", "symmetric"))
            rows = [[str(i)] + [_fmt(v) for v in s.mean] for i, s in enumerate(pre)]
            _write_csv(out_dir / "oracle_twister_preimage_means.csv", ["k", "x0", "x1"], rows)
            _write_csv(out_dir / "oracle_barycenter_mean.csv", ["x0", "x1"], [[_fmt(v) for v in bary.mean]])
            _write_csv(out_dir / "oracle_barycenter_cov.csv", ["x0", "x1"], [[_fmt(v) for v in row] for row in bary.covariance])
            print(f"comet reference stored in {out_dir}")
        else:
            dim = cfg.problem.ambient_dim
            ev = cfg.eval_spec
            if dim == 1:
                grid = regular_grid_1d(ev["grid_lo"], ev["grid_hi"], ev["grid_m"])
            elif dim == 2:
                grid = regular_grid_2d(ev["grid_lo"], ev["grid_hi"], min(ev["grid_m"], 100))
            else:
                print("error: grid oracle needs dimension <= 2", file=sys.stderr)
                return 2
            sources = [
                cfg.problem.sources[k].draw(ev["n_x"], rngstream.child_rng(cfg.seed, rngstream.EVAL, 2, k))
                for k in range(cfg.problem.k_count)
            ]
            result = grid_dual_ascent(sources, grid, cfg.problem.costs, cfg.problem.weights, cfg.problem.epsilon, tol=1e-8)
            header = [f"y{i}" for i in range(grid.dim)] + [f"f{k}" for k in range(cfg.problem.k_count)] + ["q_star"]
            rows = [
                [_fmt(v) for v in grid.points[j]]
                + [_fmt(result.f_tables[k, j]) for k in range(cfg.problem.k_count)]
                + [_fmt(result.barycenter_weights[j])]
                for j in range(grid.m_count)
            ]
            _write_csv(out_dir / "oracle_grid.csv", header, rows)
            atomic_write_bytes(
                out_dir / "oracle_grid.json",
                json.dumps(
                    {
                        "dual_value": result.dual_value,
                        "grad_sup_norm": result.grad_sup_norm,
                        "n_iter": result.n_iter,
                        "m_count": grid.m_count,
                        "cell_weight": grid.cell_weight,
                    },
                    sort_keys=True,
                    indent=2,
                ).encode(),
            )
            print(f"grid oracle stored in {out_dir} (L* = {result.dual_value:.9f})")
    except RuntimeError as e:
        print(f"oracle convergence failure: {e}", file=sys.stderr)
        return 4
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="baryforge", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"baryforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training config end to end")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_train.add_argument("--out", default=None, help="output directory (default: io.out_dir)")
    p_train.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VAL")
    p_train.set_defaults(fn=cmd_train)

    p_sample = sub.add_parser("sample", help="draw conditional-plan samples from a checkpoint")
    p_sample.add_argument("--checkpoint", required=True)
    p_sample.add_argument("--k", type=int, required=True, help="source index (0-based)")
    p_sample.add_argument("--x-csv", default=None, help="CSV of source points; default draws from the stored source")
    p_sample.add_argument("--n-points", type=int, default=256, help="source draws when no CSV is given")
    p_sample.add_argument("--n-per-point", type=int, default=1)
    p_sample.add_argument("--ula-steps", type=int, default=None)
    p_sample.add_argument("--ula-sqrt-step", type=float, default=None)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--out-csv", required=True)
    p_sample.set_defaults(fn=cmd_sample)

    p_eval = sub.add_parser("eval", help="run the metric suite against a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", default=None, help="config providing the [eval] block")
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--out", default=None, help="metrics CSV path")
    p_eval.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VAL")
    p_eval.set_defaults(fn=cmd_eval)

    p_oracle = sub.add_parser("oracle", help="compute ground-truth artifacts for a config")
    p_oracle.add_argument("--config", required=True)
    p_oracle.add_argument("--out", default=None)
    p_oracle.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VAL")
    p_oracle.set_defaults(fn=cmd_oracle)

    p_self = sub.add_parser("selftest", help="fast invariant suite")
    p_self.set_defaults(fn=lambda args: run_selftest())

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
