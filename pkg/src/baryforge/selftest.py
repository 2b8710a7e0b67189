"""Fast invariant suite behind the `selftest` CLI command.

Each check is an executable property with an independent reference
(closed form, finite differences, or exhaustive sweep).  The whole suite
is sized to run in well under five minutes on one CPU; the full pytest
suite covers the same ground more exhaustively.
"""

from __future__ import annotations

import numpy as np

from . import costs as costs_mod
from . import eotcore
from . import nnet
from .congruent import CongruentPotentials, congruence_residual
from .eotcore import BarycenterProblem, c_transform_grid, regular_grid_1d
from .langevin import UlaConfig, ula_sample


def _rand_net(rng, dim=2, hidden=(4, 3)):
    spec = nnet.NetSpec(dim, hidden)
    p = nnet.net_init(spec, int(rng.integers(0, 2**31)))
    p.weights = p.weights + 0.3 * rng.standard_normal(p.weights.shape)
    return p


def check_ctransform_properties(n_instances=150, seed=0):
    """Monotonicity, constant additivity, concavity, sup-norm continuity on random grids."""
    rng = np.random.default_rng(seed)
    cost = costs_mod.sq_euclid(1)
    worst_add = 0.0
    for _ in range(n_instances):
        grid = regular_grid_1d(-4.0, 4.0, int(rng.integers(8, 40)))
        eps = float(10.0 ** rng.uniform(-2, 0.5))
        x = rng.uniform(-2, 2, size=1)
        f1 = rng.normal(0, 1, grid.m_count)
        f2 = f1 + np.abs(rng.normal(0, 1, grid.m_count))
        v1 = c_transform_grid(f1, cost, x, eps, grid)
        v2 = c_transform_grid(f2, cost, x, eps, grid)
        if v1 < v2 - 1e-12:
            return False, f"monotonicity violated: {v1} < {v2}"
        a = float(rng.normal(0, 2))
        shifted = c_transform_grid(f1 + a, cost, x, eps, grid)
        worst_add = max(worst_add, abs(shifted - (v1 - a)))
        lam = float(rng.uniform())
        mix = c_transform_grid(lam * f1 + (1 - lam) * f2, cost, x, eps, grid)
        if mix < lam * v1 + (1 - lam) * v2 - 1e-10:
            return False, "concavity violated"
        g = f1 + rng.normal(0, 0.5, grid.m_count)
        vg = c_transform_grid(g, cost, x, eps, grid)
        if abs(v1 - vg) > np.max(np.abs(f1 - g)) + 1e-10:
            return False, "sup-norm continuity violated"
    if worst_add > 1e-9:
        return False, f"constant additivity error {worst_add:.2e} > 1e-9"
    return True, f"{n_instances} instances, additivity error {worst_add:.2e}"


def check_net_gradients(n_nets=6, seed=1):
    """Analytic input/parameter gradients vs central finite differences."""
    rng = np.random.default_rng(seed)
    h = 1e-5
    for _ in range(n_nets):
        p = _rand_net(rng)
        y = rng.normal(size=2)
        g = nnet.net_grad_input(p, y)
        fd = np.array(
            [
                (nnet.net_forward(p, y + h * e) - nnet.net_forward(p, y - h * e)) / (2 * h)
                for e in np.eye(2)
            ]
        )
        if np.linalg.norm(g - fd) > 1e-6 * max(1.0, np.linalg.norm(fd)):
            return False, "input gradient mismatch vs finite differences"
        gp = nnet.net_grad_params(p, y)
        fdp = np.empty_like(gp)
        for i in range(gp.size):
            w0 = p.weights[i]
            p.weights[i] = w0 + h
            hi = nnet.net_forward(p, y)
            p.weights[i] = w0 - h
            lo = nnet.net_forward(p, y)
            p.weights[i] = w0
            fdp[i] = (hi - lo) / (2 * h)
        if np.linalg.norm(gp - fdp) > 1e-6 * max(1.0, np.linalg.norm(fdp)):
            return False, "parameter gradient mismatch vs finite differences"
    return True, f"{n_nets} random nets within 1e-6 of finite differences"


def check_cost_gradients(seed=2):
    """Every cost kind's y-gradient vs central finite differences."""
    rng = np.random.default_rng(seed)
    h = 1e-6
    cases = [
        (costs_mod.sq_euclid(3), rng.normal(size=3), rng.normal(size=3)),
        (costs_mod.twisted(), rng.normal(size=2), rng.normal(size=2)),
    ]
    x = rng.normal(size=3)
    y = rng.normal(size=3)
    cases.append((costs_mod.sphere_geodesic_sq(), x / np.linalg.norm(x), y / np.linalg.norm(y)))
    for cost, cx, cy in cases:
        g = costs_mod.cost_grad_y(cost, cx, cy)
        fd = np.empty_like(g)
        for i in range(g.size):
            e = np.zeros_like(cy)
            e[i] = h
            yp, ym = cy + e, cy - e
            if cost.kind == "sphere_geodesic_sq":
                yp, ym = yp / np.linalg.norm(yp), ym / np.linalg.norm(ym)
            fd[i] = (costs_mod.cost_eval(cost, cx, yp) - costs_mod.cost_eval(cost, cx, ym)) / (2 * h)
        if cost.kind == "sphere_geodesic_sq":
            # Compare tangential components: the renormalized step only probes the sphere.
            proj = np.eye(3) - np.outer(cy, cy)
            g, fd = proj @ g, proj @ fd
        if np.linalg.norm(g - fd) > 1e-5 * max(1.0, np.linalg.norm(fd)):
            return False, f"{cost.kind} gradient mismatch vs finite differences"
    return True, "all cost kinds within tolerance of finite differences"


def check_congruence_sweep(n_points=2000, seed=3):
    """sum_k lambda_k f_k = 0 as a floating-point identity on random points."""
    rng = np.random.default_rng(seed)
    nets = [_rand_net(rng, dim=2, hidden=(8, 6)) for _ in range(3)]
    ps = CongruentPotentials(nets, np.array([0.25, 0.25, 0.5]))
    pts = rng.normal(0, 3, size=(n_points, 2))
    resid = congruence_residual(ps, pts)
    if resid > 1e-9:
        return False, f"congruence residual {resid:.2e} > 1e-9"
    return True, f"max residual {resid:.2e} over {n_points} points"


def check_dual_gradient_assembly(seed=4):
    """Assembled dual gradient vs finite differences of the exact grid objective."""
    rng = np.random.default_rng(seed)
    grid = regular_grid_1d(-5.0, 5.0, 60)
    nets = [_rand_net(rng, dim=1, hidden=(3,)) for _ in range(2)]
    ps = CongruentPotentials(nets, np.array([0.5, 0.5]))
    xs = [rng.normal(-1, 0.7, size=(6, 1)), rng.normal(1, 0.7, size=(6, 1))]
    problem = BarycenterProblem(
        sources=[None, None],
        costs=[costs_mod.sq_euclid(1), costs_mod.sq_euclid(1)],
        weights=np.array([0.5, 0.5]),
        epsilon=0.5,
    )
    grads = eotcore.loss_grad_grid(ps, problem, xs, grid)
    h = 1e-6
    for j, net in enumerate(ps.nets):
        for i in range(0, net.weights.size, max(1, net.weights.size // 5)):
            w0 = net.weights[i]
            net.weights[i] = w0 + h
            hi = eotcore.dual_value_grid(ps.eval_all(grid.points), problem, grid, xs)
            net.weights[i] = w0 - h
            lo = eotcore.dual_value_grid(ps.eval_all(grid.points), problem, grid, xs)
            net.weights[i] = w0
            fd = (hi - lo) / (2 * h)
            if abs(grads[j][i] - fd) > 1e-6 * max(1.0, abs(fd)):
                return False, f"gradient assembly mismatch at net {j} param {i}: {grads[j][i]} vs {fd}"
    return True, "grid-mode gradient matches finite differences"


def check_ula_gaussian_moments(seed=5):
    """Chains targeting the closed-form Gaussian conditional land on its moments."""
    rng = np.random.default_rng(seed)
    eps = 0.5
    nets = [nnet.net_init(nnet.NetSpec(2, (3,)), 0)]
    nets[0].weights[:] = 0.0
    ps = CongruentPotentials(nets, np.array([1.0]))
    x = np.array([1.0, -0.5])
    n = 2000
    cfg = UlaConfig(steps=500, step_size=0.01, epsilon=eps)
    ys = ula_sample(ps, 0, costs_mod.sq_euclid(2), np.repeat(x[None, :], n, axis=0), cfg, seed=int(rng.integers(2**31)))
    mean_err = np.abs(ys.mean(axis=0) - x)
    se = np.sqrt(eps / n)
    if np.any(mean_err > 3.0 * se + 0.01):
        return False, f"ULA mean off target: err {mean_err}"
    cov = np.cov(ys, rowvar=False)
    if np.max(np.abs(cov - eps * np.eye(2))) > 0.15 * eps:
        return False, f"ULA covariance off target:\n{cov}"
    return True, "Gaussian conditional moments reproduced"


CHECKS = [
    ("ctransform_properties", check_ctransform_properties),
    ("net_gradients", check_net_gradients),
    ("cost_gradients", check_cost_gradients),
    ("congruence_sweep", check_congruence_sweep),
    ("dual_gradient_assembly", check_dual_gradient_assembly),
    ("ula_gaussian_moments", check_ula_gaussian_moments),
]


def run_selftest(log=print) -> int:
    """Run every check; returns 0 iff all pass; prints one line per property."""
    failures = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as e:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(e).__name__}: {e}"
        log(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        if not ok:
            failures.append(name)
    if failures:
        log(f"selftest failed: {', '.join(failures)}")
        return 1
    log("selftest passed")
    return 0
