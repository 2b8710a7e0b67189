import numpy as np
import pytest

from baryforge import costs
from baryforge.langevin import UlaConfig
from baryforge.metrics import (
    barycentric_projection,
    barycentric_projection_batch,
    dual_gap,
    l2_uvp,
    moment_diag,
    tv_on_grid,
)
from helpers import constant_potentials


def test_barycentric_projection_gaussian_target():
    # f = 0 with the quadratic cost: the plan at x is N(x, eps I), so the
    # projection estimates x itself.
    eps = 0.25
    ps = constant_potentials([0.0], [1.0], dim=2)
    ula = UlaConfig(steps=400, step_size=0.01, epsilon=eps)
    x = np.array([0.7, -1.3])
    m = 400
    proj = barycentric_projection(ps, 0, costs.sq_euclid(2), x, m, ula, seed=0)
    tol = 3.0 * np.sqrt(eps * 2 / m) + 0.02
    assert np.linalg.norm(proj - x) < tol


def test_barycentric_projection_single_sample():
    from baryforge.langevin import ula_sample

    ps = constant_potentials([0.0], [1.0], dim=2)
    ula = UlaConfig(steps=20, step_size=0.01, epsilon=0.5)
    x = np.array([0.1, 0.2])
    proj = barycentric_projection(ps, 0, costs.sq_euclid(2), x, 1, ula, seed=5)
    direct = ula_sample(ps, 0, costs.sq_euclid(2), x[None, :], ula, seed=5)[0]
    assert np.array_equal(proj, direct)
    with pytest.raises(ValueError):
        barycentric_projection(ps, 0, costs.sq_euclid(2), x, 0, ula, seed=5)


def test_barycentric_projection_batch_shape():
    ps = constant_potentials([0.0], [1.0], dim=2)
    ula = UlaConfig(steps=10, step_size=0.01, epsilon=0.5)
    xs = np.random.default_rng(0).normal(size=(5, 2))
    out = barycentric_projection_batch(ps, 0, costs.sq_euclid(2), xs, 7, ula, seed=1)
    assert out.shape == (5, 2)


def test_l2_uvp_zero_for_exact_map():
    rng = np.random.default_rng(1)
    t = rng.normal(size=(50, 2))
    assert l2_uvp(t, t, q_variance=2.0) == 0.0


def test_l2_uvp_constant_map_is_100():
    # Mapping everything to the barycenter mean leaves exactly Var(Q)
    # unexplained when T* pushes P onto Q.
    rng = np.random.default_rng(2)
    n = 200_000
    t_star = rng.standard_normal((n, 2))  # pushforward samples of Q = N(0, I)
    t_hat = np.zeros((n, 2))
    val = l2_uvp(t_hat, t_star, q_variance=2.0)
    assert val == pytest.approx(100.0, rel=0.02)


def test_l2_uvp_validation():
    with pytest.raises(ValueError):
        l2_uvp(np.zeros((3, 2)), np.zeros((4, 2)), 1.0)
    with pytest.raises(ValueError):
        l2_uvp(np.zeros((3, 2)), np.zeros((3, 2)), 0.0)


def test_l2_uvp_rotation_invariance():
    rng = np.random.default_rng(3)
    theta = 0.7
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    t_hat = rng.normal(size=(100, 2))
    t_star = rng.normal(size=(100, 2))
    base = l2_uvp(t_hat, t_star, q_variance=3.0)
    rotated = l2_uvp(t_hat @ rot.T, t_star @ rot.T, q_variance=3.0)
    assert rotated == pytest.approx(base, rel=1e-12)


def test_dual_gap_values():
    assert dual_gap(1.0, 1.0, 0.5) == (0.0, 0.0)
    gap, kl = dual_gap(0.51, 0.5, 0.01)
    assert gap == pytest.approx(0.01)
    assert kl == pytest.approx(1.0)
    # Negative gaps pass through untouched.
    gap, kl = dual_gap(0.5, 0.51, 0.1)
    assert gap == pytest.approx(-0.01)


def test_dual_gap_oracle_self_consistency():
    # Plugging the converged tabular optimum back into the dual evaluator
    # reproduces the oracle value.
    from baryforge.eotcore import BarycenterProblem, dual_value_grid, regular_grid_1d
    from baryforge.oracles import grid_dual_ascent

    rng = np.random.default_rng(4)
    xs = [rng.normal(-1, 0.4, size=(30, 1)), rng.normal(1, 0.4, size=(30, 1))]
    grid = regular_grid_1d(-4, 4, 100)
    w = np.array([0.5, 0.5])
    res = grid_dual_ascent(xs, grid, [costs.sq_euclid(1)] * 2, w, epsilon=0.5)
    problem = BarycenterProblem(sources=[None, None], costs=[costs.sq_euclid(1)] * 2, weights=w, epsilon=0.5)
    l_hat = dual_value_grid(res.f_tables, problem, grid, xs)
    gap, _ = dual_gap(res.dual_value, l_hat, 0.5)
    assert abs(gap) < 1e-6


def test_moment_diag_constant_samples():
    samples = np.tile([1.0, 2.0], (10, 1))
    mean, cov = moment_diag(samples)
    assert np.allclose(mean, [1.0, 2.0])
    assert np.allclose(cov, 0.0)


def test_moment_diag_standard_normal():
    rng = np.random.default_rng(5)
    samples = rng.standard_normal((100_000, 2))
    mean, cov = moment_diag(samples)
    assert np.all(np.abs(mean) < 0.02)
    assert np.max(np.abs(cov - np.eye(2))) < 0.05


def test_moment_diag_permutation_invariant():
    rng = np.random.default_rng(6)
    samples = rng.normal(size=(50, 3))
    perm = rng.permutation(50)
    m1, c1 = moment_diag(samples)
    m2, c2 = moment_diag(samples[perm])
    assert np.allclose(m1, m2)
    assert np.allclose(c1, c2)


def test_moment_diag_needs_two_samples():
    with pytest.raises(ValueError):
        moment_diag(np.zeros((1, 2)))


def test_tv_values():
    assert tv_on_grid(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.0
    assert tv_on_grid(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0
    assert tv_on_grid(np.array([0.5, 0.5]), np.array([0.75, 0.25])) == pytest.approx(0.25)


def test_tv_validation():
    with pytest.raises(ValueError):
        tv_on_grid(np.array([0.5, 0.6]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        tv_on_grid(np.array([-0.1, 1.1]), np.array([0.5, 0.5]))


def test_tv_is_a_metric():
    rng = np.random.default_rng(7)
    for _ in range(20):
        a, b, c = rng.dirichlet(np.ones(6), size=3)
        assert tv_on_grid(a, b) == pytest.approx(tv_on_grid(b, a))
        assert tv_on_grid(a, c) <= tv_on_grid(a, b) + tv_on_grid(b, c) + 1e-12
        assert tv_on_grid(a, a) == 0.0
