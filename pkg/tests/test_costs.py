import numpy as np
import pytest

from baryforge import costs, nnet
from helpers import fd_grad, rel_err


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def test_sq_euclid_values():
    c = costs.sq_euclid(2)
    assert costs.cost_eval(c, np.array([1.0, 0.0]), np.zeros(2)) == pytest.approx(0.5)
    assert costs.cost_eval(c, np.zeros(2), np.zeros(2)) == 0.0


def test_sq_euclid_grad_exact():
    c = costs.sq_euclid(2)
    g = costs.cost_grad_y(c, np.array([2.0, 0.0]), np.zeros(2))
    assert np.array_equal(g, np.array([-2.0, 0.0]))


def test_sphere_zero_geodesic():
    c = costs.sphere_geodesic_sq()
    pole = np.array([0.0, 0.0, 1.0])
    assert costs.cost_eval(c, pole, pole) == 0.0


def test_sphere_requires_unit_norm():
    c = costs.sphere_geodesic_sq()
    pole = np.array([0.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        costs.cost_eval(c, 2 * pole, pole)
    with pytest.raises(ValueError):
        costs.cost_eval(c, pole, 0.5 * pole)


def test_sphere_antipodal_gradient_clipped():
    c = costs.sphere_geodesic_sq()
    pole = np.array([0.0, 0.0, 1.0])
    g = costs.cost_grad_y(c, pole, -pole)
    assert np.all(np.isfinite(g))


def test_twisted_zero_at_equal_points():
    c = costs.twisted()
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.normal(size=2)
        assert costs.cost_eval(c, x, x) == pytest.approx(0.0, abs=1e-15)
        assert np.allclose(costs.cost_grad_y(c, x, x), 0.0, atol=1e-14)


def test_twister_map_origin_and_pi():
    assert np.array_equal(costs.twister_u(np.zeros(2)), np.zeros(2))
    # Norm pi point rotates by pi.
    out = costs.twister_u(np.array([np.pi, 0.0]))
    assert np.allclose(out, [-np.pi, 0.0], atol=1e-12)


def test_twister_is_norm_preserving():
    rng = np.random.default_rng(1)
    pts = rng.normal(0, 3, size=(200, 2))
    assert np.max(np.abs(np.linalg.norm(costs.twister_u(pts), axis=1) - np.linalg.norm(pts, axis=1))) < 1e-12
    assert np.max(np.abs(np.linalg.norm(costs.twister_u_inv(pts), axis=1) - np.linalg.norm(pts, axis=1))) < 1e-12


def test_twister_inverse_roundtrip():
    rng = np.random.default_rng(2)
    pts = rng.normal(0, 3, size=(200, 2))
    assert np.max(np.abs(costs.twister_u_inv(costs.twister_u(pts)) - pts)) < 1e-10
    assert np.array_equal(costs.twister_u_inv(np.zeros(2)), np.zeros(2))


def test_twisted_equals_sq_euclid_of_images():
    # Independent evaluation path: map the points first, then take the
    # plain quadratic cost.
    rng = np.random.default_rng(3)
    c_tw = costs.twisted()
    c_sq = costs.sq_euclid(2)
    for _ in range(20):
        x, y = rng.normal(0, 2, size=(2, 2))
        direct = costs.cost_eval(c_tw, x, y)
        via_images = costs.cost_eval(c_sq, costs.twister_u(x), costs.twister_u(y))
        assert direct == pytest.approx(via_images, rel=1e-14)


def test_symmetry():
    rng = np.random.default_rng(4)
    for c in (costs.sq_euclid(3), costs.twisted()):
        for _ in range(10):
            x, y = rng.normal(size=(2, c.x_dim))
            assert costs.cost_eval(c, x, y) == pytest.approx(costs.cost_eval(c, y, x), rel=1e-14)


def test_dimension_mismatch():
    c = costs.sq_euclid(2)
    with pytest.raises(ValueError):
        costs.cost_eval(c, np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        costs.cost_grad_y(c, np.zeros(2), np.zeros(3))


def _feature_quadratic_fixture(rng):
    u_spec = nnet.VectorNetSpec(3, (4,), 2, nnet.Activation.TANH)
    v_spec = nnet.VectorNetSpec(2, (5,), 2, nnet.Activation.SOFTPLUS)
    u = nnet.vec_net_init(u_spec, 1)
    v = nnet.vec_net_init(v_spec, 2)
    u.weights = u.weights + 0.3 * rng.standard_normal(u.weights.shape)
    v.weights = v.weights + 0.3 * rng.standard_normal(v.weights.shape)
    return costs.feature_quadratic(costs.NetMap(u), costs.NetMap(v))


def _generator_fixture(rng):
    dec_spec = nnet.VectorNetSpec(2, (6,), 4, nnet.Activation.SOFTPLUS)
    dec = nnet.vec_net_init(dec_spec, 3)
    dec.weights = dec.weights + 0.3 * rng.standard_normal(dec.weights.shape)
    return costs.generator_composed(costs.sq_euclid(4), costs.NetMap(dec))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    cases = []
    for _ in range(5):
        cases.append((costs.sq_euclid(3), rng.normal(size=3), rng.normal(size=3)))
        cases.append((costs.twisted(), rng.normal(0, 2, size=2), rng.normal(0, 2, size=2)))
        cases.append((_feature_quadratic_fixture(rng), rng.normal(size=3), rng.normal(size=2)))
        cases.append((_generator_fixture(rng), rng.normal(size=4), rng.normal(size=2)))
    for c, x, y in cases:
        fd = fd_grad(lambda v: costs.cost_eval(c, x, v), y)
        assert rel_err(costs.cost_grad_y(c, x, y), fd) < 1e-6


def test_sphere_gradient_matches_finite_differences_tangentially():
    # Probe along the sphere: renormalize perturbed points, compare the
    # tangential component of the ambient gradient.
    rng = np.random.default_rng(6)
    c = costs.sphere_geodesic_sq()
    for _ in range(10):
        x = _unit(rng.normal(size=3))
        y = _unit(rng.normal(size=3))
        if abs(x @ y) > 0.95:
            continue
        g = costs.cost_grad_y(c, x, y)
        h = 1e-6
        fd = np.empty(3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd[i] = (costs.cost_eval(c, x, _unit(y + e)) - costs.cost_eval(c, x, _unit(y - e))) / (2 * h)
        proj = np.eye(3) - np.outer(y, y)
        assert rel_err(proj @ g, proj @ fd) < 1e-5


def test_generator_composed_is_base_after_decoding():
    rng = np.random.default_rng(7)
    c = _generator_fixture(rng)
    x = rng.normal(size=4)
    z = rng.normal(size=2)
    decoded = c.decoder.apply(z[None, :])[0]
    assert costs.cost_eval(c, x, z) == pytest.approx(0.5 * np.sum((x - decoded) ** 2), rel=1e-14)


def test_cost_cross_matches_pairs():
    rng = np.random.default_rng(8)
    c = costs.twisted()
    xs = rng.normal(size=(4, 2))
    ys = rng.normal(size=(3, 2))
    mat = costs.cost_cross(c, xs, ys)
    for i in range(4):
        for j in range(3):
            assert mat[i, j] == pytest.approx(costs.cost_eval(c, xs[i], ys[j]), rel=1e-14)


def test_cost_serialization_roundtrip():
    rng = np.random.default_rng(9)
    for c in (costs.sq_euclid(3), costs.twisted(), costs.sphere_geodesic_sq(), _generator_fixture(rng)):
        back = costs.cost_from_dict(c.to_dict())
        assert back.kind == c.kind
        x = rng.normal(size=back.x_dim)
        y = rng.normal(size=back.y_dim)
        if c.kind == "sphere_geodesic_sq":
            x, y = _unit(x), _unit(y)
        assert costs.cost_eval(back, x, y) == costs.cost_eval(c, x, y)
