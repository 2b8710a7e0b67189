"""Transport cost functions c(x, y) with exact gradients in y.

Kinds
-----
- squared Euclidean           c(x, y) = 1/2 ||x - y||^2
- twisted                     c(x, y) = 1/2 ||u(x) - u(y)||^2 with u the
                              norm-angle rotation map below
- squared sphere geodesic     c(x, y) = 1/2 arccos^2 <x, y> on the unit sphere
- feature quadratic           c(x, y) = 1/2 ||u(x) - v(y)||^2 for fixed
                              feature maps (identity / twister / decoder nets)
- generator composed          c(x, z) = c_base(x, G(z)) where z is a latent
                              point and G a frozen vector-output decoder

All gradients are analytic; the arccos pole is defused by clamping the
inner product to [-1 + POLE_CLAMP, 1 - POLE_CLAMP] before differentiation
(bias O(sqrt(clamp)), keeps Langevin drift finite near antipodes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nnet import VectorNetParams, vec_forward_batch, vec_jacobian_batch

POLE_CLAMP = 1e-9
UNIT_NORM_TOL = 1e-9


def twister_u(x: np.ndarray) -> np.ndarray:
    """Rotate 2D points counter-clockwise by an angle equal to their norm.

    Accepts a single point (2,) or a batch (B, 2); preserves norms.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if pts.shape[-1] != 2:
        raise ValueError("twister map is defined on R^2")
    r = np.linalg.norm(pts, axis=1)
    c, s = np.cos(r), np.sin(r)
    out = np.stack([c * pts[:, 0] - s * pts[:, 1], s * pts[:, 0] + c * pts[:, 1]], axis=1)
    return out[0] if single else out


def twister_u_inv(x: np.ndarray) -> np.ndarray:
    """Inverse of twister_u: rotate clockwise by the (preserved) norm."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if pts.shape[-1] != 2:
        raise ValueError("twister map is defined on R^2")
    r = np.linalg.norm(pts, axis=1)
    c, s = np.cos(r), np.sin(r)
    out = np.stack([c * pts[:, 0] + s * pts[:, 1], -s * pts[:, 0] + c * pts[:, 1]], axis=1)
    return out[0] if single else out


def _twister_jacobian(pts: np.ndarray) -> np.ndarray:
    """Row-wise Jacobians of twister_u, shape (B, 2, 2).

    d u / d y = R(r) + R'(r) y (y/r)^T, with the dyad vanishing as r -> 0.
    """
    r = np.linalg.norm(pts, axis=1)
    c, s = np.cos(r), np.sin(r)
    jac = np.zeros((pts.shape[0], 2, 2))
    jac[:, 0, 0] = c
    jac[:, 0, 1] = -s
    jac[:, 1, 0] = s
    jac[:, 1, 1] = c
    safe_r = np.where(r > 1e-300, r, 1.0)
    yhat = pts / safe_r[:, None]
    rot_deriv = np.stack([-s * pts[:, 0] - c * pts[:, 1], c * pts[:, 0] - s * pts[:, 1]], axis=1)
    jac += np.where(r[:, None, None] > 1e-300, rot_deriv[:, :, None] * yhat[:, None, :], 0.0)
    return jac


class FeatureMap:
    """A differentiable map used inside quadratic feature costs."""

    in_dim: int
    out_dim: int

    def apply(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass
class IdentityMap(FeatureMap):
    dim: int

    @property
    def in_dim(self):
        return self.dim

    @property
    def out_dim(self):
        return self.dim

    def apply(self, pts):
        return np.asarray(pts, dtype=np.float64)

    def jacobian(self, pts):
        return np.broadcast_to(np.eye(self.dim), (pts.shape[0], self.dim, self.dim))

    def to_dict(self):
        return {"map": "identity", "dim": self.dim}


@dataclass
class TwisterMap(FeatureMap):
    in_dim: int = 2
    out_dim: int = 2

    def apply(self, pts):
        return twister_u(pts)

    def jacobian(self, pts):
        return _twister_jacobian(np.asarray(pts, dtype=np.float64))

    def to_dict(self):
        return {"map": "twister"}


@dataclass
class NetMap(FeatureMap):
    """Frozen vector-output net as a feature map / decoder."""

    net: VectorNetParams

    @property
    def in_dim(self):
        return self.net.spec.input_dim

    @property
    def out_dim(self):
        return self.net.spec.output_dim

    def apply(self, pts):
        return vec_forward_batch(self.net, pts)

    def jacobian(self, pts):
        return vec_jacobian_batch(self.net, pts)

    def to_dict(self):
        return {
            "map": "net",
            "input_dim": self.net.spec.input_dim,
            "hidden": list(self.net.spec.hidden_widths),
            "output_dim": self.net.spec.output_dim,
            "activation": self.net.spec.activation.value,
            "weights": [float(w) for w in self.net.weights],
        }


def feature_map_from_dict(d: dict) -> FeatureMap:
    kind = d["map"]
    if kind == "identity":
        return IdentityMap(int(d["dim"]))
    if kind == "twister":
        return TwisterMap()
    if kind == "net":
        from .nnet import Activation, VectorNetSpec

        spec = VectorNetSpec(
            int(d["input_dim"]),
            tuple(d["hidden"]),
            int(d["output_dim"]),
            Activation(d["activation"]),
        )
        return NetMap(VectorNetParams(spec, np.asarray(d["weights"], dtype=np.float64)))
    raise ValueError(f"unknown feature map {kind!r}")


@dataclass
class CostFn:
    """Tagged cost family; construct through the sq_euclid / twisted / ... helpers."""

    kind: str
    x_dim: int
    y_dim: int
    u_map: FeatureMap | None = None
    v_map: FeatureMap | None = None
    base: "CostFn | None" = None
    decoder: FeatureMap | None = None

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "x_dim": self.x_dim, "y_dim": self.y_dim}
        if self.u_map is not None:
            d["u_map"] = self.u_map.to_dict()
        if self.v_map is not None:
            d["v_map"] = self.v_map.to_dict()
        if self.base is not None:
            d["base"] = self.base.to_dict()
        if self.decoder is not None:
            d["decoder"] = self.decoder.to_dict()
        return d


def cost_from_dict(d: dict) -> CostFn:
    kind = d["kind"]
    if kind == "sq_euclid":
        return sq_euclid(int(d["x_dim"]))
    if kind == "twisted":
        return twisted()
    if kind == "sphere_geodesic_sq":
        return sphere_geodesic_sq()
    if kind == "feature_quadratic":
        return feature_quadratic(feature_map_from_dict(d["u_map"]), feature_map_from_dict(d["v_map"]))
    if kind == "generator_composed":
        return generator_composed(cost_from_dict(d["base"]), feature_map_from_dict(d["decoder"]))
    raise ValueError(f"unknown cost kind {kind!r}")


def sq_euclid(dim: int) -> CostFn:
    return CostFn("sq_euclid", dim, dim)


def twisted() -> CostFn:
    return CostFn("twisted", 2, 2)


def sphere_geodesic_sq() -> CostFn:
    return CostFn("sphere_geodesic_sq", 3, 3)


def feature_quadratic(u_map: FeatureMap, v_map: FeatureMap) -> CostFn:
    if u_map.out_dim != v_map.out_dim:
        raise ValueError("feature maps must share their output dimension")
    return CostFn("feature_quadratic", u_map.in_dim, v_map.in_dim, u_map=u_map, v_map=v_map)


def generator_composed(base: CostFn, decoder: FeatureMap) -> CostFn:
    """Cost in latent space: c(x, z) = base(x, G(z)) with G a frozen decoder."""
    if decoder.out_dim != base.y_dim:
        raise ValueError("decoder output dimension must match the base cost's y dimension")
    return CostFn("generator_composed", base.x_dim, decoder.in_dim, base=base, decoder=decoder)


def _check_pair_shapes(c: CostFn, xs: np.ndarray, ys: np.ndarray):
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if xs.shape[1] != c.x_dim:
        raise ValueError(f"x has dimension {xs.shape[1]}, cost expects {c.x_dim}")
    if ys.shape[1] != c.y_dim:
        raise ValueError(f"y has dimension {ys.shape[1]}, cost expects {c.y_dim}")
    if xs.shape[0] != ys.shape[0]:
        if xs.shape[0] == 1:
            xs = np.broadcast_to(xs, (ys.shape[0], xs.shape[1]))
        elif ys.shape[0] == 1:
            ys = np.broadcast_to(ys, (xs.shape[0], ys.shape[1]))
        else:
            raise ValueError("x and y batches must have matching lengths")
    return xs, ys


def _check_sphere(pts: np.ndarray, name: str):
    norms = np.linalg.norm(pts, axis=1)
    bad = np.abs(norms - 1.0) > UNIT_NORM_TOL
    if np.any(bad):
        raise ValueError(f"{name} must be unit-norm for the sphere cost (max |norm-1| = {np.abs(norms - 1.0).max():.3e})")


def _sphere_inner(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    t = np.sum(xs * ys, axis=1)
    if np.any(np.abs(t) > 1.0 + UNIT_NORM_TOL):
        raise ValueError("inner product left [-1, 1] beyond tolerance")
    return t


def cost_eval_pairs(c: CostFn, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Row-wise cost values c(x_i, y_i), shape (B,)."""
    xs, ys = _check_pair_shapes(c, xs, ys)
    if c.kind == "sq_euclid":
        d = xs - ys
        return 0.5 * np.sum(d * d, axis=1)
    if c.kind == "twisted":
        d = twister_u(xs) - twister_u(ys)
        return 0.5 * np.sum(d * d, axis=1)
    if c.kind == "sphere_geodesic_sq":
        _check_sphere(xs, "x")
        _check_sphere(ys, "y")
        t = np.clip(_sphere_inner(xs, ys), -1.0, 1.0)
        return 0.5 * np.arccos(t) ** 2
    if c.kind == "feature_quadratic":
        d = c.u_map.apply(xs) - c.v_map.apply(ys)
        return 0.5 * np.sum(d * d, axis=1)
    if c.kind == "generator_composed":
        return cost_eval_pairs(c.base, xs, c.decoder.apply(ys))
    raise ValueError(f"unknown cost kind {c.kind!r}")


def cost_grad_y_pairs(c: CostFn, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Row-wise gradients d c(x_i, y) / d y at y_i, shape (B, y_dim)."""
    xs, ys = _check_pair_shapes(c, xs, ys)
    if c.kind == "sq_euclid":
        return ys - xs
    if c.kind == "twisted":
        diff = twister_u(ys) - twister_u(xs)
        return np.einsum("boi,bo->bi", _twister_jacobian(ys), diff)
    if c.kind == "sphere_geodesic_sq":
        _check_sphere(xs, "x")
        _check_sphere(ys, "y")
        t = np.clip(_sphere_inner(xs, ys), -1.0 + POLE_CLAMP, 1.0 - POLE_CLAMP)
        coef = -np.arccos(t) / np.sqrt(1.0 - t * t)
        return coef[:, None] * xs
    if c.kind == "feature_quadratic":
        diff = c.v_map.apply(ys) - c.u_map.apply(xs)
        return np.einsum("boi,bo->bi", c.v_map.jacobian(ys), diff)
    if c.kind == "generator_composed":
        inner = cost_grad_y_pairs(c.base, xs, c.decoder.apply(ys))
        return np.einsum("boi,bo->bi", c.decoder.jacobian(ys), inner)
    raise ValueError(f"unknown cost kind {c.kind!r}")


def cost_eval(c: CostFn, x: np.ndarray, y: np.ndarray) -> float:
    """Cost of a single pair."""
    return float(cost_eval_pairs(c, np.asarray(x)[None, :], np.asarray(y)[None, :])[0])


def cost_grad_y(c: CostFn, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient in y of a single pair."""
    return cost_grad_y_pairs(c, np.asarray(x)[None, :], np.asarray(y)[None, :])[0]


def cost_cross(c: CostFn, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Full cost matrix c(x_n, y_m), shape (N, M); used by grid quadrature."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if c.kind == "sq_euclid":
        d = xs[:, None, :] - ys[None, :, :]
        return 0.5 * np.sum(d * d, axis=2)
    if c.kind == "twisted":
        u, v = twister_u(xs), twister_u(ys)
        d = u[:, None, :] - v[None, :, :]
        return 0.5 * np.sum(d * d, axis=2)
    if c.kind == "sphere_geodesic_sq":
        _check_sphere(xs, "x")
        _check_sphere(ys, "y")
        t = np.clip(xs @ ys.T, -1.0, 1.0)
        return 0.5 * np.arccos(t) ** 2
    if c.kind == "feature_quadratic":
        u, v = c.u_map.apply(xs), c.v_map.apply(ys)
        d = u[:, None, :] - v[None, :, :]
        return 0.5 * np.sum(d * d, axis=2)
    if c.kind == "generator_composed":
        return cost_cross(c.base, xs, c.decoder.apply(ys))
    raise ValueError(f"unknown cost kind {c.kind!r}")
