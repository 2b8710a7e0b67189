"""Samplers for the source distributions plus CSV dataset ingestion.

Every sampler is a deterministic function of (parameters, rng stream).
Sources are exposed behind a tiny handle protocol -- draw(n, rng) -- so
synthetic generators and empirical CSV datasets are interchangeable in a
barycenter problem; empirical data is resampled with replacement.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .costs import twister_u_inv
from .oracles import GaussianSpec, twister_reference


def sample_gaussian(spec: GaussianSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """n draws of N(mean, cov) via the Cholesky factor: x = m + L z."""
    if n < 1:
        raise ValueError("need n >= 1")
    chol = np.linalg.cholesky(spec.covariance)
    z = rng.standard_normal((n, spec.dim))
    return spec.mean[None, :] + z @ chol.T


def sample_twister_comet(k: int, n: int, rng: np.random.Generator, variant: str = "symmetric") -> np.ndarray:
    """Comet k in {0, 1, 2}: a unit Gaussian pre-image pulled back through the twister map."""
    if k not in (0, 1, 2):
        raise ValueError("comet index must be 0, 1 or 2")
    pre_images, _ = twister_reference(variant)
    g = sample_gaussian(pre_images[k], n, rng)
    return twister_u_inv(g)


def sample_vonmises_sphere(mu: np.ndarray, kappa: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """von Mises-Fisher samples on the 2-sphere.

    Draws the cosine of the polar angle by exact inverse-CDF,
    w = 1 + log(u + (1 - u) e^{-2 kappa}) / kappa, pairs it with a uniform
    azimuth, and rotates the frame so the pole lands on mu.
    """
    mu = np.asarray(mu, dtype=np.float64).ravel()
    if mu.shape != (3,) or abs(np.linalg.norm(mu) - 1.0) > 1e-9:
        raise ValueError("mu must be a unit 3-vector")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    u = rng.random(n)
    w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    phi = rng.random(n) * 2.0 * np.pi
    s = np.sqrt(np.maximum(1.0 - w * w, 0.0))
    pts = np.stack([s * np.cos(phi), s * np.sin(phi), w], axis=1)

    pole = np.array([0.0, 0.0, 1.0])
    if np.allclose(mu, pole, atol=1e-12):
        rot = np.eye(3)
    elif np.allclose(mu, -pole, atol=1e-12):
        rot = np.diag([1.0, -1.0, -1.0])
    else:
        v = np.cross(pole, mu)
        c = float(pole @ mu)
        vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
        rot = np.eye(3) + vx + vx @ vx / (1.0 + c)
    out = pts @ rot.T
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def load_csv(path) -> np.ndarray:
    """Read a rectangular numeric CSV with an x0,x1,... header into (N, D) samples."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        width = len(header)
        rows = []
        for i, row in enumerate(reader, start=2):
            if len(row) != width:
                raise ValueError(f"{path}: ragged row at line {i}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}: non-numeric cell at line {i}") from None
    if not rows:
        raise ValueError(f"{path}: empty dataset")
    return np.asarray(rows, dtype=np.float64)


def save_csv(path, samples: np.ndarray, header: list[str] | None = None) -> None:
    """Write samples as CSV with an x0,x1,... header (re-readable by load_csv)."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if header is None:
        header = [f"x{i}" for i in range(samples.shape[1])]
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in samples:
            writer.writerow([repr(float(v)) for v in row])


class SourceSampler:
    """Handle protocol: draw(n, rng) -> (n, dim) samples."""

    dim: int

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass
class GaussianSampler(SourceSampler):
    spec: GaussianSpec

    @property
    def dim(self):
        return self.spec.dim

    def draw(self, n, rng):
        return sample_gaussian(self.spec, n, rng)

    def to_dict(self):
        return {
            "source": "gaussian",
            "mean": [float(v) for v in self.spec.mean],
            "covariance": [[float(v) for v in row] for row in self.spec.covariance],
        }


@dataclass
class TwisterCometSampler(SourceSampler):
    k: int
    variant: str = "symmetric"
    dim: int = 2

    def draw(self, n, rng):
        return sample_twister_comet(self.k, n, rng, self.variant)

    def to_dict(self):
        return {"source": "twister_comet", "k": self.k, "variant": self.variant}


@dataclass
class VonMisesSampler(SourceSampler):
    mu: np.ndarray
    kappa: float
    dim: int = 3

    def draw(self, n, rng):
        return sample_vonmises_sphere(self.mu, self.kappa, n, rng)

    def to_dict(self):
        return {"source": "von_mises", "mu": [float(v) for v in np.ravel(self.mu)], "kappa": float(self.kappa)}


@dataclass
class EmpiricalSampler(SourceSampler):
    """Resamples a fixed dataset with replacement."""

    data: np.ndarray
    origin: str = ""

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=np.float64))

    @property
    def dim(self):
        return self.data.shape[1]

    def draw(self, n, rng):
        idx = rng.integers(0, self.data.shape[0], size=n)
        return self.data[idx]

    def to_dict(self):
        return {"source": "empirical", "path": self.origin, "n_rows": int(self.data.shape[0])}


def sampler_from_dict(d: dict) -> SourceSampler:
    kind = d["source"]
    if kind == "gaussian":
        return GaussianSampler(GaussianSpec(np.asarray(d["mean"]), np.asarray(d["covariance"])))
    if kind == "twister_comet":
        return TwisterCometSampler(int(d["k"]), d.get("variant", "symmetric"))
    if kind == "von_mises":
        return VonMisesSampler(np.asarray(d["mu"], dtype=np.float64), float(d["kappa"]))
    if kind == "empirical":
        return EmpiricalSampler(load_csv(d["path"]), origin=d["path"])
    raise ValueError(f"unknown source kind {kind!r}")
