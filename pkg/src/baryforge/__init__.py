"""Continuous entropic OT barycenters via energy-based dual ascent."""

__version__ = "0.1.0"

from .congruent import CongruentPotentials, init_potentials
from .costs import CostFn, sphere_geodesic_sq, sq_euclid, twisted, twister_u, twister_u_inv
from .eotcore import BarycenterProblem, GridSpec
from .langevin import UlaConfig, ula_sample, ula_step
from .nnet import Activation, NetParams, NetSpec, net_init
from .oracles import GaussianSpec, gaussian_fixed_point, gaussian_ot_map, grid_dual_ascent
from .trainer import Checkpoint, TrainConfig, train

__all__ = [
    "Activation",
    "BarycenterProblem",
    "Checkpoint",
    "CongruentPotentials",
    "CostFn",
    "GaussianSpec",
    "GridSpec",
    "NetParams",
    "NetSpec",
    "TrainConfig",
    "UlaConfig",
    "gaussian_fixed_point",
    "gaussian_ot_map",
    "grid_dual_ascent",
    "init_potentials",
    "net_init",
    "sphere_geodesic_sq",
    "sq_euclid",
    "train",
    "twisted",
    "twister_u",
    "twister_u_inv",
    "ula_sample",
    "ula_step",
]
