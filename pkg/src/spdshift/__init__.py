"""Riemannian statistics on SPD matrices and label-shift-robust source-free
domain adaptation, with a simulation harness and verification suites."""

from spdshift._kernels import BACKEND as kernel_backend
from spdshift.core import (
    airm_distance,
    airm_inner,
    exp_map,
    geodesic,
    log_map,
    parallel_transport,
    spd_exp,
    spd_log,
    spd_matrix,
    sym_eig,
    sym_matrix,
    transport_to_identity,
    upper,
    upper_inv,
)
from spdshift.frechet import FrechetConfig, FrechetResult, frechet_mean, frechet_variance

__version__ = "0.1.0"

__all__ = [
    "airm_distance",
    "airm_inner",
    "exp_map",
    "frechet_mean",
    "frechet_variance",
    "FrechetConfig",
    "FrechetResult",
    "geodesic",
    "kernel_backend",
    "log_map",
    "parallel_transport",
    "spd_exp",
    "spd_log",
    "spd_matrix",
    "sym_eig",
    "sym_matrix",
    "transport_to_identity",
    "upper",
    "upper_inv",
]
