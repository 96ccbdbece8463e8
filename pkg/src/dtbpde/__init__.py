"""Deep tangent bundle solvers: least-squares fits in the span of a network's
parameter gradients, time integrators built on them, particle flows, and the
oracles used to check them."""
from .dtb import (
    DTBApprox,
    DTBSet,
    IndexSet,
    ScalarField,
    approx_gform,
    approx_jform,
    dtbset_eval,
    project,
    select_subspace,
)
from .errors import *  # noqa: F401,F403
from .evolve import RhsOperator, RunOptions, RunReport, UpdatePolicy, ac2d_corrected_run, forward_euler_run, trapezoidal_heat_run
from .linalg import LstsqOptions, lstsq_svd, solve_psd, truncated_svd
from .netfam import NetworkSpec, PeriodicEmbeddingSpec, init_params, network, refit
from .wflow import InteractionKernel, LinearPotential, ParticleEnsemble, run_wgf, run_whf

__version__ = "0.1.0"

__all__ = [
    "DTBApprox", "DTBSet", "IndexSet", "ScalarField", "approx_gform", "approx_jform", "dtbset_eval", "project",
    "select_subspace", "RhsOperator", "RunOptions", "RunReport", "UpdatePolicy", "ac2d_corrected_run",
    "forward_euler_run", "trapezoidal_heat_run", "LstsqOptions", "lstsq_svd", "solve_psd", "truncated_svd",
    "NetworkSpec", "PeriodicEmbeddingSpec", "init_params", "network", "refit", "InteractionKernel",
    "LinearPotential", "ParticleEnsemble", "run_wgf", "run_whf", "__version__",
]
