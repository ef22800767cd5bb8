"""Nonparametric solver for the probabilistic Lambert problem with process noise.

Steers a prescribed initial position density to a prescribed terminal one
through a gravitational potential over a fixed flight window, by solving
the boundary-coupled linear reaction-diffusion system that the noisy
density-steering problem reduces to, and recovering the optimal density
flow and velocity field from the converged factors. A deterministic
shooting baseline cross-validates the small-noise limit.
"""

__version__ = "0.1.0"

from .bridge import (
    BridgeProblem,
    ConvergenceReport,
    FactorPair,
    SolverOptions,
    check_marginals,
    hilbert_distance,
    solve_bridge,
)
from .grid import (
    GaussianMixture,
    PositivityClass,
    ScalarField,
    SpatialGrid,
    VectorField,
    discretize_density,
    field_mean,
    gradient_log,
    integrate,
    make_grid,
)
from .lambert import LambertArc, integrate_ode, shoot_lambert
from .potential import Potential, PotentialKind, eval_potential, grad_potential
from .propagator import (
    KernelMethod,
    KernelOperator,
    PropagationSchedule,
    apply_backward,
    apply_forward,
    build_kernel_feynman_kac,
    build_kernel_splitstep,
    propagate_schedule,
)
from .recovery import (
    BridgeSolution,
    ResidualStats,
    fpk_residual,
    hjb_residual,
    objective_value,
    recover_density,
    recover_psi,
    recover_solution,
    recover_velocity,
)

__all__ = [
    "BridgeProblem",
    "BridgeSolution",
    "ConvergenceReport",
    "FactorPair",
    "GaussianMixture",
    "KernelMethod",
    "KernelOperator",
    "LambertArc",
    "Potential",
    "PotentialKind",
    "PositivityClass",
    "PropagationSchedule",
    "ResidualStats",
    "ScalarField",
    "SolverOptions",
    "SpatialGrid",
    "VectorField",
    "apply_backward",
    "apply_forward",
    "build_kernel_feynman_kac",
    "build_kernel_splitstep",
    "check_marginals",
    "discretize_density",
    "eval_potential",
    "field_mean",
    "fpk_residual",
    "grad_potential",
    "gradient_log",
    "hilbert_distance",
    "hjb_residual",
    "integrate",
    "integrate_ode",
    "make_grid",
    "objective_value",
    "propagate_schedule",
    "recover_density",
    "recover_psi",
    "recover_solution",
    "recover_velocity",
    "shoot_lambert",
    "solve_bridge",
]
