"""Boundary-coupled factor recursion for the noisy density-steering problem.

Starting from the everywhere-positive uniform guess, the loop alternates
kernel propagation with pointwise enforcement of the endpoint products
(phi_hat * phi = rho at t0 and t1) until successive normalized iterates of
the initial forward factor stop moving in Hilbert's projective metric.
The recursion is the classical positive-kernel scaling iteration and
contracts linearly for compactly supported endpoint data.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivisionBlowup, GridMismatch, NonPositiveField
from .grid import (
    DENSITY_FLOOR_REL,
    PositivityClass,
    ScalarField,
    SpatialGrid,
    integrate,
    l1_norm,
)
from .potential import Potential
from .propagator import (
    KernelMethod,
    KernelOperator,
    apply_backward,
    apply_forward,
    build_kernel_feynman_kac,
    build_kernel_splitstep,
)


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 2000
    tol_hilbert: float = 1e-9
    tol_marginal: float = 0.0  # secondary stop on the rho1 L1 residual; 0 disables
    nsteps: int = 16
    kernel_method: KernelMethod = KernelMethod.SPLIT_STEP
    symmetrize: bool = True
    seed: int = 0
    fk_npaths: int = 100_000
    fk_dt: float | None = None
    threads: int = 1


@dataclass(frozen=True)
class BridgeProblem:
    """Endpoint densities, noise strength, window, potential, grid, options."""

    rho0: ScalarField
    rho1: ScalarField
    epsilon: float
    t0: float
    t1: float
    potential: Potential
    grid: SpatialGrid
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.t1 <= self.t0:
            raise ValueError("t1 must exceed t0")
        for name, rho in (("rho0", self.rho0), ("rho1", self.rho1)):
            if rho.grid != self.grid:
                raise GridMismatch(f"{name} lives on a different grid")
            if np.any(rho.values <= 0):
                raise NonPositiveField(f"{name} must be strictly positive")
            if abs(integrate(rho) - 1.0) > 1e-10:
                raise ValueError(f"{name} is not normalized to unit mass")

    def build_kernel(self) -> KernelOperator:
        opts = self.options
        if opts.kernel_method is KernelMethod.SPLIT_STEP:
            k = build_kernel_splitstep(
                self.potential,
                self.grid,
                self.epsilon,
                self.t0,
                self.t1,
                opts.nsteps,
                threads=opts.threads,
            )
        else:
            dt = opts.fk_dt or (self.t1 - self.t0) / opts.nsteps
            k = build_kernel_feynman_kac(
                self.potential,
                self.grid,
                self.epsilon,
                self.t0,
                self.t1,
                opts.fk_npaths,
                dt,
                opts.seed,
                threads=opts.threads,
            )
        return k.symmetrized() if opts.symmetrize else k


@dataclass(frozen=True)
class FactorPair:
    """Converged endpoint factors, gauge-fixed by integrate(phi_hat_0) = 1."""

    phi_hat_0: ScalarField
    phi_1: ScalarField


@dataclass(frozen=True)
class ConvergenceReport:
    hilbert_distances: tuple[float, ...]
    residuals_rho0: tuple[float, ...]
    residuals_rho1: tuple[float, ...]
    converged: bool
    iterations: int
    contraction_ratio: float | None

    def ratios(self, burn_in: int = 3) -> np.ndarray:
        """Successive Hilbert-distance ratios after the burn-in iteration."""
        d = np.asarray(self.hilbert_distances)
        d = d[burn_in - 1 :]
        return d[1:] / d[:-1]


def hilbert_distance(u: ScalarField, v: ScalarField) -> float:
    """Projective distance log(max_i(u_i/v_i) / min_i(u_i/v_i)); 0 iff u ~ c v."""
    if u.grid != v.grid:
        raise GridMismatch("fields live on different grids")
    if np.any(u.values <= 0) or np.any(v.values <= 0):
        raise NonPositiveField("Hilbert metric needs strictly positive fields")
    r = u.values / v.values
    return float(np.log(np.max(r) / np.min(r)))


# Near-underflow guard for factor divisions: a denominator this small where
# the marginal carries real mass means the kernel delivers (numerically) no
# mass there -- the discrete signature of inconsistent endpoint supports or
# an over-killed kernel. A relative threshold would misfire on legitimate
# small-noise problems, where the true factors span many orders of magnitude
# across the endpoint support.
_DIVISION_ABS_FLOOR = 1e-290


def _divide(num: ScalarField, den: ScalarField, what: str) -> ScalarField:
    """Pointwise num/den with blowup guards on the numerator's support."""
    if np.any(den.values <= 0) or not np.all(np.isfinite(den.values)):
        raise DivisionBlowup(f"{what}: denominator not strictly positive")
    support = num.values > 10.0 * DENSITY_FLOOR_REL * float(np.max(num.values))
    if np.any(den.values[support] < _DIVISION_ABS_FLOOR):
        raise DivisionBlowup(
            f"{what}: denominator underflows on the marginal support "
            "(inconsistent supports or kernel too diffusive/killed)"
        )
    out = num.values / den.values
    if not np.all(np.isfinite(out)):
        raise DivisionBlowup(f"{what}: quotient overflowed")
    return ScalarField(num.grid, out, PositivityClass.STRICTLY_POSITIVE)


def solve_bridge(
    prob: BridgeProblem, kernel: KernelOperator | None = None
) -> tuple[FactorPair, ConvergenceReport]:
    """Run the factor recursion until the Hilbert distance drops below tol.

    One iteration: propagate phi_hat_0 forward, divide rho1 by the result,
    propagate that backward, divide rho0 by the result, renormalize. The
    pair is returned in the gauge integrate(phi_hat_0) = 1, with phi_1
    carrying the compensating scale so endpoint products are preserved.

    A non-converged run (max_iters hit) is not an error: the report comes
    back with converged=False and the caller decides.
    """
    opts = prob.options
    kernel = kernel if kernel is not None else prob.build_kernel()
    if kernel.grid != prob.grid:
        raise GridMismatch("kernel grid differs from problem grid")

    grid = prob.grid
    ones = ScalarField(grid, np.ones(grid.num_nodes), PositivityClass.STRICTLY_POSITIVE)
    phi_hat_0 = ScalarField(
        grid, ones.values / integrate(ones), PositivityClass.STRICTLY_POSITIVE
    )
    phi_1 = ones  # placeholder until the first update

    distances: list[float] = []
    res0_list: list[float] = []
    res1_list: list[float] = []
    converged = False
    iterations = 0

    for it in range(1, opts.max_iters + 1):
        iterations = it
        phi_hat_1 = apply_forward(kernel, phi_hat_0)
        if it > 1:
            # Residual of the previous iterate's pair, free with this matvec.
            res1_list.append(
                l1_norm(
                    ScalarField(grid, phi_hat_1.values * phi_1.values - prob.rho1.values)
                )
            )
        phi_1 = _divide(prob.rho1, phi_hat_1, "phi_1 = rho1 / phi_hat_1")
        phi_0 = apply_backward(kernel, phi_1)
        new_phi_hat_0 = _divide(prob.rho0, phi_0, "phi_hat_0 = rho0 / phi_0")
        scale = integrate(new_phi_hat_0)
        new_phi_hat_0 = ScalarField(
            grid, new_phi_hat_0.values / scale, PositivityClass.STRICTLY_POSITIVE
        )
        phi_1 = ScalarField(
            grid, phi_1.values * scale, PositivityClass.STRICTLY_POSITIVE
        )
        # Product constraint at t0 holds by construction; record its defect.
        res0_list.append(
            l1_norm(
                ScalarField(
                    grid,
                    new_phi_hat_0.values * (phi_0.values * scale) - prob.rho0.values,
                )
            )
        )
        dist = hilbert_distance(new_phi_hat_0, phi_hat_0)
        distances.append(dist)
        phi_hat_0 = new_phi_hat_0
        if dist < opts.tol_hilbert:
            converged = True
            break
        if opts.tol_marginal > 0 and res1_list and res1_list[-1] < opts.tol_marginal:
            converged = True
            break

    # Terminal-marginal residual of the final pair.
    phi_hat_1 = apply_forward(kernel, phi_hat_0)
    res1_list.append(
        l1_norm(ScalarField(grid, phi_hat_1.values * phi_1.values - prob.rho1.values))
    )

    ratio = None
    if len(distances) >= 5:
        tail = np.asarray(distances[3:])
        r = tail[1:] / tail[:-1]
        if r.size:
            ratio = float(np.exp(np.mean(np.log(np.maximum(r, 1e-300)))))
    report = ConvergenceReport(
        tuple(distances),
        tuple(res0_list),
        tuple(res1_list),
        converged,
        iterations,
        ratio,
    )
    return FactorPair(phi_hat_0, phi_1), report


def check_marginals(
    fp: FactorPair,
    kernel: KernelOperator,
    rho0: ScalarField,
    rho1: ScalarField,
) -> tuple[float, float]:
    """L1 defects of the endpoint products implied by a factor pair."""
    for f in (fp.phi_hat_0, fp.phi_1, rho0, rho1):
        if f.grid != kernel.grid:
            raise GridMismatch("factor/marginal grid differs from kernel grid")
    phi_0 = apply_backward(kernel, fp.phi_1)
    phi_hat_1 = apply_forward(kernel, fp.phi_hat_0)
    res0 = l1_norm(
        ScalarField(kernel.grid, fp.phi_hat_0.values * phi_0.values - rho0.values)
    )
    res1 = l1_norm(
        ScalarField(kernel.grid, phi_hat_1.values * fp.phi_1.values - rho1.values)
    )
    return res0, res1
