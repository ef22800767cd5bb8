"""Reconstruction of the optimal flow from converged endpoint factors.

The optimal density at any interior time is the pointwise product of the
forward-propagated phi_hat and backward-propagated phi; the steering
velocity is 2*eps*grad(log phi) and the value function 2*eps*log(phi).
Also provides the running-cost objective and PDE residual diagnostics
(Hamilton-Jacobi-Bellman and Fokker-Planck) used in refinement studies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bridge import BridgeProblem, ConvergenceReport, FactorPair
from .errors import NonPositiveField, ScheduleTooCoarse, UnalignedSnapshot
from .grid import (
    PositivityClass,
    ScalarField,
    SpatialGrid,
    VectorField,
    field_mean,
    gradient,
    gradient_log,
    integrate,
    laplacian,
)
from .potential import Potential
from .propagator import propagate_schedule


@dataclass(frozen=True)
class BridgeSolution:
    """Snapshots of the recovered optimal flow plus run diagnostics."""

    times: tuple[float, ...]
    rho: tuple[ScalarField, ...]
    velocity: tuple[VectorField, ...]
    psi: tuple[ScalarField, ...]
    phi: tuple[ScalarField, ...]
    phi_hat: tuple[ScalarField, ...]
    mass_defects: tuple[float, ...]
    objective: float
    convergence: ConvergenceReport
    problem: BridgeProblem

    def mean_path(self) -> np.ndarray:
        """Density-weighted mean position per snapshot, shape (len(times), d)."""
        return np.stack([field_mean(r) for r in self.rho])


def factor_snapshots(
    fp: FactorPair, prob: BridgeProblem, snapshot_times: "tuple[float, ...] | list[float]"
) -> tuple[tuple[ScalarField, ...], tuple[ScalarField, ...]]:
    """Propagate the endpoint factors to the snapshot times.

    Returns (phi_hat at each time, phi at each time); times must sit on the
    solver's substep lattice (UnalignedSnapshot otherwise).
    """
    times = tuple(sorted(snapshot_times))
    fwd = propagate_schedule(
        prob.potential,
        prob.grid,
        prob.epsilon,
        fp.phi_hat_0,
        prob.t0,
        prob.t1,
        prob.options.nsteps,
        "forward",
        times,
    )
    bwd = propagate_schedule(
        prob.potential,
        prob.grid,
        prob.epsilon,
        fp.phi_1,
        prob.t0,
        prob.t1,
        prob.options.nsteps,
        "backward",
        times,
    )
    return fwd.fields, bwd.fields


def recover_density(
    fp: FactorPair,
    prob: BridgeProblem,
    snapshot_times: "tuple[float, ...] | list[float]",
) -> tuple[tuple[ScalarField, ...], tuple[float, ...]]:
    """Pointwise factor products, renormalized to unit mass.

    Returns the densities and the pre-normalization mass defects
    (integral - 1), which vanish up to the solver residual because the
    discrete substeps telescope exactly across interior times.
    """
    phi_hats, phis = factor_snapshots(fp, prob, snapshot_times)
    rhos, defects = [], []
    for ph, p in zip(phi_hats, phis):
        raw = ph.values * p.values
        mass = integrate(ScalarField(prob.grid, raw))
        defects.append(mass - 1.0)
        rhos.append(
            ScalarField(prob.grid, raw / mass, PositivityClass.STRICTLY_POSITIVE)
        )
    return tuple(rhos), tuple(defects)


def recover_velocity(
    phi_snapshots: "tuple[ScalarField, ...] | list[ScalarField]",
    eps: float,
    grid: SpatialGrid,
) -> tuple[VectorField, ...]:
    """Steering field 2*eps*grad(log phi) per snapshot."""
    out = []
    for p in phi_snapshots:
        if np.any(p.values <= 0):
            raise NonPositiveField("velocity recovery needs strictly positive phi")
        g = gradient_log(p)
        out.append(VectorField(grid, 2.0 * eps * g.values))
    return tuple(out)


def recover_psi(phi: ScalarField, eps: float) -> ScalarField:
    """Value function 2*eps*log(phi)."""
    if np.any(phi.values <= 0):
        raise NonPositiveField("psi recovery needs strictly positive phi")
    return ScalarField(phi.grid, 2.0 * eps * np.log(phi.values))


def objective_value(
    times: "tuple[float, ...]",
    rhos: "tuple[ScalarField, ...]",
    velocities: "tuple[VectorField, ...]",
    potential: Potential,
) -> float:
    """Trapezoid-in-time of integral (|v|^2/2 - V) rho dr over the window.

    Requires a uniform schedule of at least 3 snapshots
    (ScheduleTooCoarse otherwise).
    """
    if len(times) < 3:
        raise ScheduleTooCoarse("objective needs at least 3 snapshots")
    dts = np.diff(times)
    if np.max(np.abs(dts - dts[0])) > 1e-9 * max(abs(times[-1] - times[0]), 1.0):
        raise ScheduleTooCoarse("objective needs a uniform snapshot schedule")
    grid = rhos[0].grid
    v_pot = np.asarray(potential.evaluate(grid.points), dtype=float)
    rates = []
    for rho, vel in zip(rhos, velocities):
        kinetic = 0.5 * np.sum(vel.values**2, axis=1)
        rates.append(integrate(ScalarField(grid, (kinetic - v_pot) * rho.values)))
    return float(np.trapezoid(rates, times))


def _interior_mask(grid: SpatialGrid, support: np.ndarray, margin: int = 2) -> np.ndarray:
    mask = np.ones(grid.counts, dtype=bool)
    for ax in range(grid.dim):
        sl = [slice(None)] * grid.dim
        sl[ax] = slice(0, margin)
        mask[tuple(sl)] = False
        sl[ax] = slice(-margin, None)
        mask[tuple(sl)] = False
    return mask.ravel() & support


@dataclass(frozen=True)
class ResidualStats:
    max_abs: float
    l2: float


def hjb_residual(
    times: "tuple[float, ...]",
    psis: "tuple[ScalarField, ...]",
    potential: Potential,
    eps: float,
    grid: SpatialGrid,
    support_rel: float = 1e-8,
    rhos: "tuple[ScalarField, ...] | None" = None,
) -> ResidualStats:
    """Discrete residual of d(psi)/dt + |grad psi|^2/2 + eps*Lap(psi) + V.

    Central differences in time at the interior snapshots, grid operators in
    space. Statistics are taken over interior nodes (2-cell boundary margin)
    restricted to where the density exceeds support_rel of its max when rho
    snapshots are supplied; log-factor tails outside the support are floor
    artifacts, not solution error. Diagnostic only; meaningful through its
    behavior under refinement.
    """
    if len(times) < 3:
        raise ScheduleTooCoarse("hjb residual needs at least 3 snapshots")
    dts = np.diff(times)
    if np.max(np.abs(dts - dts[0])) > 1e-9 * max(abs(times[-1] - times[0]), 1.0):
        raise ScheduleTooCoarse("hjb residual needs a uniform snapshot schedule")
    dt = float(dts[0])
    v_pot = np.asarray(potential.evaluate(grid.points), dtype=float)

    vals_max, sq_sum, count = 0.0, 0.0, 0
    for k in range(1, len(times) - 1):
        dpsi_dt = (psis[k + 1].values - psis[k - 1].values) / (2.0 * dt)
        g = gradient(psis[k]).values
        lap = laplacian(psis[k]).values
        res = dpsi_dt + 0.5 * np.sum(g * g, axis=1) + eps * lap + v_pot
        if rhos is not None:
            support = rhos[k].values > support_rel * float(np.max(rhos[k].values))
        else:
            support = np.ones(grid.num_nodes, dtype=bool)
        mask = _interior_mask(grid, support)
        picked = res[mask]
        if picked.size:
            vals_max = max(vals_max, float(np.max(np.abs(picked))))
            sq_sum += float(np.sum(picked**2)) * grid.cell_volume
            count += 1
    if count == 0:
        raise ScheduleTooCoarse("no interior nodes available for the residual")
    return ResidualStats(vals_max, float(np.sqrt(sq_sum / count)))


def fpk_residual(
    times: "tuple[float, ...]",
    rhos: "tuple[ScalarField, ...]",
    velocities: "tuple[VectorField, ...]",
    eps: float,
    grid: SpatialGrid,
    support_rel: float = 1e-8,
) -> ResidualStats:
    """Discrete residual of d(rho)/dt + div(rho v) = eps*Lap(rho).

    Same masking and schedule rules as :func:`hjb_residual`; diagnostic only.
    """
    if len(times) < 3:
        raise ScheduleTooCoarse("fpk residual needs at least 3 snapshots")
    dts = np.diff(times)
    if np.max(np.abs(dts - dts[0])) > 1e-9 * max(abs(times[-1] - times[0]), 1.0):
        raise ScheduleTooCoarse("fpk residual needs a uniform snapshot schedule")
    dt = float(dts[0])

    vals_max, sq_sum, count = 0.0, 0.0, 0
    for k in range(1, len(times) - 1):
        drho_dt = (rhos[k + 1].values - rhos[k - 1].values) / (2.0 * dt)
        div = np.zeros(grid.num_nodes)
        flux = rhos[k].values[:, None] * velocities[k].values
        for ax in range(grid.dim):
            comp = ScalarField(grid, flux[:, ax])
            div += gradient(comp).values[:, ax]
        lap = laplacian(rhos[k]).values
        res = drho_dt + div - eps * lap
        support = rhos[k].values > support_rel * float(np.max(rhos[k].values))
        mask = _interior_mask(grid, support)
        picked = res[mask]
        if picked.size:
            vals_max = max(vals_max, float(np.max(np.abs(picked))))
            sq_sum += float(np.sum(picked**2)) * grid.cell_volume
            count += 1
    if count == 0:
        raise ScheduleTooCoarse("no interior nodes available for the residual")
    return ResidualStats(vals_max, float(np.sqrt(sq_sum / count)))


def recover_solution(
    fp: FactorPair,
    prob: BridgeProblem,
    report: ConvergenceReport,
    snapshot_times: "tuple[float, ...] | list[float]",
) -> BridgeSolution:
    """Full post-processing bundle: densities, velocities, psi, objective."""
    times = tuple(sorted(snapshot_times))
    if times[0] != prob.t0 or times[-1] != prob.t1:
        raise UnalignedSnapshot("snapshot schedule must include t0 and t1")
    phi_hats, phis = factor_snapshots(fp, prob, times)
    rhos, defects = [], []
    for ph, p in zip(phi_hats, phis):
        raw = ph.values * p.values
        mass = integrate(ScalarField(prob.grid, raw))
        defects.append(mass - 1.0)
        rhos.append(
            ScalarField(prob.grid, raw / mass, PositivityClass.STRICTLY_POSITIVE)
        )
    vels = recover_velocity(phis, prob.epsilon, prob.grid)
    psis = tuple(recover_psi(p, prob.epsilon) for p in phis)
    obj = objective_value(times, tuple(rhos), vels, prob.potential)
    return BridgeSolution(
        times,
        tuple(rhos),
        vels,
        psis,
        phis,
        phi_hats,
        tuple(defects),
        obj,
        report,
        prob,
    )
