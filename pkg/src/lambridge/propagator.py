"""Solution operators for the linear reaction-diffusion factor equations.

The forward equation  du/dt = (eps*Lap + V/(2 eps)) u  over [t0, t1] is
realized two independent ways:

* deterministic split-step: Strang composition of exact truncated
  heat-kernel convolutions (variance 2*eps*dt per axis) with pointwise
  reaction half-steps exp(V*dt/(4 eps)); unconditionally positive and
  self-adjoint by construction;
* Feynman-Kac Monte Carlo: drift-free Euler-Maruyama paths
  dr = sqrt(2 eps) dw carrying the killing weight exp(int V dt / (2 eps)),
  binned at the terminal time.

Both produce a dense N x N matrix K with K[i, j] ~ (transition density
from node j to node i) * cell_volume, so apply = plain matvec and column
sums are survival masses. The box boundary is absorbing: mass leaving the
box is lost, approximating the free-space problem when the box is wide
enough (guarded by DomainTooNarrow).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import (
    DomainTooNarrow,
    GridMismatch,
    NonFiniteKernel,
    UnalignedSnapshot,
)
from .grid import PositivityClass, ScalarField, SpatialGrid
from .potential import Potential, PotentialKind

# exp underflows to 0 below ~-745; stay clear of it.
_EXP_GUARD = -700.0


class KernelMethod(Enum):
    SPLIT_STEP = "split_step"
    FEYNMAN_KAC = "feynman_kac"


@dataclass(frozen=True)
class KernelOperator:
    """Dense discrete solution operator of the forward factor PDE over [t0, t1]."""

    grid: SpatialGrid
    epsilon: float
    t0: float
    t1: float
    nsteps: int
    method: KernelMethod
    matrix: np.ndarray
    escaped_paths: int = 0

    def symmetrized(self) -> "KernelOperator":
        """Exactly symmetric copy (K + K^T)/2; the generator is self-adjoint."""
        m = 0.5 * (self.matrix + self.matrix.T)
        return replace(self, matrix=m)

    def column_masses(self) -> np.ndarray:
        """Survival mass per source node (quadrature weight is inside K)."""
        return self.matrix.sum(axis=0)

    def symmetry_defect(self) -> float:
        """max |K - K^T| relative to the max entry."""
        return float(
            np.max(np.abs(self.matrix - self.matrix.T)) / np.max(self.matrix)
        )


@dataclass(frozen=True)
class PropagationSchedule:
    """Fields stored at strictly increasing snapshot times within [t0, t1]."""

    times: tuple[float, ...]
    fields: tuple[ScalarField, ...]

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise UnalignedSnapshot("snapshot times must be strictly increasing")


class _SplitStepScheme:
    """One Strang substep R G R and its composition machinery."""

    def __init__(
        self,
        potential: Potential,
        grid: SpatialGrid,
        eps: float,
        t_start: float,
        t_end: float,
        nsteps: int,
    ):
        if eps <= 0:
            raise ValueError(f"eps must be > 0, got {eps}")
        if t_end <= t_start:
            raise ValueError("t_end must exceed t_start")
        if nsteps < 1:
            raise ValueError("nsteps must be >= 1")
        horizon = t_end - t_start
        diff_len = math.sqrt(2.0 * eps * horizon)
        for w in grid.widths:
            if diff_len > 0.25 * w:
                raise DomainTooNarrow(
                    f"diffusion length {diff_len:.4g} exceeds a quarter of "
                    f"box width {w:.4g}; widen the box"
                )
        self.grid = grid
        self.eps = eps
        self.nsteps = nsteps
        self.dt = horizon / nsteps

        v = np.asarray(potential.evaluate(grid.points), dtype=float)
        half_exp = v * self.dt / (4.0 * eps)
        total_exp = float(np.min(v)) * horizon / (2.0 * eps)
        if np.min(half_exp) < _EXP_GUARD or total_exp < _EXP_GUARD:
            raise NonFiniteKernel(
                "reaction exponent below exp() underflow range; "
                "nondimensionalize the problem (unit_scale) so |V|*(t1-t0)/eps shrinks"
            )
        if not np.all(np.isfinite(half_exp)):
            raise NonFiniteKernel("potential produced non-finite reaction weights")
        self.reaction_half = np.exp(half_exp)

        # Per-axis heat kernels over one substep, variance 2*eps*dt, entries
        # h * g(|x_a - x_b|): exactly symmetric, nonnegative, include the
        # cell-volume quadrature weight as a tensor product.
        var = 2.0 * eps * self.dt
        self.axis_kernels = []
        for ax, h in zip(grid.axes, grid.spacings):
            diff = ax[:, None] - ax[None, :]
            g = h * np.exp(-(diff * diff) / (2.0 * var)) / math.sqrt(
                2.0 * math.pi * var
            )
            self.axis_kernels.append(g)

    def _diffuse(self, block: np.ndarray) -> np.ndarray:
        """Apply the tensor-product heat step to (num_nodes, m) columns."""
        counts = self.grid.counts
        m = block.shape[1]
        work = block.reshape(counts + (m,))
        for ax, g in enumerate(self.axis_kernels):
            work = np.moveaxis(
                np.tensordot(g, work, axes=([1], [ax])), 0, ax
            )
        return np.ascontiguousarray(work.reshape(self.grid.num_nodes, m))

    def step(self, block: np.ndarray) -> np.ndarray:
        out = self.reaction_half[:, None] * block
        out = self._diffuse(out)
        out *= self.reaction_half[:, None]
        return out

    def step_adjoint(self, block: np.ndarray) -> np.ndarray:
        # (R G R)^T = R G^T R with diagonal R; G is built exactly symmetric,
        # so the adjoint substep coincides with the forward one.
        return self.step(block)

    def run(self, block: np.ndarray, adjoint: bool = False) -> np.ndarray:
        for _ in range(self.nsteps):
            block = self.step_adjoint(block) if adjoint else self.step(block)
        return block


def build_kernel_splitstep(
    potential: Potential,
    grid: SpatialGrid,
    eps: float,
    t0: float,
    t1: float,
    nsteps: int,
    threads: int = 1,
) -> KernelOperator:
    """Compose the Strang substeps over [t0, t1] into a dense matrix.

    The matrix is produced by propagating the identity through the scheme.
    With threads > 1 the identity columns are split into blocks handled by
    a thread pool; blocks are independent and merged in index order, and
    BLAS is pinned to one thread inside, so the result is bitwise
    independent of the thread count.

    Raises:
        DomainTooNarrow: diffusion length sqrt(2 eps (t1-t0)) exceeds a
            quarter of some box width.
        NonFiniteKernel: reaction exponent would underflow exp(); rescale
            units first.
    """
    scheme = _SplitStepScheme(potential, grid, eps, t0, t1, nsteps)
    n = grid.num_nodes
    nblocks = max(1, min(int(threads), n))
    bounds = np.linspace(0, n, nblocks + 1, dtype=int)

    def run_block(k: int) -> np.ndarray:
        lo, hi = bounds[k], bounds[k + 1]
        block = np.zeros((n, hi - lo))
        block[np.arange(lo, hi), np.arange(hi - lo)] = 1.0
        with threadpool_limits(limits=1):
            return scheme.run(block)

    if nblocks == 1:
        with threadpool_limits(limits=1):
            matrix = scheme.run(np.eye(n))
    else:
        with ThreadPoolExecutor(max_workers=nblocks) as pool:
            parts = list(pool.map(run_block, range(nblocks)))
        matrix = np.concatenate(parts, axis=1)
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteKernel("split-step composition produced non-finite entries")
    return KernelOperator(
        grid, eps, t0, t1, nsteps, KernelMethod.SPLIT_STEP, matrix
    )


def _node_rng(seed: int, node: int) -> np.random.Generator:
    # Independent, reproducible substream per source node: parallel path
    # batches merge by node index, so results never depend on scheduling.
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(node,)))


def build_kernel_feynman_kac(
    potential: Potential,
    grid: SpatialGrid,
    eps: float,
    t0: float,
    t1: float,
    npaths: int,
    dt: float,
    seed: int,
    threads: int = 1,
) -> KernelOperator:
    """Monte Carlo kernel: killed-diffusion path weights binned per node.

    From each source node, npaths Euler-Maruyama paths of dr = sqrt(2 eps) dw
    accumulate the killing weight exp(sum V dt / (2 eps)) (trapezoidal in
    the exponent); endpoints deposit their weight on the nearest node.
    Paths leaving the box (or, for Kepler potentials, entering the guard
    radius) are absorbed and counted in escaped_paths. Deterministic for a
    fixed seed regardless of threads.

    Raises:
        DomainTooNarrow / NonFiniteKernel: as for the split-step builder.
        ValueError: dt does not divide t1 - t0.
    """
    horizon = t1 - t0
    m_steps = round(horizon / dt)
    if m_steps < 1 or abs(m_steps * dt - horizon) > 1e-9 * max(horizon, 1.0):
        raise ValueError(f"dt={dt} does not divide t1-t0={horizon}")
    # Reuse the split-step guards (domain width, reaction exponent range).
    _SplitStepScheme(potential, grid, eps, t0, t1, m_steps)

    n = grid.num_nodes
    lower = np.asarray(grid.lower)
    upper = np.asarray(grid.upper)
    spacings = np.asarray(grid.spacings)
    counts = grid.counts
    sigma = math.sqrt(2.0 * eps * dt)
    kepler_guard = potential.kind is PotentialKind.KEPLER_J2

    def alive_mask(x: np.ndarray) -> np.ndarray:
        ok = np.all((x >= lower) & (x <= upper), axis=1)
        if kepler_guard:
            ok &= np.linalg.norm(x, axis=1) >= potential.r_min
        return ok

    def simulate_node(j: int) -> tuple[np.ndarray, int]:
        rng = _node_rng(seed, j)
        x = np.tile(grid.points[j], (npaths, 1))
        logw = np.zeros(npaths)
        alive = np.ones(npaths, dtype=bool)
        v_old = np.full(npaths, float(potential.evaluate(grid.points[j])))
        for _ in range(m_steps):
            x[alive] += sigma * rng.standard_normal((int(alive.sum()), grid.dim))
            still = alive_mask(x[alive])
            idx = np.flatnonzero(alive)
            alive[idx[~still]] = False
            live = np.flatnonzero(alive)
            if live.size == 0:
                break
            v_new = np.asarray(potential.evaluate(x[live]), dtype=float)
            logw[live] += 0.5 * (v_old[live] + v_new) * dt / (2.0 * eps)
            v_old[live] = v_new
        live = np.flatnonzero(alive)
        col = np.zeros(n)
        if live.size:
            nodes = np.rint((x[live] - lower) / spacings).astype(int)
            flat = np.ravel_multi_index(tuple(nodes.T), counts, mode="clip")
            col = np.bincount(flat, weights=np.exp(logw[live]), minlength=n)
        return col / npaths, npaths - live.size

    if threads <= 1:
        results = [simulate_node(j) for j in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = list(pool.map(simulate_node, range(n)))
    matrix = np.stack([col for col, _ in results], axis=1)
    escaped = int(sum(esc for _, esc in results))
    return KernelOperator(
        grid, eps, t0, t1, m_steps, KernelMethod.FEYNMAN_KAC, matrix, escaped
    )


def _out_class(f: ScalarField) -> PositivityClass:
    if f.positivity in (
        PositivityClass.NONNEGATIVE,
        PositivityClass.STRICTLY_POSITIVE,
    ):
        return PositivityClass.NONNEGATIVE
    return PositivityClass.ARBITRARY


def apply_forward(kernel: KernelOperator, f: ScalarField) -> ScalarField:
    """Propagate a field over [t0, t1]: matvec with K (nonnegative preserving)."""
    if f.grid is not kernel.grid and f.grid != kernel.grid:
        raise GridMismatch("field grid differs from kernel grid")
    return ScalarField(kernel.grid, kernel.matrix @ f.values, _out_class(f))


def apply_backward(kernel: KernelOperator, f: ScalarField) -> ScalarField:
    """Adjoint propagation (backward-in-time solve): matvec with K^T."""
    if f.grid is not kernel.grid and f.grid != kernel.grid:
        raise GridMismatch("field grid differs from kernel grid")
    return ScalarField(kernel.grid, kernel.matrix.T @ f.values, _out_class(f))


def propagate_schedule(
    potential: Potential,
    grid: SpatialGrid,
    eps: float,
    f0: ScalarField,
    t_start: float,
    t_end: float,
    nsteps: int,
    direction: str,
    snapshot_times: "tuple[float, ...] | list[float]",
) -> PropagationSchedule:
    """Split-step march storing fields at substep-aligned snapshot times.

    direction 'forward' starts from f0 at t_start; 'backward' treats f0 as
    the terminal condition at t_end and applies adjoint substeps in reverse
    time order, so a snapshot at time t holds the backward solution there.

    Raises:
        UnalignedSnapshot: a snapshot time is off the substep lattice.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be forward|backward, got {direction}")
    if f0.grid != grid:
        raise GridMismatch("initial field grid differs from schedule grid")
    scheme = _SplitStepScheme(potential, grid, eps, t_start, t_end, nsteps)
    dt = scheme.dt
    span = max(abs(t_end - t_start), 1.0)

    wanted: dict[int, float] = {}
    for t in snapshot_times:
        k = round((t - t_start) / dt)
        if k < 0 or k > nsteps or abs(t_start + k * dt - t) > 1e-9 * span:
            raise UnalignedSnapshot(
                f"snapshot t={t} not on the substep lattice (dt={dt})"
            )
        wanted[k] = t
    if not wanted:
        raise UnalignedSnapshot("no snapshot times requested")

    snaps: dict[int, ScalarField] = {}
    block = f0.values[:, None].copy()
    cls = _out_class(f0)
    steps = range(nsteps) if direction == "forward" else range(nsteps, 0, -1)
    with threadpool_limits(limits=1):
        if direction == "forward":
            if 0 in wanted:
                snaps[0] = f0
            for k in steps:
                block = scheme.step(block)
                if (k + 1) in wanted:
                    snaps[k + 1] = ScalarField(grid, block[:, 0].copy(), cls)
        else:
            if nsteps in wanted:
                snaps[nsteps] = f0
            for k in steps:
                block = scheme.step_adjoint(block)
                if (k - 1) in wanted:
                    snaps[k - 1] = ScalarField(grid, block[:, 0].copy(), cls)

    order = sorted(wanted)
    return PropagationSchedule(
        tuple(wanted[k] for k in order), tuple(snaps[k] for k in order)
    )
