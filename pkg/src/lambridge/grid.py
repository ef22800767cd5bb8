"""Rectangular grids, field storage, quadrature, and difference operators.

All numerical modules share this discretization of R^d (d in {1,2,3}):
uniform per-axis node spacing, trapezoidal quadrature, fields stored as
flat arrays in C (row-major) node order with the x axis outermost.
Fields are immutable after construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.stats import multivariate_normal

from .errors import InvalidSpec, MassLeakage, NonPositiveField, GridMismatch

# Strictly-positive floor applied to discretized densities, relative to the
# field maximum. Far below any tolerance used anywhere in the package.
DENSITY_FLOOR_REL = 1e-30


class PositivityClass(Enum):
    ARBITRARY = "arbitrary"
    NONNEGATIVE = "nonnegative"
    STRICTLY_POSITIVE = "strictly_positive"


@dataclass(frozen=True)
class SpatialGrid:
    """Axis-aligned box [lo_k, hi_k] with n_k nodes per axis (n_k >= 4)."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    counts: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.counts)

    @cached_property
    def spacings(self) -> tuple[float, ...]:
        return tuple(
            (hi - lo) / (n - 1)
            for lo, hi, n in zip(self.lower, self.upper, self.counts)
        )

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.counts))

    @property
    def widths(self) -> tuple[float, ...]:
        return tuple(hi - lo for lo, hi in zip(self.lower, self.upper))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        axs = tuple(
            np.linspace(lo, hi, n)
            for lo, hi, n in zip(self.lower, self.upper, self.counts)
        )
        for a in axs:
            a.setflags(write=False)
        return axs

    @cached_property
    def points(self) -> np.ndarray:
        """All node coordinates, shape (num_nodes, dim), C node order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        pts.setflags(write=False)
        return pts

    @cached_property
    def quadrature_weights(self) -> np.ndarray:
        """Trapezoidal weights per node (tensor product), shape (num_nodes,)."""
        per_axis = []
        for n, h in zip(self.counts, self.spacings):
            w = np.full(n, h)
            w[0] = w[-1] = h / 2
            per_axis.append(w)
        w = per_axis[0]
        for wa in per_axis[1:]:
            w = np.multiply.outer(w, wa)
        w = w.ravel()
        w.setflags(write=False)
        return w

    def reshape(self, values: np.ndarray) -> np.ndarray:
        """View a flat node vector as the (n_1, ..., n_d) array."""
        return values.reshape(self.counts)


def make_grid(
    lower: "tuple[float, ...] | list[float]",
    upper: "tuple[float, ...] | list[float]",
    counts: "tuple[int, ...] | list[int]",
) -> SpatialGrid:
    """Validate a grid spec and derive spacings.

    Raises:
        InvalidSpec: mismatched lengths, unordered bounds, counts < 4, or
            dimension outside {1, 2, 3}.
    """
    lower, upper, counts = tuple(map(float, lower)), tuple(map(float, upper)), tuple(
        map(int, counts)
    )
    if not (len(lower) == len(upper) == len(counts)):
        raise InvalidSpec("lower/upper/counts lengths differ")
    if len(counts) not in (1, 2, 3):
        raise InvalidSpec(f"dimension {len(counts)} not in 1..3")
    for lo, hi, n in zip(lower, upper, counts):
        if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
            raise InvalidSpec(f"bounds [{lo}, {hi}] not strictly ordered")
        if n < 4:
            raise InvalidSpec(f"need >= 4 nodes per axis, got {n}")
    return SpatialGrid(lower, upper, counts)


@dataclass(frozen=True)
class ScalarField:
    """One real value per grid node (flat, C node order)."""

    grid: SpatialGrid
    values: np.ndarray
    positivity: PositivityClass = PositivityClass.ARBITRARY

    def __post_init__(self) -> None:
        vals = np.ascontiguousarray(self.values, dtype=float).ravel()
        if vals.shape[0] != self.grid.num_nodes:
            raise GridMismatch(
                f"{vals.shape[0]} values for {self.grid.num_nodes} nodes"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidSpec("field contains non-finite entries")
        if self.positivity is PositivityClass.NONNEGATIVE and np.any(vals < 0):
            raise NonPositiveField("declared nonnegative but has negative entries")
        if self.positivity is PositivityClass.STRICTLY_POSITIVE and np.any(
            vals <= 0
        ):
            raise NonPositiveField("declared strictly positive but has entries <= 0")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def shaped(self) -> np.ndarray:
        return self.grid.reshape(self.values)


@dataclass(frozen=True)
class VectorField:
    """One d-vector per grid node, shape (num_nodes, d)."""

    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.ascontiguousarray(self.values, dtype=float)
        if vals.shape != (self.grid.num_nodes, self.grid.dim):
            raise GridMismatch(
                f"vector values shape {vals.shape} != "
                f"({self.grid.num_nodes}, {self.grid.dim})"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidSpec("vector field contains non-finite entries")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class GaussianMixture:
    """Endpoint density spec: sum_i w_i N(mean_i, cov_i), weights sum to 1."""

    weights: tuple[float, ...]
    means: tuple[tuple[float, ...], ...]
    covs: tuple[tuple[tuple[float, ...], ...], ...]

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.size == 0 or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidSpec("mixture weights must be positive and sum to 1")
        if not (len(self.weights) == len(self.means) == len(self.covs)):
            raise InvalidSpec("mixture component counts differ")
        for c in self.covs:
            cov = np.asarray(c, dtype=float)
            if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
                raise InvalidSpec("covariance not symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise InvalidSpec("covariance not positive-definite") from None

    @property
    def dim(self) -> int:
        return len(self.means[0])

    def mean(self) -> np.ndarray:
        w = np.asarray(self.weights)
        return np.sum(w[:, None] * np.asarray(self.means, dtype=float), axis=0)

    def pdf(self, pts: np.ndarray) -> np.ndarray:
        out = np.zeros(pts.shape[0])
        for w, m, c in zip(self.weights, self.means, self.covs):
            out += w * multivariate_normal.pdf(
                pts, mean=np.asarray(m), cov=np.asarray(c)
            )
        return np.atleast_1d(out)

    def mass_in_box(self, grid: SpatialGrid) -> float:
        """Analytic mixture probability of the grid box."""
        total = 0.0
        for w, m, c in zip(self.weights, self.means, self.covs):
            rv = multivariate_normal(mean=np.asarray(m), cov=np.asarray(c))
            total += w * float(
                rv.cdf(np.asarray(grid.upper), lower_limit=np.asarray(grid.lower))
            )
        return total


def integrate(f: ScalarField) -> float:
    """Trapezoidal quadrature of f over the grid box.

    Pairwise (numpy) summation keeps the result independent of any
    thread-level parallelism elsewhere in the package.
    """
    return float(np.sum(f.grid.quadrature_weights * f.values))


def discretize_density(mix: GaussianMixture, grid: SpatialGrid) -> ScalarField:
    """Nodewise mixture evaluation, floored and renormalized to unit mass.

    Raises:
        MassLeakage: more than 1% of the analytic mass lies outside the box
            (endpoint densities must be effectively compactly supported).
        InvalidSpec: mixture/grid dimension mismatch.
    """
    if mix.dim != grid.dim:
        raise InvalidSpec(f"mixture dim {mix.dim} != grid dim {grid.dim}")
    inside = mix.mass_in_box(grid)
    if inside < 0.99:
        raise MassLeakage(
            f"only {inside:.4f} of the mixture mass lies inside the grid box"
        )
    vals = mix.pdf(grid.points)
    vals = np.maximum(vals, DENSITY_FLOOR_REL * vals.max())
    f = ScalarField(grid, vals, PositivityClass.STRICTLY_POSITIVE)
    return ScalarField(
        grid, vals / integrate(f), PositivityClass.STRICTLY_POSITIVE
    )


def normalize_density(f: ScalarField) -> ScalarField:
    """Floor at the relative density floor and renormalize to unit mass."""
    vals = np.maximum(f.values, DENSITY_FLOOR_REL * f.values.max())
    g = ScalarField(f.grid, vals, PositivityClass.STRICTLY_POSITIVE)
    return ScalarField(
        f.grid, vals / integrate(g), PositivityClass.STRICTLY_POSITIVE
    )


def _axis_derivative(shaped: np.ndarray, h: float, axis: int) -> np.ndarray:
    # np.gradient: central differences interior, one-sided O(h^2) at edges.
    return np.gradient(shaped, h, axis=axis, edge_order=2)


def gradient_log(f: ScalarField) -> VectorField:
    """Finite-difference gradient of log f (strictly positive f required).

    Central differences in the interior, second-order one-sided at the box
    faces. Scale-invariant: gradient_log(c*f) == gradient_log(f) for c > 0
    up to rounding.
    """
    if np.any(f.values <= 0):
        raise NonPositiveField("gradient_log requires a strictly positive field")
    logf = np.log(f.grid.reshape(f.values))
    comps = [
        _axis_derivative(logf, h, ax).ravel()
        for ax, h in enumerate(f.grid.spacings)
    ]
    return VectorField(f.grid, np.stack(comps, axis=1))


def gradient(f: ScalarField) -> VectorField:
    """Finite-difference gradient of f (same stencils as gradient_log)."""
    shaped = f.grid.reshape(f.values)
    comps = [
        _axis_derivative(shaped, h, ax).ravel()
        for ax, h in enumerate(f.grid.spacings)
    ]
    return VectorField(f.grid, np.stack(comps, axis=1))


def laplacian(f: ScalarField) -> ScalarField:
    """Second-order Laplacian; one-sided second differences at the faces."""
    shaped = f.grid.reshape(f.values)
    out = np.zeros_like(shaped)
    for ax, h in enumerate(f.grid.spacings):
        d2 = np.empty_like(shaped)
        sl = [slice(None)] * shaped.ndim

        def at(idx):
            s = list(sl)
            s[ax] = idx
            return tuple(s)

        d2[at(slice(1, -1))] = (
            shaped[at(slice(2, None))]
            - 2 * shaped[at(slice(1, -1))]
            + shaped[at(slice(None, -2))]
        )
        d2[at(0)] = shaped[at(0)] - 2 * shaped[at(1)] + shaped[at(2)]
        d2[at(-1)] = shaped[at(-1)] - 2 * shaped[at(-2)] + shaped[at(-3)]
        out += d2 / h**2
    return ScalarField(f.grid, out.ravel())


def l1_norm(f: ScalarField) -> float:
    """Quadrature L1 norm ||f||_1 = integral of |f| over the box."""
    return float(np.sum(f.grid.quadrature_weights * np.abs(f.values)))


def field_mean(rho: ScalarField) -> np.ndarray:
    """Density-weighted spatial mean, shape (dim,)."""
    w = rho.grid.quadrature_weights * rho.values
    return (w @ rho.grid.points) / np.sum(w)
