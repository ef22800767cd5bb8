"""Run configuration: YAML parsing, validation, and unit scaling.

Configs are written in physical units (km, s, km^2/s). The unit_scale pair
(length_unit_km, time_unit_s) nondimensionalizes everything at ingestion:
the solver then operates in scaled units where the reaction-exponent guard
is satisfiable, and all outputs are written in scaled units. Every
precondition checkable before computation is enforced here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .bridge import SolverOptions
from .errors import ParseError, ValidationError
from .grid import GaussianMixture, SpatialGrid, make_grid, InvalidSpec
from .potential import (
    J2_EARTH,
    MU_EARTH,
    R_EARTH,
    Potential,
    PotentialKind,
)
from .propagator import KernelMethod

MODES = ("bridge", "baseline", "both")


@dataclass(frozen=True)
class BaselineOptions:
    dt: float = 1e-3
    tol: float = 1e-10
    max_newton: int = 50
    v0_guess: tuple[float, ...] | None = None
    max_mean_deviation: float | None = None


@dataclass(frozen=True)
class RunConfig:
    """Validated, fully scaled problem statement for one run."""

    mode: str
    seed: int
    threads: int
    output_dir: Path
    length_unit_km: float
    time_unit_s: float
    potential: Potential
    grid: SpatialGrid
    rho0_mixture: GaussianMixture | None
    rho1_mixture: GaussianMixture | None
    rho0_file: Path | None
    rho1_file: Path | None
    epsilon: float
    t0: float
    t1: float
    solver: SolverOptions
    baseline: BaselineOptions
    snapshots: int
    dump_kernel: bool
    raw: dict = field(repr=False, default_factory=dict)

    def snapshot_times(self) -> tuple[float, ...]:
        return tuple(
            self.t0 + k * (self.t1 - self.t0) / (self.snapshots - 1)
            for k in range(self.snapshots)
        )


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


def _get(d: dict, key: str, default=None):
    v = d.get(key, default)
    return default if v is None else v


def _scaled_mixture(spec: list, length: float) -> GaussianMixture:
    weights, means, covs = [], [], []
    for comp in spec:
        weights.append(float(comp["weight"]))
        means.append(tuple(float(x) / length for x in comp["mean"]))
        cov = np.asarray(comp["cov"], dtype=float) / length**2
        covs.append(tuple(tuple(row) for row in cov))
    try:
        return GaussianMixture(tuple(weights), tuple(means), tuple(covs))
    except InvalidSpec as exc:
        raise ValidationError(str(exc)) from exc


def parse_config(path: "str | Path") -> RunConfig:
    """Load, validate, and nondimensionalize a run config.

    Raises:
        ParseError: unreadable file or malformed YAML.
        ValidationError: a named precondition is violated.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"config root must be a mapping, got {type(raw).__name__}")

    mode = _get(raw, "mode", "bridge")
    _require(mode in MODES, f"mode must be one of {MODES}, got {mode!r}")
    seed = int(_get(raw, "seed", 0))
    threads = int(_get(raw, "threads", 1))
    _require(threads >= 1, f"threads must be >= 1, got {threads}")

    us = _get(raw, "unit_scale", {})
    length = float(_get(us, "length_unit_km", 1.0))
    time_u = float(_get(us, "time_unit_s", 1.0))
    _require(length > 0 and time_u > 0, "unit_scale entries must be > 0")

    # --- potential (defaults: Earth constants) ---
    pot_raw = _get(raw, "potential", {})
    kind_name = str(_get(pot_raw, "kind", "kepler_j2")).lower()
    try:
        kind = PotentialKind(kind_name)
    except ValueError:
        raise ValidationError(f"unknown potential kind {kind_name!r}") from None
    _require(kind is not PotentialKind.CUSTOM, "custom potentials are API-only")
    mu = float(_get(pot_raw, "mu", MU_EARTH)) * time_u**2 / length**3
    j2 = float(_get(pot_raw, "j2", J2_EARTH))
    r_earth = float(_get(pot_raw, "r_earth", R_EARTH)) / length
    r_min = float(_get(pot_raw, "r_min", _get(pot_raw, "r_earth", R_EARTH))) / length
    quad_k = float(_get(pot_raw, "quad_stiffness", 0.0)) * time_u**2
    quad_c = tuple(
        float(x) / length for x in _get(pot_raw, "quad_center", ())
    )
    try:
        potential = Potential(
            kind=kind,
            mu=mu,
            j2=j2,
            r_earth=r_earth,
            r_min=r_min,
            quad_stiffness=quad_k,
            quad_center=quad_c,
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc

    # --- grid ---
    grid_raw = _get(raw, "grid", None)
    _require(isinstance(grid_raw, dict), "grid section is required")
    try:
        grid = make_grid(
            [float(x) / length for x in grid_raw["lower"]],
            [float(x) / length for x in grid_raw["upper"]],
            grid_raw["counts"],
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"grid spec incomplete: {exc}") from exc
    except InvalidSpec as exc:
        raise ValidationError(str(exc)) from exc

    # --- endpoint densities ---
    def density(which: str):
        sec = _get(raw, which, None)
        _require(isinstance(sec, dict), f"{which} section is required")
        if "file" in sec and sec["file"]:
            return None, Path(sec["file"])
        _require("mixture" in sec, f"{which} needs a mixture or a file")
        mix = _scaled_mixture(sec["mixture"], length)
        _require(
            mix.dim == grid.dim,
            f"{which} mixture dimension {mix.dim} != grid dimension {grid.dim}",
        )
        inside = mix.mass_in_box(grid)
        _require(
            inside >= 0.99,
            f"{which}: only {inside:.4f} of the mixture mass lies inside the "
            "grid box (must be >= 0.99)",
        )
        return mix, None

    rho0_mix, rho0_file = density("rho0")
    rho1_mix, rho1_file = density("rho1")

    # --- window and noise ---
    eps_raw = _get(raw, "epsilon", None)
    _require(eps_raw is not None, "epsilon is required")
    epsilon = float(eps_raw) * time_u / length**2
    _require(
        epsilon > 0,
        "epsilon must be > 0 (the zero-noise problem is the small-epsilon "
        "limit: rerun with a small positive epsilon in scaled units)",
    )
    _require(raw.get("t1") is not None, "t1 is required")
    t0 = float(_get(raw, "t0", 0.0)) / time_u
    t1 = float(raw["t1"]) / time_u
    _require(t1 > t0, f"t1 must exceed t0 (scaled: {t1} <= {t0})")

    diff_len = math.sqrt(2.0 * epsilon * (t1 - t0))
    for w in grid.widths:
        _require(
            diff_len <= 0.25 * w,
            f"diffusion length {diff_len:.4g} exceeds a quarter of box width "
            f"{w:.4g}; widen the grid box or rescale",
        )

    # --- solver options ---
    s = _get(raw, "solver", {})
    method_name = str(_get(s, "kernel_method", "split_step")).lower()
    try:
        method = KernelMethod(method_name)
    except ValueError:
        raise ValidationError(f"unknown kernel_method {method_name!r}") from None
    nsteps = int(_get(s, "nsteps", 16))
    _require(nsteps >= 1, "solver.nsteps must be >= 1")
    fk_dt_raw = _get(s, "fk_dt", None)
    solver = SolverOptions(
        max_iters=int(_get(s, "max_iters", 2000)),
        tol_hilbert=float(_get(s, "tol_hilbert", 1e-9)),
        tol_marginal=float(_get(s, "tol_marginal", 0.0)),
        nsteps=nsteps,
        kernel_method=method,
        symmetrize=bool(_get(s, "symmetrize", True)),
        seed=seed,
        fk_npaths=int(_get(s, "fk_npaths", 100_000)),
        fk_dt=(float(fk_dt_raw) / time_u) if fk_dt_raw is not None else None,
        threads=threads,
    )
    _require(solver.max_iters >= 1, "solver.max_iters must be >= 1")
    _require(solver.tol_hilbert > 0, "solver.tol_hilbert must be > 0")

    snapshots = int(_get(raw, "snapshots", 5))
    _require(snapshots >= 2, "snapshots must be >= 2")
    _require(
        nsteps % (snapshots - 1) == 0,
        f"solver.nsteps={nsteps} must be divisible by snapshots-1={snapshots - 1} "
        "so snapshot times sit on the substep lattice",
    )

    b = _get(raw, "baseline", {})
    guess = _get(b, "v0_guess", None)
    baseline = BaselineOptions(
        dt=float(_get(b, "dt", 1e-3 * (t1 - t0) * time_u)) / time_u,
        tol=float(_get(b, "tol", 1e-10)),
        max_newton=int(_get(b, "max_newton", 50)),
        v0_guess=(
            tuple(float(x) * time_u / length for x in guess)
            if guess is not None
            else None
        ),
        max_mean_deviation=(
            float(b["max_mean_deviation"]) / length
            if _get(b, "max_mean_deviation") is not None
            else None
        ),
    )
    _require(baseline.dt > 0, "baseline.dt must be > 0")

    out_dir = Path(_get(raw, "output_dir", "runs/" + path.stem))
    return RunConfig(
        mode=mode,
        seed=seed,
        threads=threads,
        output_dir=out_dir,
        length_unit_km=length,
        time_unit_s=time_u,
        potential=potential,
        grid=grid,
        rho0_mixture=rho0_mix,
        rho1_mixture=rho1_mix,
        rho0_file=rho0_file,
        rho1_file=rho1_file,
        epsilon=epsilon,
        t0=t0,
        t1=t1,
        solver=solver,
        baseline=baseline,
        snapshots=snapshots,
        dump_kernel=bool(_get(s, "dump_kernel", False)),
        raw=raw,
    )
