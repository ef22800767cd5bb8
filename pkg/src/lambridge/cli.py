"""End-to-end runs from a config file: build, solve, recover, persist.

Exit codes (also shown by --help):
  0  run completed and converged
  1  unexpected error
  2  solver hit max_iters without converging (outputs still written)
  3  config parse/validation error
  4  endpoint density mass leaks outside the grid box
  5  grid box too narrow or kernel under/overflow (rescale units)
  6  factor division blow-up (inconsistent endpoint supports)
  7  singularity guard violated (potential/trajectory)
  8  shooting Newton divergence
  9  field/grid/schedule misuse

Environment: LAMBRIDGE_THREADS and LAMBRIDGE_OUT override the config;
explicit command-line flags override both.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .bridge import BridgeProblem, solve_bridge
from .config import RunConfig, parse_config
from .errors import (
    DimensionMismatch,
    DivisionBlowup,
    DomainTooNarrow,
    GridMismatch,
    InvalidSpec,
    LambridgeError,
    MassLeakage,
    NewtonDivergence,
    NonFiniteKernel,
    NonPositiveField,
    ParseError,
    ScheduleTooCoarse,
    SingularityCrossing,
    SingularityError,
    UnalignedSnapshot,
    ValidationError,
)
from .grid import ScalarField, discretize_density, field_mean, normalize_density
from .lambert import LambertArc, shoot_lambert
from .recovery import recover_solution
from .runio import (
    dump_kernel,
    read_field_csv,
    write_arc_csv,
    write_convergence_csv,
    write_field_csv,
    write_manifest,
)

_EXIT_CODES: list[tuple[tuple, int]] = [
    ((ParseError, ValidationError), 3),
    ((MassLeakage,), 4),
    ((DomainTooNarrow, NonFiniteKernel), 5),
    ((DivisionBlowup,), 6),
    ((SingularityError, SingularityCrossing), 7),
    ((NewtonDivergence,), 8),
    (
        (
            InvalidSpec,
            GridMismatch,
            NonPositiveField,
            UnalignedSnapshot,
            ScheduleTooCoarse,
            DimensionMismatch,
        ),
        9,
    ),
]

_VEL_NAMES = ("vx", "vy", "vz")


def _exit_code_for(exc: LambridgeError) -> int:
    for classes, code in _EXIT_CODES:
        if isinstance(exc, classes):
            return code
    return 1


def _endpoint_density(cfg: RunConfig, which: str) -> ScalarField:
    mix = cfg.rho0_mixture if which == "rho0" else cfg.rho1_mixture
    file = cfg.rho0_file if which == "rho0" else cfg.rho1_file
    if mix is not None:
        return discretize_density(mix, cfg.grid)
    field = read_field_csv(file, cfg.grid)
    return normalize_density(field)


def _endpoint_mean(cfg: RunConfig, rho: ScalarField, which: str) -> np.ndarray:
    mix = cfg.rho0_mixture if which == "rho0" else cfg.rho1_mixture
    return mix.mean() if mix is not None else field_mean(rho)


def _run_baseline(cfg: RunConfig, r0: np.ndarray, r1: np.ndarray) -> LambertArc:
    b = cfg.baseline
    guess = np.asarray(b.v0_guess, dtype=float) if b.v0_guess is not None else None
    return shoot_lambert(
        cfg.potential,
        r0,
        r1,
        cfg.t0,
        cfg.t1,
        v0_guess=guess,
        tol=b.tol,
        max_newton=b.max_newton,
        dt=b.dt,
    )


def run(cfg: RunConfig) -> int:
    """Execute one run and persist outputs + manifest. Returns the exit code."""
    start = time.monotonic()
    run_dir = cfg.output_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    files: list[tuple[str, str]] = []
    summary: dict = {
        "mode": cfg.mode,
        "unit_scale": {
            "length_unit_km": cfg.length_unit_km,
            "time_unit_s": cfg.time_unit_s,
        },
    }
    exit_code = 0

    rho0 = _endpoint_density(cfg, "rho0")
    rho1 = _endpoint_density(cfg, "rho1")

    arc: LambertArc | None = None
    if cfg.mode in ("baseline", "both"):
        r0 = _endpoint_mean(cfg, rho0, "rho0")
        r1 = _endpoint_mean(cfg, rho1, "rho1")
        arc = _run_baseline(cfg, r0, r1)
        (run_dir / "baseline").mkdir(exist_ok=True)
        write_arc_csv(run_dir / "baseline" / "arc.csv", arc)
        files.append(("baseline/arc.csv", "deterministic shooting arc"))
        summary["baseline"] = {
            "v0": list(map(float, arc.v0)),
            "terminal_miss": arc.terminal_miss,
        }

    if cfg.mode in ("bridge", "both"):
        prob = BridgeProblem(
            rho0=rho0,
            rho1=rho1,
            epsilon=cfg.epsilon,
            t0=cfg.t0,
            t1=cfg.t1,
            potential=cfg.potential,
            grid=cfg.grid,
            options=cfg.solver,
        )
        kernel = prob.build_kernel()
        if cfg.dump_kernel:
            dump_kernel(run_dir / "kernel.lbkn", kernel)
            files.append(("kernel.lbkn", "dense propagation kernel"))
        # BLAS pinned to one thread: outputs must be bitwise independent of
        # the machine's thread configuration (coarse parallelism, with fixed
        # merge order, already happened inside the kernel build).
        with threadpool_limits(limits=1):
            pair, report = solve_bridge(prob, kernel)
            solution = recover_solution(pair, prob, report, cfg.snapshot_times())

        write_convergence_csv(run_dir / "convergence.csv", report)
        files.append(("convergence.csv", "per-iteration Hilbert distance and residuals"))

        snap_dir = run_dir / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for k, t in enumerate(solution.times):
            write_field_csv(snap_dir / f"t_{k}_rho.csv", solution.rho[k])
            files.append((f"snapshots/t_{k}_rho.csv", f"density at t={t:.12g}"))
            for ax in range(cfg.grid.dim):
                comp = ScalarField(cfg.grid, solution.velocity[k].values[:, ax])
                name = f"t_{k}_{_VEL_NAMES[ax]}.csv"
                write_field_csv(snap_dir / name, comp)
                files.append(
                    (f"snapshots/{name}", f"velocity {_VEL_NAMES[ax]} at t={t:.12g}")
                )
            write_field_csv(snap_dir / f"t_{k}_psi.csv", solution.psi[k])
            files.append((f"snapshots/t_{k}_psi.csv", f"value function at t={t:.12g}"))

        summary["convergence"] = {
            "converged": report.converged,
            "iterations": report.iterations,
            "final_hilbert_distance": report.hilbert_distances[-1]
            if report.hilbert_distances
            else None,
            "final_residual_rho1_L1": report.residuals_rho1[-1],
            "contraction_ratio": report.contraction_ratio,
        }
        summary["objective"] = solution.objective
        summary["mass_defects"] = list(map(float, solution.mass_defects))
        summary["snapshot_times"] = list(map(float, solution.times))
        if not report.converged:
            exit_code = 2

        if arc is not None:
            mean_path = solution.mean_path()
            arc_points = np.stack([arc.position_at(t) for t in solution.times])
            deviations = np.linalg.norm(mean_path - arc_points, axis=1)
            comparison = {
                "max_mean_deviation": float(np.max(deviations)),
                "per_snapshot_deviation": list(map(float, deviations)),
            }
            bound = cfg.baseline.max_mean_deviation
            if bound is not None:
                comparison["bound"] = bound
                comparison["within_bound"] = bool(np.max(deviations) <= bound)
            summary["baseline_comparison"] = comparison

    write_manifest(
        run_dir,
        cfg.raw,
        files,
        summary,
        __version__,
        time.monotonic() - start,
    )
    return exit_code


def _apply_overrides(
    cfg: RunConfig, args: argparse.Namespace, force_mode: str | None = None
) -> RunConfig:
    from dataclasses import replace

    out = cfg
    threads = getattr(args, "threads", None)
    if threads is None and os.environ.get("LAMBRIDGE_THREADS"):
        threads = int(os.environ["LAMBRIDGE_THREADS"])
    if threads is not None:
        out = replace(
            out, threads=threads, solver=replace(out.solver, threads=threads)
        )
    out_dir = getattr(args, "out_dir", None)
    if out_dir is None and os.environ.get("LAMBRIDGE_OUT"):
        out_dir = os.environ["LAMBRIDGE_OUT"]
    if out_dir is not None:
        out = replace(out, output_dir=Path(out_dir))
    seed = getattr(args, "seed", None)
    if seed is not None:
        out = replace(out, seed=seed, solver=replace(out.solver, seed=seed))
    if force_mode is not None:
        out = replace(out, mode=force_mode)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lambridge",
        description="Nonparametric probabilistic Lambert solver "
        "(stochastic density steering between endpoint position densities).",
        epilog=__doc__.split("Exit codes")[1].join(["Exit codes", ""]),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="solve the configured problem end to end")
    runp.add_argument("--config", required=True, help="YAML config path")
    runp.add_argument("--out-dir", default=None, help="output directory override")
    runp.add_argument("--seed", type=int, default=None, help="RNG seed override")
    runp.add_argument("--threads", type=int, default=None, help="worker threads")
    runp.add_argument(
        "--validate-only",
        action="store_true",
        help="parse and validate the config, then exit",
    )

    basep = sub.add_parser("baseline", help="run only the deterministic shooting arc")
    basep.add_argument("--config", required=True, help="YAML config path")
    basep.add_argument("--out-dir", default=None, help="output directory override")

    sub.add_parser("version", help="print the artifact version")
    return parser


def main(argv: "list[str] | None" = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "version":
        print(__version__)
        return 0
    try:
        cfg = parse_config(args.config)
        if args.command == "baseline":
            cfg = _apply_overrides(cfg, args, force_mode="baseline")
        else:
            cfg = _apply_overrides(cfg, args)
            if args.validate_only:
                print(f"config OK: {args.config}")
                return 0
        return run(cfg)
    except LambridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
