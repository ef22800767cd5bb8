"""Run-directory persistence: field CSVs, convergence log, manifest, kernel dump.

These formats are the consumption contract for external tooling (the viz
package reads them back without importing this code):

* field CSV: header ``x[,y[,z]],value``, one row per node in row-major
  (C) order with x outermost, decimal text with 17 significant digits;
* convergence log: ``iter,hilbert_dist,res_rho0_L1,res_rho1_L1``;
* baseline arc: ``t,x,y,z,vx,vy,vz`` (zero-padded below 3D);
* manifest.json: config echo, artifact version, per-file role + sha256,
  convergence summary, objective, wall clock;
* kernel dump: 32-byte header {magic "LBKN", dim, 3 per-axis counts
  (uint32, zero-padded), epsilon, t0, t1 (float32)} then the row-major
  float64 little-endian matrix.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .grid import ScalarField, SpatialGrid
from .lambert import LambertArc
from .propagator import KernelOperator

KERNEL_MAGIC = b"LBKN"
_AXIS_NAMES = ("x", "y", "z")


def sha256_of(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_field_csv(path: Path, field: ScalarField) -> None:
    grid = field.grid
    header = ",".join(_AXIS_NAMES[: grid.dim]) + ",value"
    cols = np.column_stack([grid.points, field.values])
    np.savetxt(path, cols, fmt="%.17g", delimiter=",", header=header, comments="")


def read_field_csv(path: Path, grid: SpatialGrid) -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    data = np.atleast_2d(data)
    if data.shape != (grid.num_nodes, grid.dim + 1):
        raise ValueError(
            f"{path}: shape {data.shape} does not match grid "
            f"({grid.num_nodes} nodes, dim {grid.dim})"
        )
    if not np.allclose(data[:, : grid.dim], grid.points, rtol=0, atol=1e-9):
        raise ValueError(f"{path}: node coordinates do not match the grid")
    return ScalarField(grid, data[:, grid.dim])


def write_convergence_csv(path: Path, report) -> None:
    lines = ["iter,hilbert_dist,res_rho0_L1,res_rho1_L1"]
    n = len(report.hilbert_distances)
    for i in range(n):
        r0 = report.residuals_rho0[i] if i < len(report.residuals_rho0) else float("nan")
        r1 = report.residuals_rho1[i] if i < len(report.residuals_rho1) else float("nan")
        lines.append(
            f"{i + 1},{report.hilbert_distances[i]:.17g},{r0:.17g},{r1:.17g}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_arc_csv(path: Path, arc: LambertArc) -> None:
    d = arc.positions.shape[1]
    pos = np.zeros((arc.times.size, 3))
    vel = np.zeros((arc.times.size, 3))
    pos[:, :d] = arc.positions
    vel[:, :d] = arc.velocities
    cols = np.column_stack([arc.times, pos, vel])
    np.savetxt(
        path,
        cols,
        fmt="%.17g",
        delimiter=",",
        header="t,x,y,z,vx,vy,vz",
        comments="",
    )


def dump_kernel(path: Path, kernel: KernelOperator) -> None:
    counts = list(kernel.grid.counts) + [0] * (3 - kernel.grid.dim)
    header = struct.pack(
        "<4sI3I3f",
        KERNEL_MAGIC,
        kernel.grid.dim,
        *counts,
        kernel.epsilon,
        kernel.t0,
        kernel.t1,
    )
    assert len(header) == 32
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(kernel.matrix, dtype="<f8").tobytes())


def load_kernel_header(path: Path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(32)
    magic, dim, n1, n2, n3, eps, t0, t1 = struct.unpack("<4sI3I3f", raw)
    if magic != KERNEL_MAGIC:
        raise ValueError(f"{path}: bad kernel magic {magic!r}")
    return {
        "dim": dim,
        "counts": (n1, n2, n3)[:dim],
        "epsilon": eps,
        "t0": t0,
        "t1": t1,
    }


def write_manifest(
    run_dir: Path,
    config_echo: dict,
    files: list[tuple[str, str]],
    summary: dict,
    version: str,
    wall_clock_s: float,
) -> Path:
    """Write manifest.json listing every emitted file with its checksum."""
    entries = []
    for rel, role in files:
        entries.append(
            {"name": rel, "role": role, "sha256": sha256_of(run_dir / rel)}
        )
    manifest = {
        "artifact_version": version,
        "config": config_echo,
        "files": entries,
        "summary": summary,
        "wall_clock_s": wall_clock_s,
    }
    path = run_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_manifest(run_dir: Path) -> dict:
    return json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
