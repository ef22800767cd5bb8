"""Deterministic Lambert baseline: fixed-step RK4 plus Newton shooting.

Solves r'' = -grad V(r), r(t0) = r0, r(t1) = r1 for the initial velocity.
RK4 with finite-difference Newton handles the oblateness-corrected
potential, for which conic closed forms do not apply. Single-revolution
branch only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NewtonDivergence, SingularityCrossing, SingularityError
from .potential import Potential


@dataclass(frozen=True)
class LambertArc:
    """Shooting solution: initial velocity plus the sampled trajectory."""

    r0: np.ndarray
    r1: np.ndarray
    t0: float
    t1: float
    v0: np.ndarray
    times: np.ndarray
    positions: np.ndarray  # (n, d)
    velocities: np.ndarray  # (n, d)
    terminal_miss: float

    def position_at(self, t: float) -> np.ndarray:
        """Linear interpolation of the sampled path at time t."""
        out = np.empty(self.positions.shape[1])
        for k in range(out.size):
            out[k] = np.interp(t, self.times, self.positions[:, k])
        return out


def _accel(potential: Potential, r: np.ndarray) -> np.ndarray:
    try:
        return -np.asarray(potential.gradient(r), dtype=float)
    except SingularityError as exc:
        raise SingularityCrossing(str(exc)) from exc


def integrate_ode(
    potential: Potential,
    r0: np.ndarray,
    v0: np.ndarray,
    t0: float,
    t1: float,
    dt: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Classical RK4 on (r' = v, v' = -grad V), fixed step.

    The final step is shortened to land exactly on t1. Raises
    SingularityCrossing if any stage evaluation enters the guard radius.
    Returns (times, positions, velocities).
    """
    if dt <= 0 or t1 <= t0:
        raise ValueError("need dt > 0 and t1 > t0")
    r = np.asarray(r0, dtype=float).copy()
    v = np.asarray(v0, dtype=float).copy()
    times = [t0]
    rs = [r.copy()]
    vs = [v.copy()]
    t = t0
    while t < t1 - 1e-15 * max(abs(t1), 1.0):
        h = min(dt, t1 - t)
        k1r, k1v = v, _accel(potential, r)
        k2r, k2v = v + 0.5 * h * k1v, _accel(potential, r + 0.5 * h * k1r)
        k3r, k3v = v + 0.5 * h * k2v, _accel(potential, r + 0.5 * h * k2r)
        k4r, k4v = v + h * k3v, _accel(potential, r + h * k3r)
        r = r + h / 6.0 * (k1r + 2 * k2r + 2 * k3r + k4r)
        v = v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        t += h
        times.append(t)
        rs.append(r.copy())
        vs.append(v.copy())
    return np.asarray(times), np.asarray(rs), np.asarray(vs)


def shoot_lambert(
    potential: Potential,
    r0: np.ndarray,
    r1: np.ndarray,
    t0: float,
    t1: float,
    v0_guess: np.ndarray | None = None,
    tol: float = 1e-10,
    max_newton: int = 50,
    dt: float = 1e-3,
) -> LambertArc:
    """Newton iteration on v0 -> r(t1; v0) - r1 with forward-difference Jacobian.

    The default guess is the straight-line velocity (r1 - r0)/(t1 - t0),
    which is exact for the zero potential (the shooting map is then linear
    and one Newton step lands it). No multi-revolution enumeration.

    Raises:
        NewtonDivergence: miss norm fails to reach tol within max_newton
            iterations or grows persistently.
        SingularityCrossing: a trial trajectory entered the guard radius.
    """
    r0 = np.asarray(r0, dtype=float)
    r1 = np.asarray(r1, dtype=float)
    d = r0.size
    v = (
        np.asarray(v0_guess, dtype=float).copy()
        if v0_guess is not None
        else (r1 - r0) / (t1 - t0)
    )

    def terminal(v0: np.ndarray) -> np.ndarray:
        _, rs, _ = integrate_ode(potential, r0, v0, t0, t1, dt)
        return rs[-1]

    scale = max(float(np.linalg.norm(v)), float(np.linalg.norm(r1 - r0)) / (t1 - t0), 1e-12)
    miss_prev = np.inf
    bad_streak = 0
    for _ in range(max_newton):
        miss_vec = terminal(v) - r1
        miss = float(np.linalg.norm(miss_vec))
        if miss <= tol:
            times, rs, vs = integrate_ode(potential, r0, v, t0, t1, dt)
            return LambertArc(r0, r1, t0, t1, v, times, rs, vs, miss)
        if miss > miss_prev * 1.5:
            bad_streak += 1
            if bad_streak >= 3:
                raise NewtonDivergence(
                    f"shooting miss grew to {miss:.3e} (started {scale:.3e})"
                )
        else:
            bad_streak = 0
        miss_prev = miss
        dv = 1e-7 * scale
        jac = np.empty((d, d))
        for k in range(d):
            probe = v.copy()
            probe[k] += dv
            jac[:, k] = (terminal(probe) - r1 - miss_vec) / dv
        try:
            step = np.linalg.solve(jac, miss_vec)
        except np.linalg.LinAlgError as exc:
            raise NewtonDivergence(f"singular shooting Jacobian: {exc}") from exc
        v = v - step
    raise NewtonDivergence(
        f"no convergence in {max_newton} Newton iterations (last miss {miss_prev:.3e})"
    )


def energy(potential: Potential, positions: np.ndarray, velocities: np.ndarray) -> np.ndarray:
    """Specific energy |v|^2/2 + V(r) along a sampled path (first integral)."""
    kinetic = 0.5 * np.sum(velocities**2, axis=1)
    pot = np.asarray(potential.evaluate(positions), dtype=float)
    return kinetic + pot
