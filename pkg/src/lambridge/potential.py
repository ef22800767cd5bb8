"""Gravitational / state-cost potentials and their gradients.

The built-in kinds are the Earth potential with the leading oblateness
correction (Kepler + J2), a negative-definite quadratic well used by the
numerical tests, the zero potential, and an opaque user-supplied callable.
All built-ins keep V <= 0 on their domain so the reaction coefficient
V/(2*eps) acts as a killing rate in the propagator.

Positions are d-vectors with d in {1, 2, 3}; for d < 3 the oblateness term
is evaluated with z = 0 so planar test problems stay meaningful.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, SingularityError

# Earth constants (km^3/s^2, -, km).
MU_EARTH = 398600.4415
J2_EARTH = 1.08263e-3
R_EARTH = 6378.1363


class PotentialKind(Enum):
    KEPLER_J2 = "kepler_j2"
    QUADRATIC = "quadratic"
    ZERO = "zero"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Potential:
    """Evaluable potential field V(r) with analytic gradient.

    For ``KEPLER_J2``::

        V(r) = -mu/|r| - mu*J2*Re^2 / (2|r|^3) * (1 - 3 z^2/|r|^2)

    which is strictly negative for |r| >= Re. The quadratic kind is
    ``-0.5 * k * |r - c|^2`` (negative definite, same sign convention).
    ``custom_eval``/``custom_grad`` supply an arbitrary C^1 potential.
    """

    kind: PotentialKind = PotentialKind.KEPLER_J2
    mu: float = MU_EARTH
    j2: float = J2_EARTH
    r_earth: float = R_EARTH
    r_min: float = R_EARTH
    quad_stiffness: float = 0.0
    quad_center: tuple[float, ...] = ()
    custom_eval: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, repr=False
    )
    custom_grad: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, repr=False
    )

    def __post_init__(self) -> None:
        if self.kind is PotentialKind.KEPLER_J2:
            if self.mu <= 0:
                raise ValueError(f"mu must be > 0, got {self.mu}")
            if self.r_earth <= 0:
                raise ValueError(f"r_earth must be > 0, got {self.r_earth}")
            if self.r_min < self.r_earth * 1e-3:
                raise ValueError(
                    f"r_min={self.r_min} below guard floor {self.r_earth * 1e-3}"
                )
        if self.kind is PotentialKind.CUSTOM and self.custom_eval is None:
            raise ValueError("custom potential requires custom_eval")

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Evaluate V at one point (shape (d,)) or a batch (shape (m, d)).

        Returns a scalar array () for a single point, (m,) for a batch.

        Raises:
            SingularityError: Kepler-J2 point inside the guard radius r_min.
            DimensionMismatch: d not in {1, 2, 3} or inconsistent with the
                quadratic center.
        """
        pts = _as_batch(points)
        d = pts.shape[1]
        if self.kind is PotentialKind.ZERO:
            out = np.zeros(pts.shape[0])
        elif self.kind is PotentialKind.QUADRATIC:
            c = self._center(d)
            out = -0.5 * self.quad_stiffness * np.sum((pts - c) ** 2, axis=1)
        elif self.kind is PotentialKind.KEPLER_J2:
            r = np.linalg.norm(pts, axis=1)
            self._guard(r)
            z = pts[:, 2] if d == 3 else np.zeros(pts.shape[0])
            bracket = 1.0 - 3.0 * z**2 / r**2
            out = -self.mu / r - self.mu * self.j2 * self.r_earth**2 / (
                2.0 * r**3
            ) * bracket
        else:
            out = np.asarray(self.custom_eval(pts), dtype=float)
        return out[0] if np.ndim(points) == 1 else out

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """Analytic gradient of :meth:`evaluate`, shape matching the input."""
        pts = _as_batch(points)
        d = pts.shape[1]
        if self.kind is PotentialKind.ZERO:
            out = np.zeros_like(pts)
        elif self.kind is PotentialKind.QUADRATIC:
            out = -self.quad_stiffness * (pts - self._center(d))
        elif self.kind is PotentialKind.KEPLER_J2:
            r = np.linalg.norm(pts, axis=1)
            self._guard(r)
            z = pts[:, 2] if d == 3 else np.zeros(pts.shape[0])
            a = self.mu * self.j2 * self.r_earth**2 / 2.0
            # grad(-mu/|r|) = mu r/|r|^3 ; J2 part differentiated termwise.
            out = self.mu * pts / r[:, None] ** 3
            out += 3.0 * a * pts / r[:, None] ** 5
            out -= 15.0 * a * (z**2)[:, None] * pts / r[:, None] ** 7
            if d == 3:
                out[:, 2] += 6.0 * a * z / r**5
        else:
            if self.custom_grad is None:
                out = _fd_gradient(self.custom_eval, pts)
            else:
                out = np.asarray(self.custom_grad(pts), dtype=float)
        return out[0] if np.ndim(points) == 1 else out

    def shifted(self, offset: float) -> "Potential":
        """Custom potential V(r) + offset wrapping this one (for gauge tests)."""
        return Potential(
            kind=PotentialKind.CUSTOM,
            custom_eval=lambda pts: self.evaluate(pts) + offset,
            custom_grad=lambda pts: self.gradient(pts),
        )

    # -- internals ----------------------------------------------------------

    def _center(self, d: int) -> np.ndarray:
        if not self.quad_center:
            return np.zeros(d)
        c = np.asarray(self.quad_center, dtype=float)
        if c.shape != (d,):
            raise DimensionMismatch(
                f"quad_center has dim {c.shape}, expected ({d},)"
            )
        return c

    def _guard(self, r: np.ndarray) -> None:
        if np.any(r < self.r_min):
            raise SingularityError(
                f"position radius {float(np.min(r)):.6g} below guard r_min={self.r_min}"
            )


def _as_batch(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] not in (1, 2, 3):
        raise DimensionMismatch(f"expected (d,) or (m,d) with d in 1..3, got {pts.shape}")
    return pts


def _fd_gradient(f: Callable, pts: np.ndarray, h: float = 1e-6) -> np.ndarray:
    out = np.zeros_like(pts)
    for k in range(pts.shape[1]):
        hi, lo = pts.copy(), pts.copy()
        hi[:, k] += h
        lo[:, k] -= h
        out[:, k] = (np.asarray(f(hi)) - np.asarray(f(lo))) / (2 * h)
    return out


def eval_potential(p: Potential, r: np.ndarray) -> float | np.ndarray:
    """Energy per unit mass V(r), km^2/s^2 (negative for the built-ins)."""
    return p.evaluate(r)


def grad_potential(p: Potential, r: np.ndarray) -> np.ndarray:
    """Gradient of V at r; the ODE acceleration is the negative of this."""
    return p.gradient(r)
