"""Closed-form operations on the Poincaré ball of curvature -c.

Points and tangent vectors are float64 numpy arrays whose last axis holds the
coordinates, so every function broadcasts over leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BOUNDARY_EPS = 1e-12
NORM_EPS = 1e-15
REFLECT_EPS = 1e-12


class DomainError(ValueError):
    """A point lies on or outside the ball, or an input is not finite."""


@dataclass(frozen=True)
class BallConfig:
    dim: int = 2
    c: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dim}")
        if not self.c > 0:
            raise ValueError(f"curvature must be > 0, got {self.c}")

    @property
    def radius(self) -> float:
        return 1.0 / np.sqrt(self.c)


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite coordinates")
    return x


def _sqnorm(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1, keepdims=True)


def _check_inside(x: np.ndarray, c: float) -> None:
    if np.any(c * _sqnorm(x) >= 1.0):
        raise DomainError("point is not strictly inside the Poincaré ball")


def clamp_to_ball(x, c: float = 1.0) -> np.ndarray:
    """Pull points that rounding pushed within 1e-12 of the boundary back inside.

    Points with ``1 - c|x|^2 < 1e-12`` are rescaled so that ``c|x|^2 = 1 - 1e-12``;
    everything else is returned unchanged.
    """
    x = np.array(x, dtype=np.float64)
    sq = c * _sqnorm(x)
    over = sq > 1.0 - BOUNDARY_EPS
    if np.any(over):
        scale = np.sqrt((1.0 - BOUNDARY_EPS) / np.where(over, sq, 1.0))
        x = np.where(over, x * scale, x)
    return x


def conformal_factor(z, c: float = 1.0):
    z = _as_points(z)
    _check_inside(z, c)
    lam = 2.0 / (1.0 - c * np.sum(z * z, axis=-1))
    return float(lam) if lam.ndim == 0 else lam


def mobius_add(z, v, c: float = 1.0) -> np.ndarray:
    z = _as_points(z)
    v = _as_points(v)
    zv = np.sum(z * v, axis=-1, keepdims=True)
    z2 = _sqnorm(z)
    v2 = _sqnorm(v)
    num = (1.0 + 2.0 * c * zv + c * v2) * z + (1.0 - c * z2) * v
    den = 1.0 + 2.0 * c * zv + c * c * z2 * v2
    return clamp_to_ball(num / den, c)


def distance(z1, z2, c: float = 1.0):
    """Geodesic distance; broadcasts over leading axes."""
    z1 = _as_points(z1)
    z2 = _as_points(z2)
    _check_inside(z1, c)
    _check_inside(z2, c)
    diff = z1 - z2
    num = 2.0 * c * np.sum(diff * diff, axis=-1)
    den = (1.0 - c * np.sum(z1 * z1, axis=-1)) * (1.0 - c * np.sum(z2 * z2, axis=-1))
    x = num / den
    # acosh(1 + x) written to stay accurate for tiny x
    d = np.log1p(x + np.sqrt(x * (x + 2.0))) / np.sqrt(c)
    return float(d) if d.ndim == 0 else d


def exp_map(base, v, c: float = 1.0) -> np.ndarray:
    base = _as_points(base)
    v = _as_points(v)
    _check_inside(base, c)
    base, v = np.broadcast_arrays(base, v)
    vnorm = np.sqrt(_sqnorm(v))
    small = vnorm < NORM_EPS
    sc = np.sqrt(c)
    lam = 2.0 / (1.0 - c * _sqnorm(base))
    safe = np.where(small, 1.0, vnorm)
    step = np.tanh(sc * lam * safe / 2.0) * v / (sc * safe)
    out = mobius_add(base, np.where(small, 0.0, step), c)
    return np.where(small, base, out)


def log_map(base, y, c: float = 1.0) -> np.ndarray:
    base = _as_points(base)
    y = _as_points(y)
    _check_inside(base, c)
    _check_inside(y, c)
    w = mobius_add(-base, y, c)
    wnorm = np.sqrt(_sqnorm(w))
    small = wnorm < NORM_EPS
    safe = np.where(small, 0.5, wnorm)
    sc = np.sqrt(c)
    lam = 2.0 / (1.0 - c * _sqnorm(base))
    out = 2.0 / (sc * lam) * np.arctanh(sc * safe) * w / safe
    return np.where(small, 0.0, out)


def reflect_to_origin(z_q, targets, c: float = 1.0) -> np.ndarray:
    """Circle inversion that swaps ``z_q`` with the origin, applied to ``targets``.

    The inversion circle is centred at ``u = z_q / |z_q|^2`` (in unit-curvature
    coordinates) and meets the boundary at right angles, so the map is a
    hyperbolic isometry and its own inverse. Coordinates are rescaled by
    ``sqrt(c)`` before and after so the same map works for any curvature.
    A ``z_q`` within 1e-12 of the origin gives the identity map.
    """
    z_q = _as_points(z_q)
    targets = _as_points(targets)
    _check_inside(z_q, c)
    _check_inside(targets, c)
    sc = np.sqrt(c)
    q = sc * z_q
    q2 = float(np.dot(q, q))
    if np.sqrt(q2) < REFLECT_EPS:
        return targets.copy()
    u = q / q2
    d = sc * targets - u
    d2 = _sqnorm(d)
    if np.any(d2 == 0.0):
        raise DomainError("target coincides with the inversion centre")
    out = u + (np.dot(u, u) - 1.0) / d2 * d
    return clamp_to_ball(out / sc, c)


def origin_distance(r, c: float = 1.0):
    """Distance from the origin to any point of Euclidean norm ``r``."""
    sc = np.sqrt(c)
    return 2.0 / sc * np.arctanh(sc * np.asarray(r, dtype=np.float64))
