"""Convex domains (balls and axis-aligned ellipsoids) and ray geometry.

All routines are vectorized over leading axes: ``x`` and ``v`` are arrays
of shape ``(..., 3)`` that broadcast against each other.  The exit time is
the backward one, ``tau_minus(x, v) = inf{t > 0 : x - t v not in Omega}``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRay, OutsideDomain

BOUNDARY_TOL = 1e-10
MIN_SPEED = 1e-14


@dataclass(frozen=True)
class BoundaryPoint:
    z: np.ndarray
    n: np.ndarray


@dataclass(frozen=True)
class ConvexDomain:
    """Ellipsoid ``sum_i (x_i / a_i)^2 <= 1``; a ball when all semi-axes agree."""

    semi_axes: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        axes = tuple(float(a) for a in self.semi_axes)
        if len(axes) != 3 or min(axes) <= 0 or not np.all(np.isfinite(axes)):
            raise ValueError(f"semi-axes must be three positive reals, got {self.semi_axes}")
        object.__setattr__(self, "semi_axes", axes)

    @classmethod
    def ball(cls, radius: float = 1.0) -> "ConvexDomain":
        return cls((radius, radius, radius))

    @classmethod
    def ellipsoid(cls, a: float, b: float, c: float) -> "ConvexDomain":
        return cls((a, b, c))

    @classmethod
    def from_spec(cls, spec: dict) -> "ConvexDomain":
        kind = spec.get("type", "ball")
        if kind == "ball":
            return cls.ball(float(spec.get("radius", 1.0)))
        if kind == "ellipsoid":
            return cls(tuple(spec["semi_axes"]))
        raise ValueError(f"unknown domain type {kind!r}")

    def to_spec(self) -> dict:
        a = self.semi_axes
        if a[0] == a[1] == a[2]:
            return {"type": "ball", "radius": a[0]}
        return {"type": "ellipsoid", "semi_axes": list(a)}

    @property
    def is_ball(self) -> bool:
        return self.semi_axes[0] == self.semi_axes[1] == self.semi_axes[2]

    @property
    def axes(self) -> np.ndarray:
        return np.asarray(self.semi_axes)

    @property
    def diameter(self) -> float:
        return 2.0 * max(self.semi_axes)

    @property
    def volume(self) -> float:
        a, b, c = self.semi_axes
        return 4.0 / 3.0 * np.pi * a * b * c

    def level(self, x) -> np.ndarray:
        """Surface function ``sum (x_i/a_i)^2``; 1 on the boundary."""
        y = np.asarray(x, dtype=float) / self.axes
        return np.einsum("...i,...i->...", y, y)

    def contains(self, x, tol: float = BOUNDARY_TOL) -> np.ndarray:
        return self.level(x) <= 1.0 + tol

    def normal(self, z) -> np.ndarray:
        """Outward unit normal at boundary points ``z``."""
        g = np.asarray(z, dtype=float) / self.axes**2
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def _check(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if np.any(np.linalg.norm(v, axis=-1) < MIN_SPEED):
            raise DegenerateRay("velocity below machine-scale threshold")
        if np.any(self.level(x) > 1.0 + BOUNDARY_TOL):
            raise OutsideDomain("point outside the domain")
        return x, v

    def exit_time(self, x, v) -> np.ndarray:
        """Backward exit time tau_-(x, v).

        Points within ``BOUNDARY_TOL`` of the surface count as boundary
        points; for those the result is 0 when ``v`` points inward.
        """
        x, v = self._check(x, v)
        return self._exit_time(x, v)

    def _exit_time(self, x, v):
        # |(x - t v)/a|^2 = 1  <=>  A t^2 - 2 B t + (C - 1) = 0
        ia2 = 1.0 / self.axes**2
        A = (v * v * ia2).sum(-1)
        B = (x * v * ia2).sum(-1)
        C = self.level(x)
        disc = np.maximum(B * B - A * np.minimum(C - 1.0, 0.0), 0.0)
        root = np.sqrt(disc)
        # stable form of (B + sqrt(disc)) / A
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(B >= 0, (B + root) / A, np.maximum(1.0 - C, 0.0) / (root - B))
        return np.maximum(t, 0.0)

    def forward_exit_time(self, x, v) -> np.ndarray:
        """tau_+(x, v) = tau_-(x, -v)."""
        return self.exit_time(x, -np.asarray(v, dtype=float))

    def exit_point(self, x, v) -> BoundaryPoint:
        """q(x, v) = x - tau_-(x, v) v with its outward normal."""
        x, v = self._check(x, v)
        t = self._exit_time(x, v)
        z = x - t[..., None] * v
        return BoundaryPoint(z=z, n=self.normal(z))

    def transversality(self, x, v) -> np.ndarray:
        """N(x, v) = |n(q(x, v)) . v| / |v|, in [0, 1]."""
        q = self.exit_point(x, v)
        v = np.asarray(v, dtype=float)
        c = np.abs(np.einsum("...i,...i->...", q.n, v)) / np.linalg.norm(v, axis=-1)
        return np.minimum(c, 1.0)

    def transversality_pair(self, x, y, v) -> np.ndarray:
        """N(x, y, v) = min(N(x, v), N(y, v))."""
        return np.minimum(self.transversality(x, v), self.transversality(y, v))

    def sample_interior(self, rng: np.random.Generator, n: int, shrink: float = 1.0) -> np.ndarray:
        """Uniform samples in the (optionally shrunken) domain."""
        u = rng.normal(size=(n, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = rng.random(n) ** (1.0 / 3.0) * shrink
        return u * r[:, None] * self.axes

    def surface_element(self, y) -> np.ndarray:
        """Area scaling dsigma_x / dsigma_y for the map y -> diag(a) y, |y| = 1."""
        y = np.asarray(y, dtype=float)
        a = self.axes
        return a.prod() * np.linalg.norm(y / a, axis=-1)
