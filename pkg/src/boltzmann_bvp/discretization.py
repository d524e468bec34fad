"""Velocity and spatial quadrature grids, phase fields and interpolation.

Velocity nodes are ordered (radius a, polar index p, azimuth q) with q
fastest; the azimuths are uniform so that rotations about the third axis
by multiples of 2 pi / n_phi permute the grid.  Spatial nodes are a ball
product rule mapped onto the domain, followed by boundary nodes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import sparse
from scipy.spatial import Delaunay, cKDTree

from .errors import GridTooCoarse, OutsideDomain
from .geometry import BOUNDARY_TOL, ConvexDomain
from .params import PhysParams

TAIL = 1e-10


def default_v_max(alpha: float) -> float:
    """Smallest radius with exp(-(1/2 - alpha) v_max^2) = 1e-10, rounded up."""
    return math.ceil(math.sqrt(math.log(1.0 / TAIL) / (0.5 - alpha)) * 100.0) / 100.0


@dataclass(frozen=True, eq=False)
class VelocityGrid:
    v_max: float
    radii: np.ndarray
    radial_weights: np.ndarray   # includes r^2
    mu: np.ndarray
    mu_weights: np.ndarray
    phi: np.ndarray
    points: np.ndarray           # (N, 3)
    weights: np.ndarray          # (N,)

    @property
    def n_r(self) -> int:
        return self.radii.size

    @property
    def n_ang(self) -> int:
        return self.mu.size

    @property
    def n_phi(self) -> int:
        return self.phi.size

    @property
    def n_dir(self) -> int:
        return self.n_ang * self.n_phi

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_r, self.n_ang, self.n_phi)

    @property
    def speeds(self) -> np.ndarray:
        return np.repeat(self.radii, self.n_dir)

    @property
    def directions(self) -> np.ndarray:
        """Unit directions (n_ang * n_phi, 3), p-major."""
        st = np.sqrt(1.0 - self.mu**2)
        return np.stack([np.outer(st, np.cos(self.phi)), np.outer(st, np.sin(self.phi)),
                         np.outer(self.mu, np.ones_like(self.phi))], -1).reshape(-1, 3)

    @property
    def direction_weights(self) -> np.ndarray:
        return np.outer(self.mu_weights, np.full(self.n_phi, 2 * np.pi / self.n_phi)).ravel()

    def integrate(self, values) -> np.ndarray:
        """Quadrature over the last axis."""
        return np.asarray(values) @ self.weights

    def describe(self) -> dict:
        return {"n_r": self.n_r, "n_ang": self.n_ang, "n_phi": self.n_phi,
                "v_max": self.v_max}


def build_velocity_grid(params: PhysParams, n_r: int = 32, n_ang: int = 12,
                        v_max: float | None = None, check: bool = True) -> VelocityGrid:
    """Radial Gauss-Legendre on [0, v_max] times (Gauss-Legendre in cos theta) x (uniform phi).

    The azimuthal count is 2 * n_ang.  Raises :class:`GridTooCoarse` if the
    Gaussian mass check against pi^(3/2) misses by more than 1e-6.
    """
    if n_r < 8 or n_ang < 6:
        raise GridTooCoarse(f"need n_r >= 8 and n_ang >= 6, got {n_r}, {n_ang}")
    if v_max is None:
        v_max = default_v_max(params.alpha)
    x, w = leggauss(n_r)
    r = v_max * (x + 1.0) / 2.0
    wr = w * v_max / 2.0 * r * r
    mu, wm = leggauss(n_ang)
    n_phi = 2 * n_ang
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1.0 - mu**2)
    dirs = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)),
                     np.outer(mu, np.ones(n_phi))], -1).reshape(-1, 3)
    wd = np.outer(wm, np.full(n_phi, 2 * np.pi / n_phi)).ravel()
    points = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    weights = (wr[:, None] * wd[None, :]).ravel()
    grid = VelocityGrid(v_max=float(v_max), radii=r, radial_weights=wr, mu=mu, mu_weights=wm,
                        phi=phi, points=points, weights=weights)
    if check:
        mass = grid.integrate(np.exp(-r**2).repeat(grid.n_dir))
        if abs(mass / np.pi**1.5 - 1.0) > 1e-6:
            raise GridTooCoarse(f"Gaussian mass check failed: relative error {mass / np.pi**1.5 - 1:.2e}")
    return grid


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    domain: ConvexDomain
    interior: np.ndarray          # (n_int, 3)
    interior_weights: np.ndarray
    boundary: np.ndarray          # (n_bdry, 3)
    boundary_weights: np.ndarray  # surface measure
    normals: np.ndarray
    shape: tuple[int, int, int]
    _tri: dict = field(default_factory=dict, repr=False)

    @property
    def points(self) -> np.ndarray:
        """All collocation nodes: interior first, then boundary."""
        return np.concatenate([self.interior, self.boundary])

    @property
    def weights(self) -> np.ndarray:
        """Volume weights for all nodes (zero on the boundary)."""
        return np.concatenate([self.interior_weights, np.zeros(len(self.boundary))])

    @property
    def n_interior(self) -> int:
        return len(self.interior)

    @property
    def size(self) -> int:
        return len(self.interior) + len(self.boundary)

    def describe(self) -> dict:
        return {"n_rx": self.shape[0], "n_mux": self.shape[1], "n_phix": self.shape[2],
                "n_nodes": self.size, "domain": self.domain.to_spec()}

    @property
    def interpolator(self) -> "SpatialInterpolator":
        if "interp" not in self._tri:
            self._tri["interp"] = SpatialInterpolator(self.points, self.domain)
        return self._tri["interp"]


def build_spatial_grid(domain: ConvexDomain, n_rx: int = 6, n_mux: int = 8,
                       n_phix: int | None = None) -> SpatialGrid:
    """Ball product rule (Gauss radial x Gauss cos x uniform phi) mapped onto ``domain``.

    Boundary nodes sit on the surface at the same angular nodes, carrying
    surface-measure weights.
    """
    n_phix = n_phix or 2 * n_mux
    x, w = leggauss(n_rx)
    r = (x + 1.0) / 2.0
    wr = w / 2.0 * r * r
    mu, wm = leggauss(n_mux)
    phi = 2.0 * np.pi * (np.arange(n_phix) + 0.5) / n_phix
    st = np.sqrt(1.0 - mu**2)
    dirs = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)),
                     np.outer(mu, np.ones(n_phix))], -1).reshape(-1, 3)
    wd = np.outer(wm, np.full(n_phix, 2 * np.pi / n_phix)).ravel()
    a = domain.axes
    interior = (r[:, None, None] * dirs[None]).reshape(-1, 3) * a
    wint = (wr[:, None] * wd[None]).ravel() * a.prod()
    boundary = dirs * a
    wb = wd * domain.surface_element(dirs)
    return SpatialGrid(domain=domain, interior=interior, interior_weights=wint,
                       boundary=boundary, boundary_weights=wb,
                       normals=domain.normal(boundary), shape=(n_rx, n_mux, n_phix))


class SpatialInterpolator:
    """Piecewise-linear interpolation on a Delaunay triangulation of the nodes.

    Exact at nodes and for affine functions.  Points are located by a
    visibility walk started at a simplex of the nearest node.  A walk that
    leaves the node hull (possible near the curved surface) stops at the
    last simplex, whose affine interpolant is then extrapolated.
    """

    MAX_WALK = 60

    def __init__(self, points: np.ndarray, domain: ConvexDomain):
        self.points = np.asarray(points, dtype=float)
        self.domain = domain
        self.tri = Delaunay(self.points)
        if len(np.unique(self.tri.simplices)) != len(self.points):
            raise GridTooCoarse("degenerate spatial node set: some nodes are not triangulation vertices")
        self.tree = cKDTree(self.points)
        # product grids have co-circular node rings, which qhull triangulates
        # with some flat simplices; the walk uses only the others
        self.flat = np.isnan(self.tri.transform).any(axis=(1, 2))
        self.good = np.flatnonzero(~self.flat)
        self._start = self._vertex_start()
        self._nbr = self._good_neighbors()

    def _bary(self, s, x):
        T = self.tri.transform[s]
        b = np.einsum("nij,nj->ni", T[:, :3, :], x - T[:, 3, :])
        return np.concatenate([b, 1.0 - b.sum(1, keepdims=True)], 1)

    def _brute(self, x, chunk: int = 64):
        """Non-flat simplex maximizing the smallest barycentric coordinate, and that value."""
        out = np.empty(len(x), dtype=int)
        best = np.empty(len(x))
        T = self.tri.transform[self.good]
        for lo in range(0, len(x), chunk):
            xs = x[lo:lo + chunk]
            b = np.einsum("sij,nsj->nsi", T[:, :3, :], xs[:, None, :] - T[None, :, 3, :])
            c = np.minimum(b.min(-1), 1.0 - b.sum(-1))
            k = np.argmax(c, axis=1)
            out[lo:lo + chunk] = self.good[k]
            best[lo:lo + chunk] = c[np.arange(len(xs)), k]
        return out, best

    def _vertex_start(self):
        start = np.full(len(self.points), -1)
        for s in self.good:
            start[self.tri.simplices[s]] = s
        missing = start < 0
        if missing.any():
            start[missing] = self._brute(self.points[missing])[0]
        return start

    def _good_neighbors(self):
        """Neighbour table in which flat simplices are replaced by the simplex found
        just across the face."""
        nbr = self.tri.neighbors.copy()
        nbr[self.flat] = -1
        A, J = np.nonzero((nbr >= 0) & self.flat[np.maximum(nbr, 0)])
        A, J = A[~self.flat[A]], J[~self.flat[A]]
        if A.size == 0:
            return nbr
        verts = self.points[self.tri.simplices[A]]                    # (m, 4, 3)
        mask = np.ones((len(A), 4), bool)
        mask[np.arange(len(A)), J] = False
        face = verts[mask].reshape(len(A), 3, 3)
        opp = verts[np.arange(len(A)), J]
        c = face.mean(1)
        n = np.cross(face[:, 1] - face[:, 0], face[:, 2] - face[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        n *= np.sign(((c - opp) * n).sum(1))[:, None]
        scale = np.linalg.norm(face[:, 1] - face[:, 0], axis=1)
        probe = c + 1e-7 * scale[:, None] * n
        s, best = self._brute(probe)
        nbr[A, J] = np.where(best >= -1e-9, s, -1)
        return nbr

    def locate(self, x) -> np.ndarray:
        """Simplex index for each point (containing it, or the hull simplex the walk ended in).

        Points unresolved after ``MAX_WALK`` steps are located by a
        brute-force search.
        """
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        _, near = self.tree.query(x)
        s = self._start[near].copy()
        active = np.arange(len(x))
        for _ in range(self.MAX_WALK):
            if active.size == 0:
                return s
            cur = s[active]
            c = self._bary(cur, x[active])
            worst = np.argmin(c, axis=1)
            inside = c[np.arange(len(active)), worst] >= -1e-12
            nb = self._nbr[cur, worst]
            move = ~inside & (nb >= 0)
            s[active[move]] = nb[move]
            active = active[move]
        if active.size:
            s[active] = self._brute(x[active])[0]
        return s

    def weights(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Vertex indices (n, 4) and barycentric weights (n, 4) for points ``x``."""
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        if np.any(~self.domain.contains(x, tol=1e-8)):
            raise OutsideDomain("interpolation point outside the domain")
        s = self.locate(x)
        idx, bary = self.tri.simplices[s], self._bary(s, x)
        # exact nodal values: barycentric coordinates of a vertex carry rounding
        dist, near = self.tree.query(x)
        hit = dist == 0.0
        if hit.any():
            idx[hit] = near[hit, None]
            bary[hit] = (1.0, 0.0, 0.0, 0.0)
        return idx, bary

    def matrix(self, x) -> sparse.csr_matrix:
        idx, bary = self.weights(x)
        n = idx.shape[0]
        rows = np.repeat(np.arange(n), 4)
        return sparse.csr_matrix((bary.ravel(), (rows, idx.ravel())), shape=(n, len(self.points)))

    def __call__(self, values, x) -> np.ndarray:
        """Interpolate ``values`` (n_nodes, ...) at points ``x`` (m, 3)."""
        idx, bary = self.weights(x)
        v = np.asarray(values)
        return np.einsum("mk,mk...->m...", bary, v[idx])


@dataclass(eq=False)
class PhaseField:
    """A discrete function f(x, v) with values of shape (n_spatial, n_velocity)."""

    values: np.ndarray
    sgrid: SpatialGrid
    vgrid: VelocityGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.sgrid.size, self.vgrid.size):
            raise ValueError(f"values shape {self.values.shape} does not match grids "
                             f"({self.sgrid.size}, {self.vgrid.size})")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("phase field contains non-finite values")

    @classmethod
    def zeros(cls, sgrid: SpatialGrid, vgrid: VelocityGrid) -> "PhaseField":
        return cls(np.zeros((sgrid.size, vgrid.size)), sgrid, vgrid)

    @classmethod
    def from_function(cls, fn, sgrid: SpatialGrid, vgrid: VelocityGrid) -> "PhaseField":
        """Evaluate ``fn(x, v)`` with x (n_x, 1, 3) and v (1, n_v, 3) broadcast."""
        vals = fn(sgrid.points[:, None, :], vgrid.points[None, :, :])
        return cls(np.broadcast_to(vals, (sgrid.size, vgrid.size)).copy(), sgrid, vgrid)

    def like(self, values) -> "PhaseField":
        return PhaseField(values, self.sgrid, self.vgrid)

    def __add__(self, other):
        return self.like(self.values + _vals(other))

    def __sub__(self, other):
        return self.like(self.values - _vals(other))

    def __mul__(self, c):
        return self.like(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)

    def interpolate(self, x, v_index) -> np.ndarray:
        """Values at spatial points ``x`` for the velocity node(s) ``v_index``."""
        return self.sgrid.interpolator(self.values[:, v_index], np.atleast_2d(x))

    def dump(self, path_prefix: str, header: dict | None = None) -> None:
        """Write node coordinates and values as raw little-endian float64.

        Creates ``<prefix>.bin`` and a JSON description ``<prefix>.json``;
        the binary holds the spatial nodes, velocity nodes and the values,
        in that order.
        """
        meta = dict(header or {})
        meta.update({"format": "float64-le", "order": ["x_nodes", "v_nodes", "values"],
                     "n_spatial": self.sgrid.size, "n_velocity": self.vgrid.size})
        with open(path_prefix + ".bin", "wb") as fh:
            for arr in (self.sgrid.points, self.vgrid.points, self.values):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        with open(path_prefix + ".json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _vals(x):
    return x.values if isinstance(x, PhaseField) else x


def load_dump(path_prefix: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path_prefix + ".json") as fh:
        meta = json.load(fh)
    nx, nv = meta["n_spatial"], meta["n_velocity"]
    raw = np.fromfile(path_prefix + ".bin", dtype="<f8")
    x = raw[:3 * nx].reshape(nx, 3)
    v = raw[3 * nx:3 * (nx + nv)].reshape(nv, 3)
    vals = raw[3 * (nx + nv):].reshape(nx, nv)
    return x, v, vals


def is_boundary(sgrid: SpatialGrid) -> np.ndarray:
    """Mask of boundary nodes among ``sgrid.points``."""
    return np.abs(sgrid.domain.level(sgrid.points) - 1.0) <= BOUNDARY_TOL
