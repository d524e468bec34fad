"""Discrete K, S_Omega, J, multiplication by nu, and the collision term Gamma.

Grid conventions follow :mod:`discretization`: fields are arrays of shape
(n_spatial, n_velocity) with velocity nodes ordered (a, p, q), q the
azimuth index.  Rotating velocities by the azimuthal step permutes the
grid, which the kernel matrix and the Gamma rule both exploit.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse, special

from . import kernel as kern
from .discretization import PhaseField, SpatialGrid, VelocityGrid
from .errors import CoincidentVelocities
from .geometry import ConvexDomain
from .params import PhysParams

SQRT_M_PREFACTOR = np.pi ** -0.75
CACHE_VERSION = 1


def sqrt_maxwellian(v) -> np.ndarray:
    """sqrt(M)(v) = pi^(-3/4) exp(-|v|^2 / 2)."""
    v = np.asarray(v, dtype=float)
    return SQRT_M_PREFACTOR * np.exp(-0.5 * np.einsum("...i,...i->...", v, v))


def collision_invariants(v) -> list[np.ndarray]:
    """sqrt(M), v_1 sqrt(M), v_2 sqrt(M), v_3 sqrt(M), |v|^2 sqrt(M) at points ``v``."""
    v = np.asarray(v, dtype=float)
    m = sqrt_maxwellian(v)
    return [m, v[..., 0] * m, v[..., 1] * m, v[..., 2] * m, (v * v).sum(-1) * m]


# ---------------------------------------------------------------------------
# boundary data

@dataclass(frozen=True)
class BoundaryData:
    """Incoming boundary values f0(z, v), given analytically.

    ``fn`` maps broadcastable arrays z (..., 3) and v (..., 3) to values.
    """

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    label: str = "custom"
    spec: dict = field(default_factory=dict)

    def __call__(self, z, v) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        v = np.asarray(v, dtype=float)
        out = np.broadcast_to(self.fn(z, v), np.broadcast_shapes(z.shape[:-1], v.shape[:-1]))
        return np.asarray(out, dtype=float)

    @classmethod
    def zero(cls) -> "BoundaryData":
        return cls(lambda z, v: np.zeros(np.broadcast_shapes(z.shape[:-1], v.shape[:-1])),
                   "zero", {"family": "zero"})

    @classmethod
    def constant_gaussian(cls, c: float, alpha: float = 0.0) -> "BoundaryData":
        """c exp(-alpha |v|^2)."""
        return cls(lambda z, v: c * np.exp(-alpha * (v * v).sum(-1)) + 0.0 * z[..., 0],
                   "constant_gaussian", {"family": "constant_gaussian", "c": c, "alpha": alpha})

    @classmethod
    def maxwellian(cls, eps: float) -> "BoundaryData":
        """eps sqrt(M)(v)."""
        return cls(lambda z, v: eps * sqrt_maxwellian(v) + 0.0 * z[..., 0],
                   "maxwellian", {"family": "maxwellian", "eps": eps})

    @classmethod
    def z_holder(cls, eps: float, s1: float, z0=(1.0, 0.0, 0.0)) -> "BoundaryData":
        """eps |z - z0|^s1 exp(-|v|^2), for a Hoelder exponent s1 in (0, 1]."""
        if not 0 < s1 <= 1:
            raise ValueError(f"Hoelder exponent s1 must lie in (0, 1], got {s1}")
        z0 = np.asarray(z0, dtype=float)

        def fn(z, v):
            return eps * np.linalg.norm(z - z0, axis=-1) ** s1 * np.exp(-(v * v).sum(-1))
        return cls(fn, "z_holder", {"family": "z_holder", "eps": eps, "s1": s1,
                                    "z0": [float(c) for c in z0]})

    @classmethod
    def smooth_random(cls, eps: float, seed: int = 42, n_modes: int = 3) -> "BoundaryData":
        """eps (1 + sum_j a_j sin(k_j.z + c_j)) (1 + b.v) exp(-|v|^2), coefficients drawn from ``seed``.

        Smooth in z, non-Maxwellian in v, so Gamma does not vanish on it.
        """
        rng = np.random.default_rng(seed)
        a = rng.uniform(-0.3, 0.3, n_modes)
        k = rng.normal(size=(n_modes, 3)) * 1.5
        c = rng.uniform(0.0, 2 * np.pi, n_modes)
        b = rng.normal(size=3) * 0.3

        def fn(z, v):
            zs = 1.0 + (a * np.sin(z @ k.T + c)).sum(-1)
            return eps * zs * (1.0 + v @ b) * np.exp(-(v * v).sum(-1))
        return cls(fn, "smooth_random", {"family": "smooth_random", "eps": eps, "seed": seed,
                                         "n_modes": n_modes})

    @classmethod
    def from_spec(cls, spec: dict) -> "BoundaryData":
        fam = spec.get("family", "zero")
        if fam == "zero":
            return cls.zero()
        if fam == "constant_gaussian":
            return cls.constant_gaussian(float(spec.get("c", 1.0)), float(spec.get("alpha", 0.0)))
        if fam == "maxwellian":
            return cls.maxwellian(float(spec.get("eps", 1e-2)))
        if fam == "z_holder":
            return cls.z_holder(float(spec.get("eps", 1e-2)), float(spec.get("s1", 1.0)),
                                spec.get("z0", (1.0, 0.0, 0.0)))
        if fam == "smooth_random":
            return cls.smooth_random(float(spec.get("eps", 1e-2)), int(spec.get("seed", 42)),
                                     int(spec.get("n_modes", 3)))
        raise ValueError(f"unknown boundary family {fam!r}")

    def on_grid(self, sgrid: SpatialGrid, vgrid: VelocityGrid):
        """Values on incoming (boundary node, velocity node) pairs.

        Returns a boolean mask (n_boundary, n_velocity) of pairs with
        n(z).v < 0 and the values there (zero elsewhere).
        """
        mask = sgrid.normals @ vgrid.points.T < 0
        vals = self(sgrid.boundary[:, None, :], vgrid.points[None, :, :])
        return mask, np.where(mask, vals, 0.0)


# ---------------------------------------------------------------------------
# collision coordinates

@dataclass(frozen=True)
class CollisionAngles:
    """Quadrature in (theta, phi) for the angular factor sin(theta) cos(theta).

    theta nodes come from Gauss-Legendre in u = sin^2(theta), on which
    sin cos dtheta = du / 2; ``theta_weights`` are for d(theta), so that
    sum(theta_weights * sin * cos) = 1/2 exactly.
    """

    theta: np.ndarray
    theta_weights: np.ndarray
    phi: np.ndarray
    phi_weights: np.ndarray

    @classmethod
    def build(cls, n_theta: int = 4, n_phi: int = 8) -> "CollisionAngles":
        u, wu = kern.gauss_legendre01(n_theta)
        th = np.arcsin(np.sqrt(u))
        wth = wu / (2.0 * np.sin(th) * np.cos(th))
        ph = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
        return cls(th, wth, ph, np.full(n_phi, 2 * np.pi / n_phi))

    def product(self):
        """Flattened (theta, phi, weight * sin * cos) triples."""
        T, P = np.meshgrid(self.theta, self.phi, indexing="ij")
        W = np.outer(self.theta_weights * np.sin(self.theta) * np.cos(self.theta), self.phi_weights)
        return T.ravel(), P.ravel(), W.ravel()


def collision_omega(v, v_tilde, theta, phi) -> np.ndarray:
    """omega = cos(theta) e + sin(theta) cos(phi) e2 + sin(theta) sin(phi) e3, e = (v~ - v)/|v~ - v|."""
    v = np.asarray(v, dtype=float)
    vt = np.asarray(v_tilde, dtype=float)
    dv = vt - v
    n = np.linalg.norm(dv, axis=-1, keepdims=True)
    if np.any(n < kern.COINCIDENT_TOL):
        raise CoincidentVelocities("collision coordinates need v != v_tilde")
    e = dv / n
    e2, e3 = kern.orthonormal_completion(e)
    theta = np.asarray(theta, dtype=float)[..., None]
    phi = np.asarray(phi, dtype=float)[..., None]
    return np.cos(theta) * e + np.sin(theta) * (np.cos(phi) * e2 + np.sin(phi) * e3)


def reflect(v, v_tilde, omega):
    """(v', v~') for a fixed unit vector omega."""
    v = np.asarray(v, dtype=float)
    vt = np.asarray(v_tilde, dtype=float)
    s = np.einsum("...i,...i->...", vt - v, omega)[..., None]
    return v + s * omega, vt - s * omega


def collision_transform(v, v_tilde, theta, phi):
    """Post-collision velocities (v', v~') in the (theta, phi) parametrization."""
    om = collision_omega(v, v_tilde, theta, phi)
    return reflect(v, v_tilde, om)


# ---------------------------------------------------------------------------
# kernel matrix

def _cache_dir(cache) -> str | None:
    if cache is False or cache is None:
        return None
    if isinstance(cache, (str, os.PathLike)):
        return os.fspath(cache)
    return os.environ.get("BOLTZMANN_BVP_CACHE",
                          os.path.join(os.path.expanduser("~"), ".cache", "boltzmann_bvp"))


@dataclass(eq=False)
class KernelMatrix:
    """Quadrature of K on a velocity grid, stored as real azimuthal mode blocks.

    The weighted matrix W_dq[i, j] = k(v_i, R_dq v_j) w_j (i, j over the
    (a, p) index, R_dq the azimuthal rotation) is symmetric in i, j and
    even in dq, so its discrete Fourier transform in dq is real.  The
    diagonal entry (i = j, dq = 0), where k is singular, is set by
    singularity subtraction with rho(v*) = exp(-|v* - v|^2 / sigma^2):
    it equals R(|v_i|) minus the rule applied to k rho off the diagonal,
    where R = int k rho dv* is computed by a local spherical rule.
    """

    vgrid: VelocityGrid
    B0: float
    blocks: np.ndarray        # (n_modes, n, n), for B0 = 1
    sigma: float

    def apply(self, values: np.ndarray) -> np.ndarray:
        """K applied to values of shape (..., n_velocity)."""
        nr, na, nphi = self.vgrid.shape
        lead = values.shape[:-1]
        h = values.reshape(-1, nr * na, nphi)
        H = np.fft.rfft(h, axis=-1)                     # (X, n, m)
        out = np.empty_like(H)
        nx = H.shape[0]
        for m in range(H.shape[-1]):
            # real blocks: multiply real and imaginary parts in one real product
            ri = np.concatenate([H[:, :, m].real, H[:, :, m].imag]) @ self.blocks[m].T
            out[:, :, m] = ri[:nx] + 1j * ri[nx:]
        res = np.fft.irfft(out, n=nphi, axis=-1)
        return self.B0 * res.reshape(*lead, nr * na * nphi)

    def dense(self) -> np.ndarray:
        """Full (n_velocity x n_velocity) weighted matrix; small grids only."""
        eye = np.eye(self.vgrid.size)
        return self.apply(eye).T


def build_kernel_matrix(params: PhysParams, vgrid: VelocityGrid,
                        spec: kern.KernelQuadSpec = kern.DEFAULT_SPEC, sigma: float = 1.0,
                        cache=True, r_tol: float = 1e-9) -> KernelMatrix:
    """Assemble the mode blocks, reading or writing the on-disk cache."""
    unit = params.with_(B0=1.0)
    key = {"version": CACHE_VERSION, "gamma": params.gamma, "grid": vgrid.describe(),
           "spec": asdict(spec), "sigma": sigma, "r_tol": r_tol}
    digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:24]
    cdir = _cache_dir(cache)
    path = os.path.join(cdir, f"kmat-{digest}.npy") if cdir else None
    if path and os.path.exists(path):
        blocks = np.load(path)
        return KernelMatrix(vgrid, params.B0, blocks, sigma)
    blocks = _assemble_blocks(unit, vgrid, spec, sigma, r_tol)
    if path:
        os.makedirs(cdir, exist_ok=True)
        tmp = path + f".{os.getpid()}.tmp"
        with open(tmp, "wb") as fh:
            np.save(fh, blocks)
        os.replace(tmp, path)
    return KernelMatrix(vgrid, params.B0, blocks, sigma)


def singular_row_integral(r: float, params: PhysParams, sigma: float = 1.0,
                          tol: float = 1e-9) -> float:
    """R(r) = int k(v, v*) exp(-|v* - v|^2 / sigma^2) dv* with |v| = r."""
    v = np.array([0.0, 0.0, r])
    rule = kern.local_rule_for(params.gamma, n_phi=1)

    def g(pts):
        d = pts - v
        return np.exp(-(d * d).sum(-1) / sigma**2)
    return kern.kernel_integral(v, g, params, rule=rule, rho_max=7.0 * sigma, tol=tol, max_refine=3)


def _rotation(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _assemble_blocks(params, vgrid, spec, sigma, r_tol):
    nr, na, nphi = vgrid.shape
    n = nr * na
    half = nphi // 2
    dirs = vgrid.directions.reshape(na, nphi, 3)
    pts0 = (vgrid.radii[:, None, None] * dirs[None, :, 0, :]).reshape(n, 3)
    wj = np.outer(vgrid.radial_weights, vgrid.mu_weights).ravel() * (2 * np.pi / nphi)
    blocks = np.zeros((half + 1, n, n))
    off = np.zeros(n)
    modes = np.arange(half + 1)
    for dq in range(half + 1):
        pts = pts0 @ _rotation(vgrid.phi[dq]).T
        # W_dq is symmetric in (i, j) before weighting, so only i <= j is evaluated
        ii, jj = np.triu_indices(n, k=1 if dq == 0 else 0)
        M = np.zeros((n, n))
        for lo in range(0, len(ii), kern.CHUNK):
            i, j = ii[lo:lo + kern.CHUNK], jj[lo:lo + kern.CHUNK]
            vals = kern.kernel_k(pts0[i], pts[j], params, spec)
            M[i, j] = vals
            M[j, i] = vals
        del ii, jj
        W = M * wj[None, :]
        diff = pts0[:, None, :] - pts[None, :, :]
        rho = np.exp(-(diff * diff).sum(-1) / sigma**2)
        # offsets dq and nphi - dq share W; count both unless they coincide
        mult = 1 if dq in (0, nphi - dq) else 2
        off += mult * (W * rho).sum(1)
        cos = np.cos(2 * np.pi * modes * dq / nphi) * mult
        for m in modes:
            blocks[m] += cos[m] * W
    R = np.array([singular_row_integral(r, params, sigma, r_tol) for r in vgrid.radii])
    D = np.repeat(R, na) - off
    for m in modes:
        blocks[m][np.diag_indices(n)] += D
    return blocks


# ---------------------------------------------------------------------------
# transport along characteristics

def _segment_weights(x):
    """A0 = (x + expm1(-x)) / x^2 and A1 = (-expm1(-x) - x e^-x) / x^2 (stable at small x)."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    xs = np.where(small, 1.0, x)
    a0 = (xs + np.expm1(-xs)) / xs**2
    a1 = (-np.expm1(-xs) - xs * np.exp(-xs)) / xs**2
    t0 = 0.5 - x / 6 + x * x / 24 - x**3 / 120
    t1 = 0.5 - x / 3 + x * x / 8 - x**3 / 30
    return np.where(small, t0, a0), np.where(small, t1, a1)


@dataclass(eq=False)
class TransportOperator:
    """S_Omega by product integration on the backward chord.

    For each direction the chord x - s omega, s in [0, L], L = tau_-(x, omega),
    is split into ``n_samples`` equal segments; h is interpolated spatially at
    the segment ends and integrated against exp(-nu s / |v|) exactly for
    piecewise-linear h.  Hence S_Omega 1 is reproduced to rounding.
    """

    sgrid: SpatialGrid
    vgrid: VelocityGrid
    nu: np.ndarray                  # (n_r,)
    chord: np.ndarray               # (n_dir, n_x) backward chord lengths at unit speed
    interp: list                    # per direction group: block-diagonal sparse matrices
    groups: list                    # (first, last + 1) direction index per group
    n_samples: int

    @classmethod
    def build(cls, sgrid: SpatialGrid, vgrid: VelocityGrid, nu: np.ndarray,
              n_samples: int = 16, group_size: int = 8) -> "TransportOperator":
        dom = sgrid.domain
        X = sgrid.points
        it = sgrid.interpolator
        chords, mats = [], []
        s = np.arange(1, n_samples + 1) / n_samples
        for om in vgrid.directions:
            L = dom._exit_time(X, np.broadcast_to(om, X.shape))
            y = X[:, None, :] - (L[:, None] * s[None, :])[..., None] * om
            y = y.reshape(-1, 3)
            # keep samples on the closed domain despite rounding
            lev = dom.level(y)
            y = np.where((lev > 1.0)[:, None], y / np.sqrt(np.maximum(lev, 1.0))[:, None], y)
            chords.append(L)
            mats.append(it.matrix(y))
        groups = [(lo, min(lo + group_size, len(mats))) for lo in range(0, len(mats), group_size)]
        blocks = [sparse.block_diag(mats[lo:hi], format="csr") for lo, hi in groups]
        return cls(sgrid, vgrid, np.asarray(nu, dtype=float), np.array(chords), blocks, groups,
                   n_samples)

    def tau(self) -> np.ndarray:
        """tau_-(x, v) at all nodes, shape (n_x, n_v)."""
        t = self.chord.T[:, None, :] / self.vgrid.radii[None, :, None]   # (X, r, dir)
        return t.reshape(len(self.chord[0]), -1)

    def apply(self, values: np.ndarray) -> np.ndarray:
        nr = self.vgrid.n_r
        K = self.n_samples
        nx = self.sgrid.size
        h = values.reshape(nx, nr, -1)
        out = np.empty_like(h)
        lam = self.nu / self.vgrid.radii                              # (r,)
        for (lo, hi), P in zip(self.groups, self.interp):
            G = hi - lo
            hg = np.ascontiguousarray(h[:, :, lo:hi].transpose(2, 0, 1))   # (G, X, r)
            Y = (P @ hg.reshape(G * nx, nr)).reshape(G, nx, K, nr)
            dlt = self.chord[lo:hi] / K                                 # (G, X)
            x = dlt[:, :, None] * lam                                   # (G, X, r)
            E = np.exp(-x)
            a0, a1 = _segment_weights(x)
            # Horner sums S0 = sum_{k<K} E^k Y_k and S1 = sum_{k<K} E^k Y_{k+1},
            # with Y_0 = h at the node itself
            s1 = Y[:, :, K - 1]
            for k in range(K - 2, -1, -1):
                s1 = Y[:, :, k] + E * s1
            s0 = Y[:, :, K - 2] if K > 1 else hg
            for k in range(K - 3, -2, -1):
                s0 = (hg if k < 0 else Y[:, :, k]) + E * s0
            res = dlt[:, :, None] / self.vgrid.radii * (a0 * s0 + a1 * s1)
            out[:, :, lo:hi] = res.transpose(1, 2, 0)
        return out.reshape(values.shape)


# ---------------------------------------------------------------------------
# collision term on grids

@dataclass(frozen=True)
class GammaRule:
    """Sample counts for the Gamma quadrature.

    v~ = v + u with u in local spherical coordinates about v: Gauss-Jacobi
    in |u| (weight |u|^(2+gamma) on [0, |v| + 8]) times a Gauss rule in the
    cosine towards the origin, clustered with |v|, times a uniform azimuth; the collision angles use
    :class:`CollisionAngles`.
    """

    n_rho: int = 10
    n_mu: int = 8
    n_phi: int = 8
    n_theta: int = 2
    n_omega: int = 4
    reach: float = 8.0

    def refined(self) -> "GammaRule":
        return GammaRule(2 * self.n_rho, 2 * self.n_mu, 2 * self.n_phi,
                         2 * self.n_theta, 2 * self.n_omega, self.reach)


def _vtilde_rule(v, gamma, rule: GammaRule):
    """Points v~ (n, 3) and weights including |v - v~|^gamma."""
    v = np.asarray(v, dtype=float)
    U = float(np.linalg.norm(v)) + rule.reach
    x, w = special.roots_jacobi(rule.n_rho, 0.0, 2.0 + gamma)
    rho = U * (1 + x) / 2
    wr = w * (U / 2) ** (3.0 + gamma)
    # cosine towards the origin, clustered near 1 where exp(-|v~|^2/2) lives:
    # 1 - mu = 2 (e^(k s) - 1) / (e^k - 1), s Gauss-Legendre on [0, 1]
    s, ws = kern.gauss_legendre01(rule.n_mu)
    nv = np.linalg.norm(v)
    k = np.log1p(nv * nv)
    if k > 1e-8:
        one_m = 2.0 * np.expm1(k * s) / np.expm1(k)
        wm = ws * 2.0 * k * np.exp(k * s) / np.expm1(k)
    else:
        one_m, wm = 2.0 * s, 2.0 * ws
    mu = 1.0 - one_m
    ph = 2 * np.pi * (np.arange(rule.n_phi) + 0.5) / rule.n_phi
    e1 = -v / nv if nv > 1e-12 else np.array([0.0, 0.0, 1.0])
    e2, e3 = kern.orthonormal_completion(e1)
    st = np.sqrt(1 - mu**2)
    om = (mu[:, None, None] * e1 + (st[:, None] * np.cos(ph))[..., None] * e2
          + (st[:, None] * np.sin(ph))[..., None] * e3).reshape(-1, 3)
    wo = np.outer(wm, np.full(rule.n_phi, 2 * np.pi / rule.n_phi)).ravel()
    pts = v + rho[:, None, None] * om[None]
    return pts.reshape(-1, 3), np.outer(wr, wo).ravel()


def gamma_samples(v, params: PhysParams, rule: GammaRule = GammaRule()):
    """Quadrature data for Gamma at the velocity ``v``.

    Returns (vp, vtp, w_gain, vt, w_loss): post-collision pairs with gain
    weights, and the v~ nodes with loss weights.  Weights include B0,
    exp(-|v~|^2/2) and pi^(-3/4).
    """
    vt, wt = _vtilde_rule(v, params.gamma, rule)
    wt = wt * params.B0 * SQRT_M_PREFACTOR * np.exp(-0.5 * (vt * vt).sum(-1))
    ang = CollisionAngles.build(rule.n_theta, rule.n_omega)
    th, ph, wa = ang.product()
    V = np.broadcast_to(v, vt.shape)
    vp, vtp = collision_transform(V[:, None, :], vt[:, None, :], th[None, :], ph[None, :])
    wg = (wt[:, None] * wa[None, :]).ravel()
    return vp.reshape(-1, 3), vtp.reshape(-1, 3), wg, vt, wt * wa.sum()


def gamma_pointwise(h1, h2, v, params: PhysParams, rule: GammaRule = GammaRule(),
                    parts: bool = False):
    """Gamma(h1, h2)(v) for callables h1, h2 mapping (n, 3) arrays to n values."""
    vp, vtp, wg, vt, wl = gamma_samples(v, params, rule)
    gain = float(np.sum(wg * h1(vp) * h2(vtp)))
    loss = float(h1(np.asarray(v, dtype=float)[None, :])[0] * np.sum(wl * h2(vt)))
    return (gain, loss) if parts else gain - loss


def velocity_interp_matrix(vgrid: VelocityGrid, pts: np.ndarray) -> sparse.csr_matrix:
    """Interpolation of grid values at arbitrary velocities.

    The ratio h / sqrt(M) is interpolated multilinearly in (|v|, cos theta,
    phi), clamped at the end nodes in |v| and cos theta and periodic in phi,
    then multiplied by sqrt(M) at the target.  Multiples of sqrt(M) are
    therefore reproduced exactly.  Points beyond v_max read as zero.
    """
    pts = np.asarray(pts, dtype=float)
    nr, na, nphi = vgrid.shape
    rho = np.linalg.norm(pts, axis=1)
    safe = np.where(rho > 0, rho, 1.0)
    mu = np.clip(pts[:, 2] / safe, -1.0, 1.0)
    phi = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi)

    def bracket(nodes, x):
        j = np.clip(np.searchsorted(nodes, x) - 1, 0, len(nodes) - 2)
        t = np.clip((x - nodes[j]) / (nodes[j + 1] - nodes[j]), 0.0, 1.0)
        return j, t

    ja, ta = bracket(vgrid.radii, rho)
    jp, tp = bracket(vgrid.mu, mu)
    dphi = 2 * np.pi / nphi
    fq = phi / dphi
    jq = np.floor(fq).astype(int) % nphi
    tq = fq - np.floor(fq)
    inside = rho <= vgrid.v_max
    rows, cols, vals = [], [], []
    n = len(pts)
    for da, wa in ((0, 1 - ta), (1, ta)):
        a = ja + da
        ratio = np.exp(0.5 * (vgrid.radii[a] ** 2 - rho**2))
        for dp, wp in ((0, 1 - tp), (1, tp)):
            for dq, wq in ((0, 1 - tq), (1, tq)):
                idx = (a * na + jp + dp) * nphi + (jq + dq) % nphi
                rows.append(np.arange(n))
                cols.append(idx)
                vals.append(np.where(inside, wa * wp * wq * ratio, 0.0))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    m = vals != 0
    return sparse.csr_matrix((vals[m], (rows[m], cols[m])), shape=(n, vgrid.size))


@dataclass(eq=False)
class GammaOperator:
    """Gamma on a velocity grid for every spatial node.

    Sample sets are built for the targets with azimuth index 0 and reused
    for the other azimuths by rolling the input in the azimuth index.
    """

    vgrid: VelocityGrid
    gain_interp: sparse.csr_matrix      # v' samples
    gain_interp2: sparse.csr_matrix     # v~' samples
    gain_sum: sparse.csr_matrix         # (targets, samples)
    loss_interp: sparse.csr_matrix
    loss_sum: sparse.csr_matrix

    @classmethod
    def build(cls, params: PhysParams, vgrid: VelocityGrid, rule: GammaRule = GammaRule()):
        nr, na, nphi = vgrid.shape
        targets = vgrid.points.reshape(nr, na, nphi, 3)[:, :, 0, :].reshape(-1, 3)
        VP, VTP, WG, VT, WL, gi, li = [], [], [], [], [], [], []
        for t, v in enumerate(targets):
            vp, vtp, wg, vt, wl = gamma_samples(v, params, rule)
            VP.append(vp), VTP.append(vtp), WG.append(wg), VT.append(vt), WL.append(wl)
            gi.append(np.full(len(wg), t)), li.append(np.full(len(wl), t))
        VP, VTP, WG = np.concatenate(VP), np.concatenate(VTP), np.concatenate(WG)
        VT, WL = np.concatenate(VT), np.concatenate(WL)
        gi, li = np.concatenate(gi), np.concatenate(li)
        T = len(targets)
        gsum = sparse.csr_matrix((WG, (gi, np.arange(len(WG)))), shape=(T, len(WG)))
        lsum = sparse.csr_matrix((WL, (li, np.arange(len(WL)))), shape=(T, len(WL)))
        return cls(vgrid, velocity_interp_matrix(vgrid, VP), velocity_interp_matrix(vgrid, VTP),
                   gsum, velocity_interp_matrix(vgrid, VT), lsum)

    def apply(self, h1: np.ndarray, h2: np.ndarray, parts: bool = False, chunk: int = 32):
        """Gamma(h1, h2) for arrays of shape (n_x, n_velocity)."""
        nr, na, nphi = self.vgrid.shape
        nx = h1.shape[0]
        gain = np.empty((nx, nr * na, nphi))
        lossi = np.empty((nx, nr * na, nphi))
        for lo in range(0, nx, chunk):
            a = h1[lo:lo + chunk].reshape(-1, nr * na, nphi)
            b = h2[lo:lo + chunk].reshape(-1, nr * na, nphi)
            for q in range(nphi):
                aq = np.roll(a, -q, axis=2).reshape(len(a), -1).T
                bq = np.roll(b, -q, axis=2).reshape(len(b), -1).T
                g = self.gain_sum @ ((self.gain_interp @ aq) * (self.gain_interp2 @ bq))
                l_ = self.loss_sum @ (self.loss_interp @ bq)
                gain[lo:lo + chunk, :, q] = g.T
                lossi[lo:lo + chunk, :, q] = l_.T
        gain = gain.reshape(nx, -1)
        loss = h1 * lossi.reshape(nx, -1)
        return (gain, loss) if parts else gain - loss


# ---------------------------------------------------------------------------
# the assembled discrete system

@dataclass(eq=False)
class Operators:
    """K, S_Omega, J, nu and Gamma on a fixed pair of grids."""

    params: PhysParams
    sgrid: SpatialGrid
    vgrid: VelocityGrid
    nu: np.ndarray                       # (n_r,)
    kmat: KernelMatrix
    transport: TransportOperator
    gamma_rule: GammaRule = GammaRule()
    _gamma: GammaOperator | None = None

    @property
    def domain(self) -> ConvexDomain:
        return self.sgrid.domain

    @property
    def nu_nodes(self) -> np.ndarray:
        return np.repeat(self.nu, self.vgrid.n_dir)

    def field(self, values) -> PhaseField:
        return PhaseField(values, self.sgrid, self.vgrid)

    def _vals(self, f):
        return f.values if isinstance(f, PhaseField) else np.asarray(f, dtype=float)

    def apply_K(self, f) -> PhaseField:
        return self.field(self.kmat.apply(self._vals(f)))

    def apply_nu(self, f) -> PhaseField:
        return self.field(self._vals(f) * self.nu_nodes[None, :])

    def apply_L(self, f) -> PhaseField:
        v = self._vals(f)
        return self.field(self.kmat.apply(v) - v * self.nu_nodes[None, :])

    def apply_S_Omega(self, f) -> PhaseField:
        return self.field(self.transport.apply(self._vals(f)))

    def tau(self) -> np.ndarray:
        return self.transport.tau()

    def apply_J(self, f0: BoundaryData) -> PhaseField:
        """e^(-nu tau_-) f0(q(x, v), v) at every node."""
        X = self.sgrid.points
        dirs = self.vgrid.directions
        nr = self.vgrid.n_r
        out = np.empty((len(X), nr, len(dirs)))
        for d, om in enumerate(dirs):
            L = self.transport.chord[d]
            q = X - L[:, None] * om
            vel = self.vgrid.radii[:, None] * om[None, :]
            vals = f0(q[:, None, :], vel[None, :, :])
            tau = L[:, None] / self.vgrid.radii[None, :]
            out[:, :, d] = np.exp(-self.nu[None, :] * tau) * vals
        return self.field(out.reshape(len(X), -1))

    @property
    def gamma_op(self) -> GammaOperator:
        if self._gamma is None:
            self._gamma = GammaOperator.build(self.params, self.vgrid, self.gamma_rule)
        return self._gamma

    def gamma_bilinear(self, h1, h2) -> PhaseField:
        return self.field(self.gamma_op.apply(self._vals(h1), self._vals(h2)))

    def gamma_gain(self, h1, h2) -> PhaseField:
        return self.field(self.gamma_op.apply(self._vals(h1), self._vals(h2), parts=True)[0])

    def gamma_loss(self, h1, h2) -> PhaseField:
        return self.field(self.gamma_op.apply(self._vals(h1), self._vals(h2), parts=True)[1])


def build_operators(params: PhysParams, sgrid: SpatialGrid, vgrid: VelocityGrid,
                    spec: kern.KernelQuadSpec = kern.DEFAULT_SPEC, sigma: float = 1.0,
                    n_samples: int = 16, gamma_rule: GammaRule = GammaRule(),
                    cache=True) -> Operators:
    nu = kern.collision_frequency(vgrid.radii, params)
    kmat = build_kernel_matrix(params, vgrid, spec, sigma, cache)
    transport = TransportOperator.build(sgrid, vgrid, nu, n_samples)
    return Operators(params, sgrid, vgrid, nu, kmat, transport, gamma_rule)
