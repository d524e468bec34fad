"""Collision frequency, the kernels k1 and k2, weighted variants and gradients.

Normalization used throughout::

    nu(|v|)   = B0 pi  int |v - u|^gamma exp(-|u|^2) du
    k1(v, v*) = B0 pi |v - v*|^gamma exp(-(|v|^2 + |v*|^2) / 2)
    k2(v, v*) = (2 B0 / d) exp(-d^2/4 - |V1|^2) int_W exp(-|w + V2|^2) (d^2 + |w|^2)^((gamma-1)/2) dw
    k         = k2 - k1,       K h = int k(v, v*) h(v*) dv*

With this choice ``-nu h + K h`` is the linearization of the collision
operator about exp(-|v|^2) and ``K sqrt(M) = nu sqrt(M)`` holds exactly.
The plane integral over W (the plane orthogonal to v - v*) is reduced to a
radial integral by integrating the angle in closed form with a modified
Bessel function.

Most functions accept ``shift``, an array added to the exponent before it
is exponentiated.  Quantities such as ``k * exp(alpha |v|^2)`` or
``k / E_delta`` at speeds of order 30 would otherwise under- or overflow.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special

from .errors import CoincidentVelocities, QuadratureFailure
from .params import PhysParams

COINCIDENT_TOL = 1e-12


@lru_cache(maxsize=64)
def gauss_legendre01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


def composite_nodes(a, b, n_panels: int, n_gl: int, log: bool = False):
    """Composite Gauss nodes on [a, b] for arrays of intervals.

    ``a`` and ``b`` have shape (m,); returns nodes and weights of shape
    (m, n_panels * n_gl).  With ``log=True`` the panels are uniform in
    log(r), which resolves integrands varying on the scale of r itself.
    """
    x, w = gauss_legendre01(n_gl)
    t = ((np.arange(n_panels)[:, None] + x[None, :]) / n_panels).ravel()
    wt = np.tile(w, n_panels) / n_panels
    a = np.asarray(a, dtype=float)[:, None]
    b = np.asarray(b, dtype=float)[:, None]
    if log:
        la, lb = np.log(a), np.log(b)
        r = np.exp(la + (lb - la) * t)
        return r, wt * (lb - la) * r
    return a + (b - a) * t, wt * (b - a)


# ---------------------------------------------------------------------------
# collision frequency

def _nu_radial(s: np.ndarray, gamma: float, n: int) -> np.ndarray:
    """nu / (B0 pi) by a fixed rule; ``s`` is an array of speeds.

    After the exact angular integration::

        nu / (B0 pi) = 4 pi int_0^inf rho^(gamma+2) exp(-(rho - s)^2) g(4 s rho) drho,

    with g(x) = (1 - exp(-x)) / x.  The algebraic factor is absorbed by a
    Gauss-Jacobi rule on [0, 1]; the rest is smooth.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    p = gamma + 2.0
    xj, wj = special.roots_jacobi(n, 0.0, p)
    rho0 = (xj + 1.0) / 2.0
    w0 = wj / 2.0 ** (p + 1.0)

    def g(x):
        with np.errstate(invalid="ignore", divide="ignore"):
            out = -np.expm1(-x) / x
        return np.where(x < 1e-12, 1.0 - x / 2.0, out)

    def smooth(rho, ss):
        return np.exp(-(rho - ss) ** 2) * g(4.0 * ss * rho)

    part0 = (w0[None, :] * smooth(rho0[None, :], s[:, None])).sum(1)
    hi = np.maximum(s + 12.0, 2.0)
    n_pan = np.ceil(hi - 1.0).astype(int)
    out = np.empty_like(s)
    for npan in np.unique(n_pan):
        m = n_pan == npan
        r, w = composite_nodes(np.ones(m.sum()), hi[m], int(2 * npan), n)
        f = r ** p * smooth(r, s[m][:, None])
        out[m] = part0[m] + (w * f).sum(1)
    return 4.0 * np.pi * out


def collision_frequency(speed, params: PhysParams, n: int = 24, check: bool = True):
    """nu(|v|) for scalar or array ``speed``.

    The fixed rule is compared with a rule of twice the order; a relative
    mismatch above 1e-12 raises :class:`QuadratureFailure`.
    """
    scalar = np.ndim(speed) == 0
    s = np.abs(np.atleast_1d(np.asarray(speed, dtype=float)))
    val = _nu_radial(s, params.gamma, n)
    if check:
        ref = _nu_radial(s, params.gamma, 2 * n)
        err = np.abs(val - ref) / np.abs(ref)
        if not np.all(err < 1e-12):
            raise QuadratureFailure(f"collision frequency rule mismatch {err.max():.2e}")
        val = ref
    val = params.B0 * np.pi * val
    return float(val[0]) if scalar else val.reshape(np.shape(speed))


@lru_cache(maxsize=32)
def _nu_chebyshev(params: PhysParams, s_max: float, degree: int):
    cheb = np.polynomial.Chebyshev.interpolate(
        lambda s: collision_frequency(s, params), degree, domain=[0.0, s_max])
    test = np.linspace(0.0, s_max, 4 * degree + 3)[1::2]
    ref = collision_frequency(test, params)
    err = float(np.max(np.abs(cheb(test) - ref) / ref))
    if err > 1e-9:
        raise QuadratureFailure(f"nu interpolant error {err:.2e} above 1e-9")
    return cheb


def collision_frequency_fast(speed, params: PhysParams, s_max: float = 64.0, degree: int = 192):
    """nu(|v|) from a cached Chebyshev interpolant on [0, s_max].

    The interpolant is checked against :func:`collision_frequency` at
    off-node points when built (relative error at most 1e-9); speeds
    beyond ``s_max`` fall back to the direct rule.
    """
    s = np.abs(np.asarray(speed, dtype=float))
    cheb = _nu_chebyshev(params, float(s_max), int(degree))
    out = cheb(np.minimum(s, s_max))
    big = s > s_max
    if np.any(big):
        out = np.where(big, 0.0, out)
        out[big] = collision_frequency(s[big], params)
    return out


# ---------------------------------------------------------------------------
# pair geometry

def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def orthonormal_completion(e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors (e2, e3) with (e, e2, e3) a right-handed orthonormal frame.

    e2 comes from Gram-Schmidt against the coordinate axis on which ``e``
    has the smallest absolute component (lowest index on ties).
    """
    e = np.asarray(e, dtype=float)
    k = np.argmin(np.abs(e), axis=-1)
    axis = np.zeros_like(e)
    np.put_along_axis(axis, k[..., None], 1.0, axis=-1)
    e2 = axis - _dot(axis, e)[..., None] * e
    e2 /= np.linalg.norm(e2, axis=-1, keepdims=True)
    e3 = np.cross(e, e2)
    return e2, e3


@dataclass(frozen=True)
class PairGeometry:
    """Derived quantities of a velocity pair (v, v*), vectorized."""

    v: np.ndarray
    v_star: np.ndarray
    d: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    e2: np.ndarray
    e3: np.ndarray

    @property
    def abs_V2(self) -> np.ndarray:
        return np.linalg.norm(self.V2, axis=-1)


def _check_pairs(d, what="kernel"):
    if np.any(d < COINCIDENT_TOL):
        raise CoincidentVelocities(f"{what} evaluated at |v - v*| < {COINCIDENT_TOL}")


def pair_geometry(v, v_star) -> PairGeometry:
    v = np.asarray(v, dtype=float)
    vs = np.asarray(v_star, dtype=float)
    v, vs = np.broadcast_arrays(v, vs)
    dv = v - vs
    d2 = _dot(dv, dv)
    d = np.sqrt(d2)
    _check_pairs(d, "pair_geometry")
    V1 = (0.5 * (_dot(v, v) - _dot(vs, vs)) / d2)[..., None] * dv
    V2 = np.cross(dv, np.cross(vs, v)) / d2[..., None]
    e2, e3 = orthonormal_completion(dv / d[..., None])
    return PairGeometry(v=v, v_star=vs, d=d, V1=V1, V2=V2, e2=e2, e3=e3)


def _scalars(v, vs):
    """d, the exponent E = d^2/4 + |V1|^2, and |V2|, without building vectors."""
    v = np.asarray(v, dtype=float)
    vs = np.asarray(vs, dtype=float)
    v, vs = np.broadcast_arrays(v, vs)
    dv = v - vs
    d2 = _dot(dv, dv)
    d = np.sqrt(d2)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = (_dot(v, v) - _dot(vs, vs)) / d
        cr = np.cross(vs, v)
        V = np.sqrt(_dot(cr, cr)) / d
    E = 0.25 * (d2 + q * q)
    return v, vs, d, E, V


# ---------------------------------------------------------------------------
# plane integral of k2

@dataclass(frozen=True)
class KernelQuadSpec:
    """Composite Gauss rule for the radial plane integral of k2.

    The integrand is ``r exp(-(r - V)^2) i0e(2 r V) (d^2 + r^2)^((gamma-1)/2)``
    on [max(0, V - cutoff), V + cutoff].  It is split at the singularity
    radius ``min(d, 1)`` and at 1: an inner linear segment, a log-uniform
    segment that resolves the (d^2 + r^2) factor for small d, and an outer
    linear segment.  ``cutoff = 7`` discards a Gaussian tail below 1e-21.
    """

    nodes_per_panel: int = 6
    cutoff: float = 7.0
    inner_panels: int = 2
    log_panels: int = 12
    outer_panels: int = 10

    def __post_init__(self):
        if self.nodes_per_panel < 4:
            raise ValueError("nodes_per_panel must be >= 4")
        if self.cutoff < 6.0:
            raise ValueError("cutoff must be >= 6 so the discarded tail is below 1e-14")

    def doubled(self) -> "KernelQuadSpec":
        return replace(self, nodes_per_panel=2 * self.nodes_per_panel)


DEFAULT_SPEC = KernelQuadSpec()
CHUNK = 16384


def _plane_nodes(d, V, spec: KernelQuadSpec):
    lo = np.maximum(0.0, V - spec.cutoff)
    hi = V + spec.cutoff
    a1 = np.clip(np.minimum(d, 1.0), lo, hi)
    a2 = np.clip(1.0, a1, hi)
    n = spec.nodes_per_panel
    r1, w1 = composite_nodes(lo, a1, spec.inner_panels, n)
    r2, w2 = composite_nodes(np.maximum(a1, 1e-300), np.maximum(a2, 1e-300), spec.log_panels, n, log=True)
    r3, w3 = composite_nodes(a2, hi, spec.outer_panels, n)
    return np.concatenate([r1, r2, r3], 1), np.concatenate([w1, w2, w3], 1)


def _plane_integrals(d, V, gamma, spec: KernelQuadSpec, derivs: bool = False):
    """Scaled plane integral I = exp(-V^2) Itilde and, optionally, its derivatives.

    Itilde(d, V) = 2 pi int r exp(-r^2) I0(2 r V) (d^2 + r^2)^((gamma-1)/2) dr.
    Returns I, and with ``derivs`` also J_d = exp(-V^2) dItilde/dd and
    J_V = exp(-V^2) (dItilde/dV) / V (finite at V = 0).
    """
    d = np.asarray(d, dtype=float).ravel()
    V = np.asarray(V, dtype=float).ravel()
    I = np.empty_like(d)
    Jd = np.empty_like(d) if derivs else None
    JV = np.empty_like(d) if derivs else None
    b = (gamma - 1.0) / 2.0
    for s in range(0, d.size, CHUNK):
        sl = slice(s, s + CHUNK)
        dd, VV = d[sl, None], V[sl, None]
        r, w = _plane_nodes(d[sl], V[sl], spec)
        x = 2.0 * r * VV
        g = np.exp(-(r - VV) ** 2)
        q = dd * dd + r * r
        qb = q ** b
        I[sl] = 2 * np.pi * (w * r * g * special.i0e(x) * qb).sum(1)
        if derivs:
            Jd[sl] = 2 * np.pi * (w * r * g * special.i0e(x) * (gamma - 1.0) * dd * qb / q).sum(1)
            with np.errstate(invalid="ignore", divide="ignore"):
                i1x = np.where(x < 1e-8, 0.5 - x / 2.0, special.i1e(x) / x)
            JV[sl] = 2 * np.pi * (w * 4.0 * r**3 * g * i1x * qb).sum(1)
    if derivs:
        return I, Jd, JV
    return I


# ---------------------------------------------------------------------------
# kernels

def _shifted(shift, E):
    return -E if shift is None else np.asarray(shift, dtype=float) - E


def kernel_k1(v, v_star, params: PhysParams, shift=None):
    """k1 = B0 pi |v - v*|^gamma exp(-(|v|^2 + |v*|^2)/2), times exp(shift)."""
    v = np.asarray(v, dtype=float)
    vs = np.asarray(v_star, dtype=float)
    dv = v - vs
    d = np.sqrt(_dot(dv, dv))
    if params.gamma < 0:
        _check_pairs(d, "kernel_k1")
    half = 0.5 * (_dot(v, v) + _dot(vs, vs))
    with np.errstate(divide="ignore"):
        dg = d ** params.gamma
    expo = -half if shift is None else np.asarray(shift, dtype=float) - half
    return params.B0 * np.pi * dg * np.exp(expo)


def kernel_k2(v, v_star, params: PhysParams, spec: KernelQuadSpec = DEFAULT_SPEC, shift=None):
    """k2 by the reduced radial plane integral, times exp(shift)."""
    v, vs, d, E, V = _scalars(v, v_star)
    _check_pairs(d, "kernel_k2")
    shape = d.shape
    I = _plane_integrals(d, V, params.gamma, spec).reshape(shape)
    return 2.0 * params.B0 / d * np.exp(_shifted(shift, E)) * I


def kernel_k(v, v_star, params: PhysParams, spec: KernelQuadSpec = DEFAULT_SPEC, shift=None):
    """Full kernel k = k2 - k1 (gain minus loss), times exp(shift)."""
    v, vs, d, E, V = _scalars(v, v_star)
    _check_pairs(d, "kernel_k")
    I = _plane_integrals(d, V, params.gamma, spec).reshape(d.shape)
    ex = np.exp(_shifted(shift, E))
    k2 = 2.0 * params.B0 / d * I
    k1 = params.B0 * np.pi * d ** params.gamma * np.exp(-V * V)
    return (k2 - k1) * ex


def _sq(v):
    v = np.asarray(v, dtype=float)
    return _dot(v, v)


def kernel_k_alpha(v, v_star, params: PhysParams, spec: KernelQuadSpec = DEFAULT_SPEC, shift=None):
    """k_alpha(v, v*) = exp(alpha |v|^2) k(v, v*) exp(-alpha |v*|^2)."""
    s = params.alpha * (_sq(v) - _sq(v_star))
    if shift is not None:
        s = s + shift
    return kernel_k(v, v_star, params, spec, shift=s)


def kernel_k_star_alpha(v, v_star, params: PhysParams, spec: KernelQuadSpec = DEFAULT_SPEC, shift=None):
    """k*_alpha(v, v*) = k_alpha(v*, v)."""
    return kernel_k_alpha(v_star, v, params, spec, shift=shift)


def kernel_k_star_alpha_gamma(v, v_star, params: PhysParams, spec: KernelQuadSpec = DEFAULT_SPEC, shift=None):
    """k*_{alpha,gamma}(v, v*) = (1 + |v|)^(-gamma) k*_alpha(v, v*)."""
    w = (1.0 + np.sqrt(_sq(v))) ** (-params.gamma)
    return w * kernel_k_star_alpha(v, v_star, params, spec, shift=shift)


# ---------------------------------------------------------------------------
# gradients

def grad_abs_V2_sq(v, v_star) -> np.ndarray:
    """Gradient in v of |V2|^2 = |v* x v|^2 / |v - v*|^2."""
    v = np.asarray(v, dtype=float)
    vs = np.asarray(v_star, dtype=float)
    dv = v - vs
    d2 = _dot(dv, dv)
    cr = np.cross(vs, v)
    c2 = _dot(cr, cr)
    num = _dot(vs, vs)[..., None] * v - _dot(v, vs)[..., None] * vs
    return 2.0 * num / d2[..., None] - 2.0 * (c2 / d2**2)[..., None] * dv


def grad_abs_V2(v, v_star) -> np.ndarray:
    """Gradient in v of |V2(v, v*)| (zero where V2 vanishes)."""
    v, vs, d, E, V = _scalars(v, v_star)
    _check_pairs(d, "grad_abs_V2")
    g = grad_abs_V2_sq(v, vs)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = g / (2.0 * V[..., None])
    return np.where(V[..., None] > 0, out, 0.0)


def grad_k1(v, v_star, params: PhysParams, shift=None) -> np.ndarray:
    """Gradient in v of k1: B0 pi (gamma d^(gamma-2)(v - v*) - v d^gamma) e^(-...)."""
    v = np.asarray(v, dtype=float)
    vs = np.asarray(v_star, dtype=float)
    dv = v - vs
    d = np.sqrt(_dot(dv, dv))
    _check_pairs(d, "grad_k1")
    g = params.gamma
    k1 = kernel_k1(v, vs, params, shift=shift)
    return k1[..., None] * (g * dv / (d * d)[..., None] - v)


def grad_k2_terms(v, v_star, params: PhysParams, spec: KernelQuadSpec = DEFAULT_SPEC, shift=None):
    """The four contributions to the v-gradient of k2.

    Writing k2 = (2 B0 / d) exp(-(|v|^2 + |v*|^2)/2) Itilde(d, |V2|):

    1. from the factor 1/d: ``-k2 (v - v*) / d^2``
    2. from the Gaussian factor: ``-k2 v``
    3. from d inside Itilde: ``(2 B0/d) e^{-E} J_d (v - v*)/d``
    4. from |V2| inside Itilde: ``(2 B0/d) e^{-E} (J_V / 2) grad |V2|^2``

    Returns an array of shape (4, ..., 3).
    """
    v, vs, d, E, V = _scalars(v, v_star)
    _check_pairs(d, "grad_k2")
    shape = d.shape
    I, Jd, JV = (a.reshape(shape) for a in _plane_integrals(d, V, params.gamma, spec, derivs=True))
    pref = 2.0 * params.B0 / d * np.exp(_shifted(shift, E))
    k2 = pref * I
    dv = v - vs
    t1 = -(k2 / (d * d))[..., None] * dv
    t2 = -k2[..., None] * v
    t3 = (pref * Jd / d)[..., None] * dv
    t4 = (pref * JV / 2.0)[..., None] * grad_abs_V2_sq(v, vs)
    return np.stack([t1, t2, t3, t4])


def grad_k2(v, v_star, params: PhysParams, spec: KernelQuadSpec = DEFAULT_SPEC, shift=None) -> np.ndarray:
    return grad_k2_terms(v, v_star, params, spec, shift=shift).sum(0)


def grad_kernel_k(v, v_star, params: PhysParams, spec: KernelQuadSpec = DEFAULT_SPEC,
                  shift=None) -> np.ndarray:
    """Analytic gradient of k = k2 - k1 with respect to the first argument."""
    return grad_k2(v, v_star, params, spec, shift) - grad_k1(v, v_star, params, shift)


def grad_k_star_alpha_gamma(v, v_star, params: PhysParams, spec: KernelQuadSpec = DEFAULT_SPEC, shift=None):
    """Gradient in v of k*_{alpha,gamma}(v, v*).

    Uses k*_{alpha,gamma} = (1+|v|)^(-gamma) exp(-alpha|v|^2) k(v, v*) exp(alpha|v*|^2)
    (k is symmetric).  The polynomial weight is differentiated with v/|v|,
    taken as 0 at v = 0.
    """
    v = np.asarray(v, dtype=float)
    vs = np.asarray(v_star, dtype=float)
    g, a = params.gamma, params.alpha
    s = a * (_sq(vs) - _sq(v))
    if shift is not None:
        s = s + shift
    ks = kernel_k(v, vs, params, spec, shift=s)
    dk = grad_kernel_k(v, vs, params, spec, shift=s)
    nv = np.sqrt(_sq(v))
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(nv[..., None] > 0, v / nv[..., None], 0.0)
    w = (1.0 + nv) ** (-g)
    return (-g * (1.0 + nv) ** (-g - 1.0) * ks)[..., None] * unit \
        - 2.0 * a * (w * ks)[..., None] * v + w[..., None] * dk


# ---------------------------------------------------------------------------
# envelopes

def weight_w_gamma(d, gamma: float):
    """w_gamma(d): 1/d for gamma > -1, (|log d| + 1)/d at -1, d^-|gamma| below."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("w_gamma requires d > 0")
    if gamma > -1.0:
        return 1.0 / d
    if gamma == -1.0:
        return (np.abs(np.log(d)) + 1.0) / d
    return d ** (-abs(gamma))


def envelope_exponent(v, v_star) -> np.ndarray:
    """E = (d^2 + ((|v|^2 - |v*|^2)/d)^2)/4, so that E_delta = exp(-(1 - delta) E)."""
    v, vs, d, E, V = _scalars(v, v_star)
    _check_pairs(d, "envelope")
    return E


def envelope_E_delta(v, v_star, delta: float):
    return np.exp(-(1.0 - delta) * envelope_exponent(v, v_star))


# ---------------------------------------------------------------------------
# reference integration around a singular point

@dataclass(frozen=True)
class LocalRule:
    """Spherical product rule centred on a point, for integrands singular there.

    The radius is ``rho = rho_max t^m`` with composite Gauss panels in t
    (geometric towards 0), ``m = max(1, power)``; the polar angle uses
    Gauss-Legendre in cos, the azimuth a uniform rule.  The polar axis is
    supplied per call.  The rule covers rho >= ``rho_min``; below that,
    v* - v loses digits to cancellation and :func:`kernel_integral`
    integrates the leading power law instead.
    """

    n_gl: int = 8
    n_geometric: int = 12
    n_uniform: int = 8
    n_mu: int = 16
    n_phi: int = 16
    power: float = 1.0
    rho_min: float = 1e-7

    def radial(self, rho_max: float):
        x, w = gauss_legendre01(self.n_gl)
        m = max(1.0, self.power)
        # the power map already clusters nodes at 0
        n_geo = max(1, int(round(self.n_geometric / m**2)))
        t_min = (self.rho_min / rho_max) ** (1.0 / m) if self.rho_min > 0 else 0.0
        edges = [t_min] + [2.0 ** (-k) for k in range(n_geo, 0, -1)]
        lo = edges[-1]
        edges += list(lo + (1 - lo) * np.arange(1, self.n_uniform + 1) / self.n_uniform)
        edges = np.asarray(edges)
        a, b = edges[:-1, None], edges[1:, None]
        t = (a + (b - a) * x[None, :]).ravel()
        wt = ((b - a) * w[None, :]).ravel()
        rho = rho_max * t**m
        return rho, wt * rho_max * m * t ** (m - 1.0) * rho**2

    def angular(self, axis):
        mu, wm = leggauss(self.n_mu)
        phi = 2 * np.pi * (np.arange(self.n_phi) + 0.5) / self.n_phi
        axis = np.asarray(axis, dtype=float)
        na = np.linalg.norm(axis)
        e1 = axis / na if na > 0 else np.array([0.0, 0.0, 1.0])
        e2, e3 = orthonormal_completion(e1)
        st = np.sqrt(1 - mu**2)
        om = (mu[:, None, None] * e1 + (st[:, None] * np.cos(phi)[None, :])[..., None] * e2
              + (st[:, None] * np.sin(phi)[None, :])[..., None] * e3).reshape(-1, 3)
        wom = (wm[:, None] * np.full(self.n_phi, 2 * np.pi / self.n_phi)[None, :]).ravel()
        return om, wom

    def nodes(self, center, rho_max: float, axis=None):
        """Points and weights of the rule; shapes (n, 3) and (n,)."""
        center = np.asarray(center, dtype=float)
        rho, wr = self.radial(rho_max)
        om, wo = self.angular(center if axis is None else axis)
        pts = center + rho[:, None, None] * om[None, :, :]
        return pts.reshape(-1, 3), (wr[:, None] * wo[None, :]).ravel()

    def refined(self) -> "LocalRule":
        """Doubled radial and polar orders; the azimuth is doubled unless it is 1
        (a single azimuth is exact for integrands symmetric about the axis)."""
        n_phi = self.n_phi if self.n_phi == 1 else 2 * self.n_phi
        return replace(self, n_gl=2 * self.n_gl, n_mu=2 * self.n_mu, n_phi=n_phi)


def local_rule_for(gamma: float, **kw) -> LocalRule:
    """Rule whose radial map absorbs the |v - v*|^(2+gamma) behaviour for soft potentials."""
    return LocalRule(power=max(1.0, 2.0 / (3.0 + gamma)), **kw)


def kernel_integral(v, g, params: PhysParams, rule: LocalRule | None = None,
                    spec: KernelQuadSpec = DEFAULT_SPEC, rho_max: float | None = None,
                    tol: float | None = None, max_refine: int = 2):
    """int k(v, v*) g(v*) dv* by a local spherical rule centred at v.

    ``g`` maps an (n, 3) array of velocities to n values.  The polar axis
    is aligned with v.  With ``tol`` the rule is refined until two
    successive values agree to that relative tolerance, otherwise
    :class:`QuadratureFailure` is raised.
    """
    v = np.asarray(v, dtype=float)
    rule = rule or local_rule_for(params.gamma)
    if rho_max is None:
        rho_max = float(np.linalg.norm(v)) + 10.0

    def once(r):
        pts, w = r.nodes(v, rho_max)
        val = float(np.sum(w * kernel_k(v[None, :], pts, params, spec) * g(pts)))
        if r.rho_min > 0:
            # ball rho < rho_min: k ~ A(omega) rho^gamma and g ~ g(v)
            om, wo = r.angular(v)
            a = kernel_k(v[None, :], v + r.rho_min * om, params, spec) * r.rho_min ** -params.gamma
            val += float(wo @ a * g(v[None, :])[0]) * r.rho_min ** (3 + params.gamma) / (3 + params.gamma)
        return val

    val = once(rule)
    if tol is None:
        return val
    for _ in range(max_refine):
        rule = rule.refined()
        new = once(rule)
        if abs(new - val) <= tol * abs(new):
            return new
        val = new
    raise QuadratureFailure(f"kernel_integral did not reach relative tolerance {tol}")
