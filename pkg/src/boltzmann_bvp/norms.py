"""Weighted Lebesgue norms, boundary norms and Slobodeckij seminorms.

Velocity weights are w_{alpha,beta}(v) = exp(alpha |v|^2) (1 + |v|)^beta.
The H^s seminorms are estimated by seeded Monte Carlo over pairs
(x, y = x + r omega) with r drawn from a density proportional to
r^(1 - 2s), in two strata split at ``h``; this cancels the singular part of
|x - y|^-(3 + 2s) against the pair Jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretization import PhaseField, SpatialGrid, VelocityGrid
from .geometry import ConvexDomain
from .operators import BoundaryData, velocity_interp_matrix

NORM_KINDS = ("L2_alpha_beta", "Linf_alpha_beta", "L2_boundary", "Hs_x_seminorm",
              "Hs_v_seminorm", "Bs_boundary", "X_s", "Y_s")


def velocity_weight(v, alpha: float, beta: float) -> np.ndarray:
    """exp(alpha |v|^2) (1 + |v|)^beta for points (..., 3)."""
    s = np.linalg.norm(np.asarray(v, dtype=float), axis=-1)
    return np.exp(alpha * s * s) * (1.0 + s) ** beta


def _values(f):
    return f.values if isinstance(f, PhaseField) else np.asarray(f, dtype=float)


def weighted_l2(field: PhaseField, alpha: float, beta: float) -> float:
    """(int_Omega int |f|^2 w_{alpha,beta}^2 dv dx)^(1/2) by the product rule."""
    w = velocity_weight(field.vgrid.points, alpha, beta)
    dens = (field.values * w) ** 2
    return float(np.sqrt(field.sgrid.weights @ (dens @ field.vgrid.weights)))


def weighted_linf(field: PhaseField, alpha: float, beta: float) -> float:
    """max over all nodes of |f| w_{alpha,beta}."""
    w = velocity_weight(field.vgrid.points, alpha, beta)
    return float(np.max(np.abs(field.values) * w[None, :]))


def incoming_pairs(sgrid: SpatialGrid, vgrid: VelocityGrid):
    """Mask (n_boundary, n_velocity) of pairs with n(z).v < 0."""
    return sgrid.normals @ vgrid.points.T < 0


def boundary_l2(f0: BoundaryData, sgrid: SpatialGrid, vgrid: VelocityGrid, alpha: float) -> float:
    """(int_{Gamma^-} |f0|^2 e^{2 alpha |v|^2} |n.v| dsigma dv)^(1/2)."""
    mask = incoming_pairs(sgrid, vgrid)
    nv = np.abs(sgrid.normals @ vgrid.points.T)
    vals = f0(sgrid.boundary[:, None, :], vgrid.points[None, :, :])
    w = np.exp(2 * alpha * (vgrid.points**2).sum(1))
    dens = np.where(mask, vals**2 * nv * w[None, :], 0.0)
    return float(np.sqrt(sgrid.boundary_weights @ (dens @ vgrid.weights)))


def boundary_linf(f0: BoundaryData, sgrid: SpatialGrid, vgrid: VelocityGrid,
                  alpha: float, beta: float) -> float:
    mask = incoming_pairs(sgrid, vgrid)
    vals = f0(sgrid.boundary[:, None, :], vgrid.points[None, :, :])
    w = velocity_weight(vgrid.points, alpha, beta)
    return float(np.max(np.where(mask, np.abs(vals) * w[None, :], 0.0)))


def boundary_holder(f0: BoundaryData, sgrid: SpatialGrid, vgrid: VelocityGrid, s1: float,
                    alpha: float, beta: float, n_pairs: int = 4000, seed: int = 42) -> float:
    """Sup of the weighted Hoelder quotient over sampled boundary pairs sharing v.

    Pairs are drawn from the boundary nodes; only velocities incoming at
    both points count.
    """
    rng = np.random.default_rng(seed)
    nb = len(sgrid.boundary)
    i = rng.integers(0, nb, n_pairs)
    j = rng.integers(0, nb, n_pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    z1, z2 = sgrid.boundary[i], sgrid.boundary[j]
    V = vgrid.points
    inc = (sgrid.normals[i] @ V.T < 0) & (sgrid.normals[j] @ V.T < 0)
    diff = np.abs(f0(z1[:, None, :], V[None]) - f0(z2[:, None, :], V[None]))
    dist = np.linalg.norm(z1 - z2, axis=1)
    q = diff / dist[:, None] ** s1 * velocity_weight(V, alpha, beta)[None, :]
    return float(np.max(np.where(inc, q, 0.0), initial=0.0))


def boundary_b_norm(f0, sgrid, vgrid, s1, alpha, beta, **kw) -> float:
    return boundary_linf(f0, sgrid, vgrid, alpha, beta) + boundary_holder(
        f0, sgrid, vgrid, s1, alpha, beta, **kw)


# ---------------------------------------------------------------------------
# Slobodeckij seminorms by Monte Carlo

@dataclass(frozen=True)
class PairSample:
    """Seeded pair sample for the H^s double integral over a region.

    ``x`` and ``y`` have shape (n, 3); ``weight`` is the importance weight
    multiplying |u(x) - u(y)|^2 / r^2 (zero when y leaves the region), and
    ``stratum`` labels 0 for r < h and 1 otherwise.
    """

    x: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    r: np.ndarray
    stratum: np.ndarray
    s: float


def _sample_r(rng, n, a, b, c):
    """r in [a, b] with density proportional to r^(c - 1), c = 2 - 2s > 0."""
    u = rng.random(n)
    ac, bc = a**c, b**c
    return (ac + u * (bc - ac)) ** (1.0 / c), (bc - ac) / c


def pair_sample(sample_x, contains, volume: float, diameter: float, s: float, n: int,
                seed: int = 42, h: float | None = None, near_fraction: float = 0.5) -> PairSample:
    """Build a pair sample for a region given a uniform sampler and membership test."""
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    h = 0.1 * diameter if h is None else h
    c = 2.0 - 2.0 * s
    n_near = int(round(n * near_fraction))
    n_far = n - n_near
    xs, ys, ws, rs, st = [], [], [], [], []
    for k, (a, b, m) in enumerate(((0.0, h, n_near), (h, diameter, n_far))):
        if m == 0:
            continue
        x = sample_x(rng, m)
        r, norm = _sample_r(rng, m, a, b, c)
        om = rng.normal(size=(m, 3))
        om /= np.linalg.norm(om, axis=1, keepdims=True)
        y = x + r[:, None] * om
        inside = contains(y)
        # I = int dx int domega int dr r^(1-2s) |du|^2 / r^2 1_inside
        w = np.where(inside, volume * 4 * np.pi * norm / m, 0.0)
        y = np.where(inside[:, None], y, x)
        xs.append(x), ys.append(y), ws.append(w), rs.append(r), st.append(np.full(m, k))
    return PairSample(np.concatenate(xs), np.concatenate(ys), np.concatenate(ws),
                      np.concatenate(rs), np.concatenate(st), s)


def domain_pair_sample(domain: ConvexDomain, s: float, n: int = 4000, seed: int = 42,
                       h: float | None = None) -> PairSample:
    return pair_sample(lambda rng, m: domain.sample_interior(rng, m),
                       lambda y: domain.contains(y, tol=0.0), domain.volume, domain.diameter,
                       s, n, seed, h)


def ball_pair_sample(R: float, s: float, n: int = 4000, seed: int = 42) -> PairSample:
    return domain_pair_sample(ConvexDomain.ball(R), s, n, seed)


@dataclass(frozen=True)
class SeminormEstimate:
    value: np.ndarray        # seminorm (not squared), one per column
    stderr: np.ndarray

    def __float__(self):
        return float(np.asarray(self.value).ravel()[0])


def estimate_from_differences(sample: PairSample, du: np.ndarray) -> SeminormEstimate:
    """Seminorm from differences du = u(x) - u(y), shape (n,) or (n, k).

    The stratum totals are sums of independent terms, so the standard
    error of the squared seminorm adds over strata; it is mapped to the
    seminorm by the delta method.
    """
    du = np.asarray(du, dtype=float)
    if du.ndim == 1:
        du = du[:, None]
    terms = sample.weight[:, None] * du**2 / sample.r[:, None] ** 2
    total = np.zeros(du.shape[1])
    var = np.zeros(du.shape[1])
    for k in np.unique(sample.stratum):
        t = terms[sample.stratum == k]
        m = len(t)
        total += t.sum(0)
        var += m * t.var(0, ddof=1) if m > 1 else 0.0
    val = np.sqrt(np.maximum(total, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.where(val > 0, np.sqrt(var) / (2 * val), 0.0)
    return SeminormEstimate(val, se)


def slobodeckij_fn(u, domain: ConvexDomain, s: float, n: int = 4000, seed: int = 42,
                   min_distance: float = 0.0) -> SeminormEstimate:
    """|u|_{H^s(Omega)} for a callable u mapping (n, 3) points to (n,) or (n, k) values.

    With ``min_distance`` pairs closer than that are dropped (integrand
    restriction).
    """
    smp = domain_pair_sample(domain, s, n, seed)
    du = np.asarray(u(smp.x)) - np.asarray(u(smp.y))
    if min_distance > 0:
        du = np.where((smp.r >= min_distance).reshape((-1,) + (1,) * (du.ndim - 1)), du, 0.0)
    return estimate_from_differences(smp, du)


def slobodeckij_x(field: PhaseField, s: float, n: int = 4000, seed: int = 42) -> SeminormEstimate:
    """|f(., v_j)|_{H^s_x} for every velocity node j, using the spatial interpolant."""
    smp = domain_pair_sample(field.sgrid.domain, s, n, seed)
    it = field.sgrid.interpolator
    P = it.matrix(np.concatenate([smp.x, smp.y]))
    vals = P @ field.values
    m = len(smp.x)
    return estimate_from_differences(smp, vals[:m] - vals[m:])


def spatial_l2_per_velocity(field: PhaseField) -> np.ndarray:
    return np.sqrt(field.sgrid.weights @ field.values**2)


def l2v_hsx(field: PhaseField, s: float, alpha: float, beta: float, n: int = 4000,
            seed: int = 42, seminorm_only: bool = False) -> float:
    """||f||_{L^2_{v,alpha,beta}(H^s_x)}; the H^s norm is (||.||_{L^2}^2 + |.|_{H^s}^2)^(1/2)."""
    semi = slobodeckij_x(field, s, n, seed).value
    sq = semi**2 if seminorm_only else semi**2 + spatial_l2_per_velocity(field) ** 2
    w = velocity_weight(field.vgrid.points, alpha, beta)
    return float(np.sqrt(field.vgrid.weights @ (sq * w * w)))


def l2v_hsx_seminorm(field: PhaseField, s: float, alpha: float, beta: float, n: int = 4000,
                     seed: int = 42) -> SeminormEstimate:
    """(int |f(., v)|_{H^s_x}^2 w(v)^2 dv)^(1/2) with a standard error.

    The per-velocity estimates share one pair sample, so their errors are
    combined additively (an upper bound on the correlated case).
    """
    est = slobodeckij_x(field, s, n, seed)
    w = velocity_weight(field.vgrid.points, alpha, beta) ** 2 * field.vgrid.weights
    val = float(np.sqrt(w @ est.value**2))
    se_sq = float(w @ (2.0 * est.value * est.stderr))
    return SeminormEstimate(np.array([val]), np.array([se_sq / (2 * val) if val > 0 else 0.0]))


def slobodeckij_v(values, vgrid: VelocityGrid, s: float, R: float | None = None,
                  n: int = 4000, seed: int = 42) -> SeminormEstimate:
    """Unweighted |g|_{H^s(B_R)} in velocity.

    ``values`` is either a callable of velocity points or grid values at
    one spatial node (interpolated with :func:`velocity_interp_matrix`).
    """
    R = vgrid.v_max / np.sqrt(2.0) if R is None else R
    smp = ball_pair_sample(R, s, n, seed)
    if callable(values):
        du = np.asarray(values(smp.x)) - np.asarray(values(smp.y))
    else:
        P = velocity_interp_matrix(vgrid, np.concatenate([smp.x, smp.y]))
        g = P @ np.asarray(values, dtype=float)
        du = g[:len(smp.x)] - g[len(smp.x):]
    return estimate_from_differences(smp, du)


def x_norm(field: PhaseField, s: float, alpha: float, beta: float, gamma: float,
           n: int = 4000, seed: int = 42) -> float:
    """||f||_{X^s} = ||f||_{L^inf_{alpha,beta}} + ||f||_{L^2_{v,alpha,gamma/2}(H^s_x)}."""
    return weighted_linf(field, alpha, beta) + l2v_hsx(field, s, alpha, gamma / 2, n, seed)


def y_norm(field: PhaseField, s: float, alpha: float, beta: float, gamma: float,
           n: int = 4000, seed: int = 42) -> float:
    """||phi||_{Y^s} = ||phi||_{L^inf_{alpha,beta-gamma}} + ||phi||_{L^2_{v,alpha,-gamma/2}(H^s_x)}."""
    return weighted_linf(field, alpha, beta - gamma) + l2v_hsx(field, s, alpha, -gamma / 2, n, seed)


@dataclass(frozen=True)
class NormSpec:
    kind: str
    s: float | None = None
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.kind not in NORM_KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.kind in ("Hs_x_seminorm", "Hs_v_seminorm", "Bs_boundary", "X_s", "Y_s"):
            if self.s is None or not 0 < self.s < 1:
                raise ValueError("seminorm kinds need s in (0, 1)")
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValueError("weights must be finite")


def compute_norm(spec: NormSpec, field: PhaseField | None = None, f0: BoundaryData | None = None,
                 sgrid: SpatialGrid | None = None, vgrid: VelocityGrid | None = None,
                 n: int = 4000, seed: int = 42) -> float:
    """Dispatch on ``spec.kind``; field kinds need ``field``, boundary kinds need ``f0`` and grids."""
    k = spec.kind
    if k == "L2_alpha_beta":
        return weighted_l2(field, spec.alpha, spec.beta)
    if k == "Linf_alpha_beta":
        return weighted_linf(field, spec.alpha, spec.beta)
    if k == "L2_boundary":
        return boundary_l2(f0, sgrid, vgrid, spec.alpha)
    if k == "Bs_boundary":
        return boundary_b_norm(f0, sgrid, vgrid, spec.s, spec.alpha, spec.beta, seed=seed)
    if k == "Hs_x_seminorm":
        return l2v_hsx(field, spec.s, spec.alpha, spec.beta, n, seed, seminorm_only=True)
    if k == "Hs_v_seminorm":
        vals = [float(slobodeckij_v(field.values[i], field.vgrid, spec.s, n=n, seed=seed))
                for i in range(field.sgrid.size)]
        return float(np.sqrt(field.sgrid.weights @ np.square(vals)))
    if k == "X_s":
        return x_norm(field, spec.s, spec.alpha, spec.beta, spec.gamma, n, seed)
    return y_norm(field, spec.s, spec.alpha, spec.beta, spec.gamma, n, seed)
