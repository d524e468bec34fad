"""Linearized and weakly nonlinear solvers for f = S_Omega K f + J f0 + S_Omega phi.

The linear problem is solved by Richardson iteration (the Neumann series
of S_Omega K), optionally by GMRES on the same operator.  The nonlinear
problem uses the Picard scheme f_{i+1} = solution with source
Gamma(f_i, f_i).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from . import norms
from .discretization import PhaseField
from .errors import DivergenceDetected, NotConverged
from .operators import BoundaryData, Operators


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    final_residual: float = float("nan")
    norms: dict = field(default_factory=dict)
    contraction_ratios: list = field(default_factory=list)
    converged: bool = False
    method: str = "richardson"
    differences: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def l2_norm(ops: Operators, values) -> float:
    """||.||_{L^2_{alpha, gamma/2}} on the grids of ``ops``."""
    p = ops.params
    return norms.weighted_l2(ops.field(values), p.alpha, p.gamma / 2)


def source(ops: Operators, f0: BoundaryData | None, phi=None) -> np.ndarray:
    """J f0 + S_Omega phi."""
    b = np.zeros((ops.sgrid.size, ops.vgrid.size))
    if f0 is not None:
        b += ops.apply_J(f0).values
    if phi is not None:
        b += ops.apply_S_Omega(phi).values
    return b


def fixed_point_map(ops: Operators, values: np.ndarray) -> np.ndarray:
    return ops.transport.apply(ops.kmat.apply(values))


def residual(ops: Operators, f, f0: BoundaryData | None, phi=None) -> float:
    """||f - S_Omega K f - J f0 - S_Omega phi||_{L^2_{alpha, gamma/2}}."""
    v = f.values if isinstance(f, PhaseField) else np.asarray(f, dtype=float)
    return l2_norm(ops, v - fixed_point_map(ops, v) - source(ops, f0, phi))


def solution_norms(ops: Operators, f: PhaseField) -> dict:
    p = ops.params
    return {"L2_alpha_gamma2": norms.weighted_l2(f, p.alpha, p.gamma / 2),
            "Linf_alpha_beta": norms.weighted_linf(f, p.alpha, p.beta)}


def _richardson(ops, b, tol, max_iter, report, x0=None):
    f = b.copy() if x0 is None else np.array(x0, dtype=float)
    hist = report.residual_history
    for it in range(1, max_iter + 1):
        nxt = fixed_point_map(ops, f) + b
        r = l2_norm(ops, nxt - f)
        hist.append(r)
        if not np.isfinite(r):
            raise NotConverged(it, r, report)
        if r <= tol:
            report.iterations = it
            return f
        f = nxt
    report.iterations = max_iter
    raise NotConverged(max_iter, hist[-1], report)


def _gmres(ops, b, tol, max_iter, report, x0=None):
    shape = b.shape
    # scale so that the Euclidean norm matches the weighted L2 norm
    p = ops.params
    s = np.sqrt(ops.sgrid.weights)[:, None] * (
        np.sqrt(ops.vgrid.weights) * norms.velocity_weight(ops.vgrid.points, p.alpha, p.gamma / 2))[None, :]
    s = np.where(s > 0, s, 1.0)    # boundary nodes carry no volume weight

    def mv(y):
        f = y.reshape(shape) / s
        return ((f - fixed_point_map(ops, f)) * s).ravel()

    A = LinearOperator((b.size, b.size), matvec=mv, dtype=float)
    hist = report.residual_history

    def cb(rk):
        hist.append(float(rk))

    rhs = (b * s).ravel()
    bn = float(np.linalg.norm(rhs))
    if bn == 0.0:
        report.iterations = 1
        hist.append(0.0)
        return np.zeros(shape)
    y0 = None if x0 is None else (np.asarray(x0) * s).ravel()
    y, info = gmres(A, rhs, x0=y0, atol=0.1 * tol, rtol=0.0, restart=60, maxiter=max_iter,
                    callback=cb, callback_type="pr_norm")
    f = y.reshape(shape) / s
    hist.append(l2_norm(ops, f - fixed_point_map(ops, f) - b))
    report.iterations = len(hist)
    if info != 0 or hist[-1] > tol:
        raise NotConverged(max_iter, hist[-1], report)
    return f


def solve_linearized(ops: Operators, f0: BoundaryData | None = None, phi=None,
                     tol: float = 1e-10, max_iter: int = 2000, method: str = "richardson",
                     x0=None) -> tuple[PhaseField, SolveReport]:
    """Solve f = S_Omega K f + J f0 + S_Omega phi.

    The Richardson residual at step n is ||f_{n+1} - f_n||, which is the
    fixed-point residual of f_n; iteration stops at the first f_n with
    residual <= tol.  Raises :class:`NotConverged` (carrying the report)
    when ``max_iter`` is reached.
    """
    report = SolveReport(method=method)
    b = source(ops, f0, phi)
    if method == "richardson":
        f = _richardson(ops, b, tol, max_iter, report, x0)
    elif method == "gmres":
        f = _gmres(ops, b, tol, max_iter, report, x0)
    else:
        raise ValueError(f"unknown method {method!r}")
    field_ = ops.field(f)
    report.final_residual = report.residual_history[-1]
    report.converged = True
    report.norms = solution_norms(ops, field_)
    return field_, report


def x_surrogate(ops: Operators, values, s: float | None, n_pairs: int = 2000, seed: int = 42) -> float:
    """L^inf_{alpha,beta} + L^2_{v,alpha,gamma/2}(H^s_x) (the latter skipped when s is None)."""
    p = ops.params
    f = ops.field(values)
    out = norms.weighted_linf(f, p.alpha, p.beta)
    if s is not None:
        out += norms.l2v_hsx(f, s, p.alpha, p.gamma / 2, n_pairs, seed)
    return out


def solve_nonlinear(ops: Operators, f0: BoundaryData, tol: float = 1e-10, max_outer: int = 30,
                    inner_tol: float | None = None, inner_max_iter: int = 2000,
                    method: str = "richardson", s: float | None = None,
                    n_pairs: int = 2000, seed: int = 42,
                    linear: PhaseField | None = None) -> tuple[PhaseField, SolveReport]:
    """Picard iteration f_1 = L^-1 (J f0), f_{i+1} = L^-1 (J f0 + S_Omega Gamma(f_i, f_i)).

    Differences are measured in the X^s surrogate (:func:`x_surrogate`).
    Raises :class:`DivergenceDetected` when the difference grows three
    consecutive times, :class:`NotConverged` after ``max_outer`` steps.
    """
    inner_tol = inner_tol if inner_tol is not None else 0.01 * tol
    report = SolveReport(method=f"picard/{method}")
    if linear is None:
        f, r = solve_linearized(ops, f0, None, inner_tol, inner_max_iter, method)
    else:
        f = linear
        r = SolveReport(iterations=0, residual_history=[residual(ops, f, f0)])
    report.inner_iterations.append(r.iterations)
    report.residual_history.append(r.residual_history[-1])
    growth = 0
    for i in range(1, max_outer + 1):
        g = ops.gamma_bilinear(f, f)
        nxt, r = solve_linearized(ops, f0, g, inner_tol, inner_max_iter, method, x0=f.values)
        report.inner_iterations.append(r.iterations)
        report.residual_history.append(r.residual_history[-1])
        d = x_surrogate(ops, nxt.values - f.values, s, n_pairs, seed)
        report.differences.append(d)
        if len(report.differences) >= 2:
            prev = report.differences[-2]
            report.contraction_ratios.append(d / prev if prev > 0 else 0.0)
            growth = growth + 1 if d > prev else 0
        f = nxt
        report.iterations = i
        if not np.isfinite(d):
            raise DivergenceDetected("non-finite iterate", report)
        if growth >= 3:
            report.final_residual = d
            raise DivergenceDetected("successive differences grew three times in a row", report)
        if d <= tol:
            report.converged = True
            report.final_residual = d
            report.norms = solution_norms(ops, f)
            return f, report
    report.final_residual = report.differences[-1]
    raise NotConverged(max_outer, report.final_residual, report)
