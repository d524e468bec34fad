"""Acceptance gate: one PASS/FAIL line per criterion, tolerances pinned below.

Run with ``pytest -s tests/test_acceptance.py`` to see the lines as they
are produced; they are also repeated in the terminal summary.
"""
import csv
import filecmp
import os

import numpy as np
import pytest
import yaml

from boltzmann_bvp import cli
from boltzmann_bvp import kernel as kn
from boltzmann_bvp import verify as vf
from boltzmann_bvp.discretization import build_spatial_grid, build_velocity_grid
from boltzmann_bvp.norms import weighted_linf
from boltzmann_bvp.operators import (BoundaryData, build_kernel_matrix, build_operators,
                                     collision_invariants, collision_omega, collision_transform,
                                     reflect)
from boltzmann_bvp.params import PhysParams
from boltzmann_bvp.solver import l2_norm, residual, solve_linearized, solve_nonlinear

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

SEED = 20240601
IDENTITY_TOL = 1e-12
JACOBIAN_TOL = 1e-6
NU_TOL, S_OMEGA_TOL = 1e-10, 1e-8
NULL_TOL, NULL_DROP, INVARIANT_TOL = 1e-3, 4.0, 5e-3
GRAD_TOL = 1e-5
SLOPE_TARGET, SLOPE_TOL = 0.5, 0.1
EXPONENT_TOL = 0.1
SOLVER_TOL, SCALING_TOL = 1e-8, 0.3
LINF_TOL = 0.2
LADDER_SPREAD, SOFT_RATIO = 2.0, 5.0
CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")


def _unit(rng, n):
    u = rng.normal(size=(n, 3))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _pairs(rng, n, lo, hi):
    s = np.exp(rng.uniform(np.log(lo), np.log(hi), (n, 2)))
    return _unit(rng, n) * s[:, :1], _unit(rng, n) * s[:, 1:]


def _fd_jacobian(fn, z, h=1e-6):
    J = np.zeros((6, 6))
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        J[:, k] = (np.concatenate(fn(z + e)) - np.concatenate(fn(z - e))) / (2 * h)
    return J


# ---------------------------------------------------------------- 1-5

def test_c01_identities(criterion):
    rng = np.random.default_rng(SEED)
    v, vs = _pairs(rng, 1000, 1e-2, 10.0)
    g = kn.pair_geometry(v, vs)
    s2 = (v * v).sum(1) + (vs * vs).sum(1)
    V1, V2 = (g.V1 * g.V1).sum(1), (g.V2 * g.V2).sum(1)
    e1 = np.max(np.abs(0.25 * g.d**2 + V1 + V2 - 0.5 * s2) / (0.5 * s2))
    e2 = np.max(np.abs(V1 + V2 - 0.25 * ((v + vs) ** 2).sum(1)) / (0.25 * s2))
    e3 = np.max(np.abs((g.V2 * (v - vs)).sum(1)) / s2)
    th, ph = rng.uniform(0, np.pi / 2, 1000), rng.uniform(0, 2 * np.pi, 1000)
    a, b = collision_transform(v, vs, th, ph)
    e4 = np.max(np.abs((a * a).sum(1) + (b * b).sum(1) - s2) / s2)
    a0, b0 = collision_transform(v, vs, np.zeros(1000), ph)
    a1, b1 = collision_transform(v, vs, np.full(1000, np.pi / 2), ph)
    scale = np.sqrt(s2)[:, None]
    e5 = max(np.max(np.abs(a0 - vs) / scale), np.max(np.abs(b0 - v) / scale),
             np.max(np.abs(a1 - v) / scale), np.max(np.abs(b1 - vs) / scale))
    worst = max(e1, e2, e3, e4, e5)
    ok = worst <= IDENTITY_TOL
    assert criterion(1, ok, f"max rel err {worst:.2e} (<= {IDENTITY_TOL:g}) over 1000 samples: "
                            f"identity_V2 {e1:.1e}, |V1|^2+|V2|^2 {e2:.1e}, V2.(v-v*) {e3:.1e}, "
                            f"energy {e4:.1e}, swap/identity {e5:.1e}")


def test_c02_jacobian(criterion):
    rng = np.random.default_rng(SEED)
    fixed, moving = [], []
    for _ in range(100):
        z = rng.normal(size=6)
        th, ph = rng.uniform(0.05, np.pi / 2 - 0.05), rng.uniform(0, 2 * np.pi)
        om = collision_omega(z[:3], z[3:], th, ph)
        fixed.append(abs(np.linalg.det(_fd_jacobian(lambda y: reflect(y[:3], y[3:], om), z))))
        moving.append(abs(np.linalg.det(_fd_jacobian(
            lambda y: collision_transform(y[:3], y[3:], th, ph), z))))
    err = np.max(np.abs(np.array(fixed) - 1))
    ok = err <= JACOBIAN_TOL
    assert criterion(2, ok, f"fixed omega: max ||det| - 1| = {err:.2e} (<= {JACOBIAN_TOL:g}) at 100 samples; "
                            f"fixed (theta, phi) with moving frame: |det| in [{min(moving):.3f}, "
                            f"{max(moving):.3f}] (see ledger)")


def test_c03_closed_forms(criterion, ops0):
    B0 = 0.37
    s = np.array([0.0, 0.1, 1.0, 3.0, 10.0, 40.0])
    nu0 = kn.collision_frequency(s, PhysParams(B0=B0, gamma=0.0))
    e1 = np.max(np.abs(nu0 / (B0 * np.pi**2.5) - 1))
    e2 = abs(float(kn.collision_frequency(0.0, PhysParams(B0=B0, gamma=1.0))) / (2 * np.pi**2 * B0) - 1)
    tau, nu = ops0.tau(), ops0.nu_nodes[None, :]
    got = ops0.apply_S_Omega(np.ones_like(tau)).values
    ref = -np.expm1(-nu * tau) / nu
    e3 = np.max(np.abs(got - ref) / (ref + 1e-15))  # tau = 0 on outgoing boundary pairs
    ok = e1 <= NU_TOL and e2 <= NU_TOL and e3 <= S_OMEGA_TOL
    assert criterion(3, ok, f"nu(gamma=0) rel {e1:.1e}, nu(0; gamma=1) rel {e2:.1e} (<= {NU_TOL:g}); "
                            f"S_Omega 1 rel {e3:.1e} (<= {S_OMEGA_TOL:g}) at {tau.size} nodes")


def _null_errors(params, n_r, n_ang):
    vg = build_velocity_grid(params, n_r, n_ang)
    K = build_kernel_matrix(params, vg)
    nu = np.repeat(kn.collision_frequency(vg.radii, params), vg.n_dir)
    errs = []
    for h in collision_invariants(vg.points):
        r = K.apply(h[None, :])[0] - nu * h
        errs.append(np.sqrt(vg.weights @ r**2 / (vg.weights @ (nu * h) ** 2)))
    return np.array(errs)


def test_c04_null_space(criterion):
    # the default velocity grid is (32, 12); one doubling is (64, 24)
    p = PhysParams(gamma=0.0)
    e, e2 = _null_errors(p, 32, 12), _null_errors(p, 64, 24)
    soft = _null_errors(PhysParams(gamma=-2.5), 32, 12)
    drop = e[0] / e2[0]
    ok = e[0] <= NULL_TOL and drop >= NULL_DROP and e[1:].max() <= INVARIANT_TOL
    assert criterion(4, ok, f"gamma=0: sqrt(M) rel err {e[0]:.2e} (<= {NULL_TOL:g}), drop {drop:.1f}x "
                            f"(>= {NULL_DROP:g}x), invariants max {e[1:].max():.2e} (<= {INVARIANT_TOL:g}); "
                            f"info gamma=-2.5: sqrt(M) {soft[0]:.2e}, invariants max {soft[1:].max():.2e}")


def test_c05_gradients(criterion):
    rng = np.random.default_rng(SEED)
    worst = {}
    for g in vf.GAMMA_GRID:
        p = PhysParams(gamma=g)
        v, vs = _pairs(rng, 100, 0.1, 5.0)
        an = kn.grad_kernel_k(v, vs, p)
        fd = np.zeros_like(an)
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1e-5
            fd[:, i] = (kn.kernel_k(v + e, vs, p) - kn.kernel_k(v - e, vs, p)) / 2e-5
        worst[g] = float(np.max(np.linalg.norm(an - fd, axis=1) / np.linalg.norm(an, axis=1)))
    ok = max(worst.values()) <= GRAD_TOL
    detail = ", ".join(f"{g:g}: {w:.1e}" for g, w in worst.items())
    assert criterion(5, ok, f"max rel err per gamma (<= {GRAD_TOL:g}, 100 pairs each): {detail}")


# ---------------------------------------------------------------- 6-8

SUITES6 = ("geometry", "kernel", "integrals", "holder", "averaging", "transport")


@pytest.fixture(scope="module")
def suite_reports():
    return {name: vf.run_suite(name, PhysParams(), vf.GAMMA_GRID, seed=42) for name in SUITES6}


def test_c06_estimate_suite(criterion, suite_reports):
    reps = [r for name in SUITES6 for r in suite_reports[name]]
    failed = [f"{r.check_id}@{r.gamma:g}" for r in reps if not r.passed]
    ok = not failed
    assert criterion(6, ok, f"{len(reps) - len(failed)}/{len(reps)} checks pass over gammas "
                            f"{list(vf.GAMMA_GRID)} (suites {', '.join(SUITES6)})"
                            + (f"; failed: {', '.join(failed)}" if failed else ""))


def test_c07_holder_slope(criterion, suite_reports):
    rep = next(r for r in suite_reports["holder"] if r.gamma == -2.5)
    slope = rep.details["slope"]
    ok = abs(slope - SLOPE_TARGET) <= SLOPE_TOL
    assert criterion(7, ok, f"gamma=-2.5 slope {slope:.3f} (target {SLOPE_TARGET} +- {SLOPE_TOL})")


def test_c08_averaging_exponent(criterion, suite_reports):
    by_g = {r.gamma: r.details for r in suite_reports["averaging"]}
    p0, t0 = by_g[0.0]["exponent"], by_g[0.0]["target"]
    p25, t25 = by_g[-2.5]["exponent"], by_g[-2.5]["target"]
    p2 = by_g[-2.0]["exponent"]
    ok = abs(p0 - t0) <= EXPONENT_TOL and abs(p25 - t25) <= EXPONENT_TOL and min(p0, p25) <= p2 <= max(p0, p25)
    assert criterion(8, ok, f"gamma=0 {p0:.3f} (target {t0:g}), gamma=-2.5 {p25:.3f} (target {t25:g}), "
                            f"tol {EXPONENT_TOL}; gamma=-2 {p2:.3f} between")


# ---------------------------------------------------------------- 9-12

def test_c09_solver(criterion, ops0):
    _, rz = solve_linearized(ops0, BoundaryData.zero(), tol=1e-10)
    fm, _ = solve_linearized(ops0, BoundaryData.maxwellian(1.0), tol=1e-10)
    r_zero = rz.final_residual
    r_max = residual(ops0, fm, BoundaryData.maxwellian(1.0))
    _, rr = solve_linearized(ops0, BoundaryData.smooth_random(0.1), tol=1e-10)
    h = np.array(rr.residual_history)
    ratios = h[1:] / h[:-1]
    geometric = bool(np.all(ratios[3:] < 1))
    corr, contr = [], []
    for eps in (1e-2, 5e-3):
        f0 = BoundaryData.smooth_random(eps)
        lin, _ = solve_linearized(ops0, f0, tol=1e-13)
        nl, rep = solve_nonlinear(ops0, f0, tol=1e-12, s=None, linear=lin)
        corr.append(l2_norm(ops0, nl.values - lin.values))
        contr.append(rep.contraction_ratios)
    # contraction_ratios[0] = |f_2 - f_1| / |f_1 - f_0|, the first ratio involving the second difference
    c = max(contr[0])
    scale = corr[0] / corr[1]
    ok = (r_zero <= SOLVER_TOL and r_max <= SOLVER_TOL and geometric and c <= 0.5
          and abs(scale / 4 - 1) <= SCALING_TOL)
    assert criterion(9, ok, f"residual zero {r_zero:.1e}, sqrt(M) {r_max:.1e} (<= {SOLVER_TOL:g}); "
                            f"Richardson max ratio after it. 3 {ratios[3:].max():.3f} (< 1); "
                            f"nonlinear eps=1e-2 max contraction {c:.3f} (<= 0.5); "
                            f"correction ratio {scale:.2f} (4 +- {SCALING_TOL:.0%})")


def test_c10_linf_refinement(criterion, ball):
    p = PhysParams(B0=0.1, gamma=0.0)
    f0 = BoundaryData.smooth_random(1.0)
    vals = []
    for (nr, na), (nx, nm) in (((16, 6), (4, 4)), ((32, 12), (6, 8))):
        ops = build_operators(p, build_spatial_grid(ball, nx, nm), build_velocity_grid(p, nr, na))
        f, _ = solve_linearized(ops, f0, tol=1e-10)
        vals.append(weighted_linf(f, p.alpha, p.beta))
    change = abs(vals[1] / vals[0] - 1)
    ok = np.all(np.isfinite(vals)) and change < LINF_TOL
    assert criterion(10, ok, f"weighted sup {vals[0]:.4g} on (16,6)x(4,4), {vals[1]:.4g} on (32,12)x(6,8): "
                             f"change {change:.1%} (< {LINF_TOL:.0%})")


def _ladder(tmp_path, name):
    cfg = cli.RunConfig.load(os.path.join(CONFIGS, name)).to_dict()
    out = tmp_path / name.replace(".yaml", "")
    cfg["out"] = str(out)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    assert cli.main(["regularity", "--config", str(path)]) == 0
    with open(out / "regularity.csv") as fh:
        rows = [r for r in csv.DictReader(line for line in fh if not line.startswith("#"))]
    return {float(r["s"]): float(r["estimate"]) for r in rows if r["field"] == "f"}, out / "regularity.csv"


def test_c11_regularity_ladder(criterion, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("ladder")
    hard, p0 = _ladder(tmp, "regularity_gamma0.yaml")
    soft, p1 = _ladder(tmp, "regularity_gamma-2.5.yaml")
    band = [v for s, v in hard.items() if 0.1 <= s <= 0.9]
    spread = max(band) / min(band)
    ratio = soft[0.9] / soft[0.5]
    finite = all(np.isfinite(list(hard.values()))) and all(np.isfinite(list(soft.values())))
    ok = finite and spread < LADDER_SPREAD and ratio > SOFT_RATIO
    hs = " ".join(f"{s:g}:{v:.3g}" for s, v in sorted(hard.items()))
    assert criterion(11, ok, f"(exploratory) gamma=0 spread {spread:.2f}x (< {LADDER_SPREAD:g}x), "
                             f"gamma=-2.5 ratio s=0.9/s=0.5 {ratio:.2f} (> {SOFT_RATIO:g}); "
                             f"gamma=0 ladder {hs}; CSVs {p0}, {p1}")


def test_c12_reproducibility(criterion, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("repro")
    cfg = {"params": {"B0": 0.1, "gamma": -1.0}, "grid": {"n_r": 16, "n_ang": 6, "n_rx": 4, "n_mux": 4},
           "boundary": {"family": "smooth_random", "eps": 0.1}, "verify": {"quick": True}}
    path = tmp / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    same = []
    for verb, extra in (("solve", []), ("regularity", []), ("verify", ["--suite", "geometry,transport"])):
        dirs = [tmp / f"{verb}_{k}" for k in "ab"]
        for d in dirs:
            assert cli.main([verb, "--config", str(path), "--out", str(d), "--seed", "7", *extra]) == 0
        names = sorted(n for n in os.listdir(dirs[0]) if n != "timings.csv")
        match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
        same.append((verb, len(match), len(names)))
    ok = all(m == n for _, m, n in same)
    detail = ", ".join(f"{v} {m}/{n}" for v, m, n in same)
    assert criterion(12, ok, f"byte-identical files across two runs: {detail}")
