"""Command line: ``solve``, ``verify`` and ``regularity`` driven by a YAML run config.

Every output carries a header (schema version, command, config hash,
grid resolutions, seed).  Reports hold no timestamps or timings, so two
runs with the same config and seed write byte-identical files; check
timings go to a separate ``timings.csv``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import norms, verify
from .discretization import build_spatial_grid, build_velocity_grid, PhaseField
from .errors import DivergenceDetected, NotConverged, ParameterError
from .geometry import ConvexDomain
from .operators import BoundaryData, GammaRule, build_operators
from .params import PhysParams, thresholds, validate
from .solver import SolveReport, solve_linearized, solve_nonlinear, solution_norms

SCHEMA_VERSION = 1
LADDER = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_DIVERGED = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    """The run config is malformed."""


@dataclass
class GridConfig:
    n_r: int = 32
    n_ang: int = 12
    v_max: float | None = None
    n_rx: int = 6
    n_mux: int = 8
    n_phix: int | None = None
    transport_samples: int = 16
    kernel_sigma: float = 1.0
    gamma_rule: dict = field(default_factory=dict)


@dataclass
class SolverConfig:
    mode: str = "linear"           # linear | nonlinear
    method: str = "richardson"     # richardson | gmres
    tol: float = 1e-10
    max_iter: int = 2000
    max_outer: int = 30
    inner_tol: float | None = None
    s: float | None = None         # X^s stopping exponent; default 0.9 min(s1, s_gamma)
    n_pairs: int = 2000


@dataclass
class VerifyConfig:
    suites: list = field(default_factory=lambda: ["all"])
    gammas: list = field(default_factory=lambda: list(verify.GAMMA_GRID))
    quick: bool = False


@dataclass
class RegularityConfig:
    s_values: list | None = None   # default: LADDER plus s_gamma +- 0.05
    n_pairs: int = 4000


@dataclass
class RunConfig:
    params: PhysParams = field(default_factory=lambda: PhysParams(B0=0.1))
    domain: dict = field(default_factory=lambda: {"type": "ball", "radius": 1.0})
    grid: GridConfig = field(default_factory=GridConfig)
    boundary: dict = field(default_factory=lambda: {"family": "zero"})
    solver: SolverConfig = field(default_factory=SolverConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    regularity: RegularityConfig = field(default_factory=RegularityConfig)
    seed: int = 42
    out: str = "out"
    threads: int = 1
    cache: bool | str = True

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict | None) -> "RunConfig":
        raw = dict(raw or {})
        _check_keys(raw, {f.name for f in fields(cls)}, "top level")
        kw = {}
        if "params" in raw:
            p = dict(raw.pop("params") or {})
            _check_keys(p, {"B0", "gamma", "alpha", "beta", "delta"}, "params")
            kw["params"] = PhysParams(**{k: (None if v is None else float(v)) for k, v in p.items()})
        for name, typ in (("grid", GridConfig), ("solver", SolverConfig),
                          ("verify", VerifyConfig), ("regularity", RegularityConfig)):
            if name in raw:
                sec = dict(raw.pop(name) or {})
                _check_keys(sec, {f.name for f in fields(typ)}, name)
                kw[name] = typ(**sec)
        kw.update(raw)
        cfg = cls(**kw)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def check(self) -> None:
        """Validate every referenced spec; raises ParameterError or ConfigError."""
        validate(self.params)
        ConvexDomain.from_spec(self.domain)
        spec = self.boundary_spec()
        BoundaryData.from_spec(spec)
        if self.solver.mode not in ("linear", "nonlinear"):
            raise ConfigError(f"solver.mode must be linear or nonlinear, got {self.solver.mode!r}")
        if self.solver.method not in ("richardson", "gmres"):
            raise ConfigError(f"solver.method must be richardson or gmres, got {self.solver.method!r}")
        unknown = set(self.suite_names()) - set(verify.SUITES)
        if unknown:
            raise ConfigError(f"unknown suites {sorted(unknown)}; choose from {verify.SUITES}")
        for g in self.verify.gammas:
            thresholds(float(g))
        for s in self.ladder():
            if not 0 < s < 1:
                raise ConfigError(f"ladder exponent {s} outside (0, 1)")
        if int(self.threads) < 1:
            raise ConfigError("threads must be positive")
        GammaRule(**self.grid.gamma_rule)

    # -- derived values -----------------------------------------------------

    def boundary_spec(self) -> dict:
        spec = dict(self.boundary)
        if spec.get("family") == "smooth_random":
            spec.setdefault("seed", self.seed)
        return spec

    def surrogate_s(self) -> float:
        """Exponent of the X^s stopping norm: 0.9 min(s1, s_gamma) unless set."""
        if self.solver.s is not None:
            return float(self.solver.s)
        s1 = float(self.boundary.get("s1", 1.0))
        return 0.9 * min(s1, thresholds(self.params.gamma).s_gamma)

    def suite_names(self) -> list[str]:
        names = [self.verify.suites] if isinstance(self.verify.suites, str) else list(self.verify.suites)
        out = []
        for n in names:
            for part in str(n).split(","):
                part = part.strip()
                out.extend(verify.SUITES if part == "all" else [part])
        return list(dict.fromkeys(out))

    def ladder(self) -> list[float]:
        if self.regularity.s_values is not None:
            return sorted({float(s) for s in self.regularity.s_values})
        sg = thresholds(self.params.gamma).s_gamma
        extra = [round(sg + d, 6) for d in (-0.05, 0.05) if 0 < sg + d < 1]
        return sorted(set(LADDER) | set(extra))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.params.as_dict()
        d["boundary"] = self.boundary_spec()
        return verify.plain_json(d)

    def science_dict(self) -> dict:
        """Everything that can change results (output location and threads excluded)."""
        d = self.to_dict()
        for k in ("out", "threads", "cache"):
            d.pop(k)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.science_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _check_keys(d: dict, allowed: set, where: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


# ---------------------------------------------------------------------------
# report writing

def header(cfg: RunConfig, command: str, grids: dict | None = None) -> dict:
    h = {"schema_version": SCHEMA_VERSION, "command": command,
         "config_sha256": cfg.config_hash(), "seed": cfg.seed,
         "params": cfg.params.as_dict()}
    if grids is not None:
        h["grids"] = grids
    return verify.plain_json(h)


def _header_lines(h: dict) -> str:
    return "".join(f"# {k}: {json.dumps(v, sort_keys=True)}\n" for k, v in h.items())


def write_csv(path: str, h: dict, columns: list[str], rows) -> None:
    buf = io.StringIO()
    buf.write(_header_lines(h))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def write_json(path: str, h: dict, body: dict) -> None:
    with open(path, "w") as fh:
        json.dump({"header": h, **verify.plain_json(body)}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


# ---------------------------------------------------------------------------
# commands

def _setup(cfg: RunConfig):
    params = cfg.params
    domain = ConvexDomain.from_spec(cfg.domain)
    g = cfg.grid
    vgrid = build_velocity_grid(params, g.n_r, g.n_ang, g.v_max)
    sgrid = build_spatial_grid(domain, g.n_rx, g.n_mux, g.n_phix)
    ops = build_operators(params, sgrid, vgrid, sigma=g.kernel_sigma, n_samples=g.transport_samples,
                          gamma_rule=GammaRule(**g.gamma_rule), cache=cfg.cache)
    grids = {"velocity": vgrid.describe(), "spatial": sgrid.describe(),
             "transport_samples": g.transport_samples}
    return ops, grids


def _solve(cfg: RunConfig, ops, f0):
    sc = cfg.solver
    if sc.mode == "linear":
        return solve_linearized(ops, f0, None, sc.tol, sc.max_iter, sc.method)
    return solve_nonlinear(ops, f0, sc.tol, sc.max_outer, sc.inner_tol, sc.max_iter, sc.method,
                           cfg.surrogate_s(), sc.n_pairs, cfg.seed)


def _run_solve(cfg: RunConfig, out: str, command: str):
    """Solve and write the dump and report; returns (ops, grids, f or None, exit code)."""
    ops, grids = _setup(cfg)
    h = header(cfg, command, grids)
    f0 = BoundaryData.from_spec(cfg.boundary_spec())
    status, code, f = "converged", EXIT_OK, None
    try:
        f, report = _solve(cfg, ops, f0)
    except NotConverged as e:
        status, code, report = "not_converged", EXIT_NOT_CONVERGED, e.report
    except DivergenceDetected as e:
        status, code, report = "diverged", EXIT_DIVERGED, e.report
    report = report if report is not None else SolveReport()
    write_json(os.path.join(out, "solve_report.json"), h,
               {"status": status, "report": report.to_dict()})
    if f is not None:
        f.dump(os.path.join(out, "solution"), h)
    return ops, h, f, code


def _ladder_rows(name, field_: PhaseField, ladder, cfg, alpha, beta):
    for s in ladder:
        est = norms.l2v_hsx_seminorm(field_, s, alpha, beta, cfg.regularity.n_pairs, cfg.seed)
        yield [name, s, float(est.value[0]), float(est.stderr[0])]


def cmd_solve(cfg: RunConfig) -> int:
    """Solve per config; writes solution.{bin,json}, solve_report.json and norms.csv."""
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    ops, h, f, code = _run_solve(cfg, out, "solve")
    if f is None:
        return code
    p = cfg.params
    sg = thresholds(p.gamma).s_gamma
    ladder = [round(sg * (1 - 2.0**-k), 6) for k in range(1, 6)]
    rows = [[k, "", v, ""] for k, v in sorted(solution_norms(ops, f).items())]
    rows += list(_ladder_rows("Hs_x_seminorm", f, ladder, cfg, p.alpha, p.gamma / 2))
    write_csv(os.path.join(out, "norms.csv"), h, ["quantity", "s", "value", "stderr"], rows)
    return code


def cmd_verify(cfg: RunConfig) -> int:
    """Run the selected suites; exit 0 iff every check passes."""
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    h = header(cfg, "verify", {"sample_sizes": "quick" if cfg.verify.quick else "full",
                               "suites": cfg.suite_names(), "gammas": list(cfg.verify.gammas)})
    domain = ConvexDomain.from_spec(cfg.domain)
    gammas = tuple(float(g) for g in cfg.verify.gammas)
    reports = []
    for name in cfg.suite_names():
        for r in verify.run_suite(name, cfg.params, gammas, cfg.seed, domain, cfg.verify.quick):
            reports.append((name, r))
    with open(os.path.join(out, "checks.jsonl"), "w") as fh:
        fh.write(json.dumps({"header": h}, sort_keys=True) + "\n")
        for name, r in reports:
            fh.write(json.dumps({"suite": name, **r.to_dict()}, sort_keys=True) + "\n")
    write_csv(os.path.join(out, "summary.csv"), h,
              ["suite", "check_id", "gamma", "passed", "fitted_constant", "n_samples"],
              [[n, r.check_id, r.gamma, r.passed, r.fitted_constant, r.n_samples] for n, r in reports])
    write_csv(os.path.join(out, "timings.csv"), h, ["suite", "check_id", "gamma", "seconds"],
              [[n, r.check_id, r.gamma, r.seconds] for n, r in reports])
    failed = [f"{r.check_id}@gamma={r.gamma:g}" for _, r in reports if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_regularity(cfg: RunConfig) -> int:
    """H^s_x seminorm ladder of J f0, S_Omega phi and f, written to regularity.csv.

    phi is the collision source of the solved problem, K f (plus Gamma(f, f)
    in nonlinear mode), so that f = J f0 + S_Omega phi.
    """
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    ops, h, f, code = _run_solve(cfg, out, "regularity")
    if f is None:
        return code
    p = cfg.params
    f0 = BoundaryData.from_spec(cfg.boundary_spec())
    phi = ops.apply_K(f)
    if cfg.solver.mode == "nonlinear":
        phi = phi + ops.gamma_bilinear(f, f)
    fields_ = [("J_f0", ops.apply_J(f0)), ("S_Omega_phi", ops.apply_S_Omega(phi)), ("f", f)]
    ladder = cfg.ladder()
    rows = []
    for name, fl in fields_:
        rows.extend(_ladder_rows(name, fl, ladder, cfg, p.alpha, p.gamma / 2))
    write_csv(os.path.join(out, "regularity.csv"), h, ["field", "s", "estimate", "stderr"], rows)
    return code


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "regularity": cmd_regularity}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="boltzmann-bvp", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="YAML run config (defaults apply when omitted)")
    ap.add_argument("--out", help="output directory (overrides config)")
    ap.add_argument("--seed", type=int, help="random seed (overrides config)")
    ap.add_argument("--suite", help="comma-separated verify suites (overrides config)")
    ap.add_argument("--threads", type=int, help="BLAS thread count (overrides config)")
    return ap


def load_config(args) -> RunConfig:
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    for key in ("out", "seed", "threads"):
        val = getattr(args, key)
        if val is not None:
            raw[key] = val
    if args.suite:
        raw.setdefault("verify", {})
        raw["verify"] = dict(raw["verify"] or {}, suites=args.suite.split(","))
    return RunConfig.from_dict(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (ParameterError, ConfigError, ValueError, TypeError, OSError) as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    with threadpool_limits(limits=int(cfg.threads)):
        return COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
