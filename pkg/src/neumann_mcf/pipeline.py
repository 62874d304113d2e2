"""Experiment orchestration: initial datum, evolution, checks, level sets, report.

Every stage writes into its own directory below the output root.  The
manifest is written once, at the end, by :func:`run_experiment`.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import diagnostics as D
from . import varifold as V
from .config import ChecksConfig, ExperimentConfig, InitialConfig
from .evolve import SolverConfig, Trajectory, load_trajectory, run
from .grid import (GridSpec, ScalarField, TestVectorField, constant_field, gradient, localized_radial_field,
                   normal_extension_field, read_snapshot, sine_x_field, wall_bubble_field, wave_field, write_snapshot)
from .initial_data import (AppendixConfig, CutoffProfile, DiskSet, InitialDatumResult, build_g, naive_datum,
                           boundary_zero_residual, verify_initial_datum, wall_normal_derivative)

logger = logging.getLogger(__name__)

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2
CHECK_FILES = ("initial_checks.csv", "identities.csv", "varifold_checks.csv")


# ---------------------------------------------------------------- libraries

def field_library(names: Sequence[str], grid: GridSpec, center=(0.5, 0.0)) -> list[TestVectorField]:
    lx, ly = grid.period_x, grid.height_y
    make = {
        "sin_x1": lambda: sine_x_field(lx, 1),
        "sin_x2": lambda: sine_x_field(lx, 2),
        "wall_bubble": lambda: wall_bubble_field(ly),
        "normal_extension": lambda: normal_extension_field(ly),
        "constant_y": lambda: constant_field(0.0, 1.0),
        "wave": lambda: wave_field(lx, ly),
        "radial_local": lambda: localized_radial_field(center[0], center[1] + 0.25 * ly, 0.08 * lx, lx),
    }
    unknown = [n for n in names if n not in make]
    if unknown:
        raise ValueError(f"unknown test field(s) {unknown}; choose from {sorted(make)}")
    return [make[n]() for n in names]


def test_function(name: str, grid: GridSpec) -> D.TestFunction:
    make = {
        "one": D.phi_one,
        "cos_decay": lambda: D.phi_cos_decay(grid.period_x),
        "one_plus_y": lambda: D.phi_one_plus_y(),
        "one_plus_y_decay": lambda: D.phi_one_plus_y(t_decay=True),
        "cos_squared": lambda: D.phi_cos_squared(grid.period_x),
    }
    if name not in make:
        raise ValueError(f"unknown test function {name!r}; choose from {sorted(make)}")
    return make[name]()


# ---------------------------------------------------------------- file helpers

def read_identities(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def eps_dirname(eps: float) -> str:
    return f"eps_{eps:g}"


def _report_file(path: Path, reports: Sequence[D.IdentityReport]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return D.write_identities(path, reports)


def all_passed(reports: Sequence[D.IdentityReport]) -> bool:
    return all(r.passed for r in reports if r.gating)


# ---------------------------------------------------------------- stage: initial datum

def initial_grid(cfg: ExperimentConfig) -> GridSpec:
    d = cfg.domain
    return GridSpec(d.period_x, d.height_y, d.nx, d.ny)


def cutoffs_for(ini: InitialConfig, grid: GridSpec) -> CutoffProfile:
    """Resolve unset cutoff radii: ``R = min(0.48 radius, 0.24 L_y)``, ``r = 0.375 R``, ``delta = 8 r / 9``."""
    R = ini.cutoff_outer if ini.cutoff_outer is not None else min(0.48 * ini.radius, 0.24 * grid.height_y)
    r = ini.cutoff_inner if ini.cutoff_inner is not None else 0.375 * R
    delta = ini.delta if ini.delta is not None else 8.0 / 9.0 * r
    return CutoffProfile(R, r, delta)


@dataclass
class InitialStage:
    result: InitialDatumResult
    reports: list[D.IdentityReport]
    text: list[str]
    curvature_l1: dict[float, float]


def initial_checks(res: InitialDatumResult, checks: ChecksConfig) -> tuple[list[D.IdentityReport], list[str], dict]:
    grid = res.field.grid
    z = boundary_zero_residual(res)
    wn = wall_normal_derivative(res)
    rep = verify_initial_datum(res.field, checks.initial_eps, checks.initial_slope_rel_tol)
    naive = verify_initial_datum(naive_datum(res.disk, grid, res.delta), checks.initial_eps,
                                 checks.initial_slope_rel_tol)
    rng = np.random.default_rng(checks.seed)
    n = 256
    th = rng.uniform(0.0, 2 * np.pi, n)
    rr = res.disk.radius + rng.uniform(-res.cut.r, res.cut.r, n)
    c = np.asarray(res.disk.center, float)
    p = c + rr[:, None] * np.stack([np.cos(th), np.sin(th)], 1)
    p[:, 0] = np.mod(p[:, 0], grid.period_x)
    p = p[(p[:, 1] >= 0) & (p[:, 1] <= 0.5 * grid.height_y)]
    refl = float(np.max(np.abs(res.datum.value(p) - res.datum.value(p * [1.0, -1.0])))) if len(p) else 0.0
    reports = [
        D.IdentityReport("initial_zero_set", z, 0.0, checks.initial_zero_tol, details={"max_abs_g": z}),
        D.IdentityReport("initial_neumann_discrete", wn["discrete"], 0.0, checks.initial_neumann_tol),
        D.IdentityReport("initial_neumann_analytic", wn["analytic"], 0.0, checks.initial_neumann_tol),
        D.IdentityReport("initial_reflection", refl, 0.0, checks.initial_neumann_tol,
                         details={"samples": int(len(p)), "seed": checks.seed}),
        D.IdentityReport("initial_l1_slope", rep.slope, 0.0, rep.tolerance,
                         details={"eps": rep.eps, "I": rep.l1}),
    ]
    text = [
        f"disk center=({c[0]!r}, {c[1]!r}) radius={res.disk.radius!r}",
        f"cutoffs R={res.cut.R!r} r={res.cut.r!r} delta={res.delta!r} halvings={res.halvings}",
        f"grad_g0 on V: c0={res.c0:.10g} c1={res.c1:.10g}",
        f"flow s0={res.cfg.s0!r} ode_step={res.cfg.ode_step!r} root_tol={res.cfg.root_tol!r}",
        f"max |g| on zero set = {z:.3e}",
        f"max |dg/dy| on walls: discrete = {wn['discrete']:.3e} analytic = {wn['analytic']:.3e}",
        f"reflection symmetry max |g(x,y) - g(x,-y)| = {refl:.3e} over {len(p)} points (seed {checks.seed})",
        "curvature L1 sweep:",
        *["  " + s for s in rep.lines()],
        "naive datum (clamped distance, no wall correction; reported without verdict):",
        *["  " + s for s in naive.lines()],
        "checks:",
        *["  " + r.line() for r in reports],
    ]
    return reports, text, dict(zip(rep.eps, rep.l1))


def make_initial(ini: InitialConfig, grid: GridSpec, checks: ChecksConfig, out: str | Path | None = None) -> InitialStage:
    disk = DiskSet((ini.center_x, ini.center_y), ini.radius)
    cut = cutoffs_for(ini, grid)
    acfg = AppendixConfig(ode_step=ini.ode_step, root_tol=ini.root_tol, s0=ini.s0)
    res = build_g(disk, grid, cut, acfg, max_halvings=ini.max_halvings)
    reports, text, I = initial_checks(res, checks)
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_snapshot(out, res.field, 0.0, 0.0)
        Path(str(out) + ".report.txt").write_text("\n".join(text) + "\n")
        _report_file(out.parent / "initial_checks.csv", reports)
    return InitialStage(res, reports, text, I)


# ---------------------------------------------------------------- stage: diagnostics

def max_principle_check(traj: Trajectory, tol: float) -> D.IdentityReport:
    g = traj.snapshots[0].values
    lo, hi = float(g.min()), float(g.max())
    over = max(max(float(u.values.max()) - hi, lo - float(u.values.min())) for u in traj.snapshots)
    return D.IdentityReport("max_principle", max(over, 0.0), 0.0, tol,
                            t_range=(float(traj.times[0]), float(traj.times[-1])), details={"overshoot": over})


def neumann_residual_check(traj: Trajectory) -> D.IdentityReport:
    res = max(float(np.max(np.abs(gradient(u).y[:, [0, -1]]))) for u in traj.snapshots)
    return D.IdentityReport("neumann_residual", res, 0.0, 0.0, t_range=(float(traj.times[0]), float(traj.times[-1])))


def diagnose(traj: Trajectory, checks: ChecksConfig, center=(0.5, 0.0),
             sweep: Sequence[Trajectory] = ()) -> list[D.IdentityReport]:
    """All field-level checks of one trajectory; ``sweep`` adds runs at other eps for the uniform bound."""
    grid = traj.grid
    reps = [
        max_principle_check(traj, checks.max_principle_tol),
        neumann_residual_check(traj),
        D.energy_monotone_check(traj),
        D.gradient_bound_check(traj, checks.gradient_rel_tol, checks.gradient_step_jitter),
        D.l1_monotonicity_check(traj, rel_jitter=checks.l1_rel_jitter),
        D.dissipation_identity_check(traj, checks.dissipation_rel_tol),
        D.l2_bound_check(traj),
    ]
    runs = {traj.epsilon: traj}
    for tr in sweep:
        runs[tr.epsilon] = tr
    I = {e: D.integrate_abs_curvature(tr.snapshots[0], e) for e, tr in runs.items()}
    reps.append(D.l1_uniform_bound_check(runs, I, checks.l1_uniform_factor))
    lib = field_library(checks.fields, grid, center)
    for k in sorted({0, len(traj) - 1}):
        u, t = traj.snapshots[k], float(traj.times[k])
        for X in lib:
            r = D.first_variation_check(u, traj.epsilon, X, checks.first_variation_rel_tol)
            r.name = f"{r.name} @t={t:g}"
            r.t_range = (t, t)
            reps.append(r)
    if len(traj) >= 2:
        for name in checks.test_functions:
            reps.append(D.brakke_field_check(traj, test_function(name, grid), rel_tol=checks.brakke_field_rel_tol))
    return reps


# ---------------------------------------------------------------- stage: level sets

def family_indices(n: int, stride: int) -> list[int]:
    idx = list(range(0, n, stride))
    if idx[-1] != n - 1:
        idx.append(n - 1)
    return idx


@dataclass
class LevelStage:
    family: V.CurveFamily
    indices: list[int]
    reports: list[V.VarifoldReport]
    checks: list[D.IdentityReport]


def _level_reports(name: str, levels: Sequence[V.LevelReport], bound: float) -> list[D.IdentityReport]:
    out = []
    for lr in levels:
        tag = f"{name}[gamma={lr.gamma:g}{', excluded' if lr.excluded else ''}]"
        out.append(D.IdentityReport(tag, lr.worst, bound, 0.0, one_sided=True, gating=not lr.excluded,
                                    details=lr.details))
    return out


def levelsets(traj: Trajectory, checks: ChecksConfig, gammas: Sequence[float] | None = None, center=(0.5, 0.0),
              out_dir: str | Path | None = None) -> LevelStage:
    grid = traj.grid
    gam = V.uniform_gammas(checks.gamma_count, checks.gamma_limit) if gammas is None else np.asarray(gammas, float)
    idx = family_indices(len(traj), checks.varifold_stride)
    fam = V.build_family(traj, gam, idx)
    lib = field_library(checks.fields, grid, center)
    vreps = V.varifold_reports(fam, traj, lib, idx, checks.outlier_jump)
    excl = set(fam.outliers(checks.outlier_jump))
    out: list[D.IdentityReport] = []
    out += _level_reports("mass_bound", V.mass_monotonicity_check(fam, checks.mass_rel_tol, checks.outlier_jump),
                          1.0 + checks.mass_rel_tol)
    if len(gam) >= 2 and np.allclose(np.diff(gam), gam[1] - gam[0]):
        for name in ("one", checks.semidecreasing_function):
            phi = test_function(name, grid)
            r = V.coarea_check(traj.snapshots[0], phi, gam, 0.0, checks.coarea_rel_tol)
            out.append(r)
    angles = [(r.max_angle, r.gamma, r.t) for r in vreps if r.conormal_angles and not r.excluded]
    worst = max(angles) if angles else (0.0, float("nan"), float("nan"))
    out.append(D.IdentityReport("conormal_angle", worst[0], 0.0, checks.conormal_max_deg,
                                t_range=(float(fam.times[0]), float(fam.times[-1])),
                                details={"gamma": worst[1], "t": worst[2]}))
    ratios = [r.total_variation / r.total_variation_bound for r in vreps if r.total_variation_bound > 0]
    out.append(D.IdentityReport("total_variation_bound", max(ratios) if ratios else 0.0, checks.tv_factor, 0.0,
                                one_sided=True))
    if len(idx) >= 2:
        for name in checks.test_functions:
            phi = test_function(name, grid)
            for g in range(len(gam)):
                r = V.brakke_curve_check(fam, traj, phi, g, rel_tol=checks.brakke_curve_rel_tol, snapshot_indices=idx)
                if g in excl:
                    r.gating = False
                    r.name = r.name[:-1] + ", excluded]"
                out.append(r)
        sd = test_function(checks.semidecreasing_function, grid)
        for lr in V.semidecreasing_check(fam, sd, checks.semidecreasing_rel_jitter, checks.outlier_jump):
            tag = f"semidecreasing[{sd.name}, gamma={lr.gamma:g}{', excluded' if lr.excluded else ''}]"
            # lhs is the largest increase of mass(phi) - C_phi t between family times
            out.append(D.IdentityReport(tag, max(lr.worst, 0.0), 0.0, lr.details["jitter"], gating=not lr.excluded,
                                        details=lr.details))
    if out_dir is not None:
        d = Path(out_dir)
        emit_plot_data(fam, "curves", d)
        V.write_varifold_report(d / "varifold_report.csv", vreps)
        _report_file(d / "varifold_checks.csv", out)
        emit_plot_data(fam, "mass_table", d / "mass_table.csv")
    return LevelStage(fam, idx, vreps, out)


# ---------------------------------------------------------------- plot data

def emit_plot_data(source, kind: str, out: str | Path) -> list[Path]:
    """Plain CSV exports.

    ``kind`` is ``"timeseries"`` (a trajectory: ``t, energy, l1_H, sup_grad``
    per record), ``"curves"`` (a family: one polyline file per level and
    time in the directory ``out``) or ``"mass_table"`` (a family: mass per
    level against time).
    """
    out = Path(out)
    if kind == "timeseries":
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "energy", "l1_H", "sup_grad"])
            for r in source.records:
                w.writerow([repr(float(r.t)), repr(float(r.energy)), repr(float(r.l1_H)), repr(float(r.sup_grad))])
        return [out]
    if kind == "curves":
        out.mkdir(parents=True, exist_ok=True)
        files = []
        for k, t in enumerate(source.times):
            for g, gv in enumerate(source.gammas):
                p = out / f"curves_g{g:02d}_t{k:03d}.csv"
                files.append(V.write_curves(p, source.get(g, k), float(gv), float(t)))
        return files
    if kind == "mass_table":
        out.parent.mkdir(parents=True, exist_ok=True)
        M = source.mass_table()
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"gamma={g!r}" for g in source.gammas])
            for k, t in enumerate(source.times):
                w.writerow([repr(float(t))] + [repr(float(m)) for m in M[k]])
        return [out]
    raise ValueError(f"unknown plot data kind {kind!r}")


# ---------------------------------------------------------------- report

def collect_reports(root: str | Path) -> list[tuple[Path, dict]]:
    root = Path(root)
    rows = []
    for name in CHECK_FILES:
        for p in sorted(root.rglob(name)):
            rows += [(p, r) for r in read_identities(p)]
    return rows


def _rel(p: Path, root: Path) -> str:
    try:
        return str(p.relative_to(root))
    except ValueError:
        return str(p)


def summarize(root: str | Path) -> tuple[int, list[str]]:
    """Aggregate every check file below ``root`` into summary lines and an exit code."""
    root = Path(root)
    rows = collect_reports(root)
    if not rows:
        return EXIT_ERROR, [f"no check files found below {root}"]
    lines = []
    n_fail = 0
    n_gate = 0
    for p, r in rows:
        gating = r.get("gating", "1") != "0"
        ok = r["pass"] == "1"
        n_gate += gating
        n_fail += gating and not ok
        verdict = ("PASS" if ok else "FAIL") if gating else ("pass" if ok else "fail") + " (not gating)"
        lines.append(f"{verdict:<20} {_rel(p.parent, root) or '.':<14} {r['name']}: lhs={float(r['lhs']):.6g} "
                     f"rhs={float(r['rhs']):.6g} tol={float(r['tol']):.3g}")
    lines.append(f"{n_gate - n_fail}/{n_gate} gating checks passed")
    lines.append("OVERALL " + ("PASS" if n_fail == 0 else "FAIL"))
    return (EXIT_PASS if n_fail == 0 else EXIT_FAIL), lines


def write_summary(root: str | Path) -> tuple[int, Path]:
    code, lines = summarize(root)
    p = Path(root) / "summary.txt"
    p.write_text("\n".join(lines) + "\n")
    return code, p


# ---------------------------------------------------------------- orchestration

@dataclass
class StageRecord:
    name: str
    seconds: float
    ok: bool
    epsilon: float | None = None
    error: str | None = None
    passed: bool | None = None


@dataclass
class RunManifest:
    """What was run, what it produced and the aggregate verdict."""

    config_hash: str
    version: str
    seed: int
    output_dir: str
    stages: list[StageRecord] = field(default_factory=list)
    files: list[str] = field(default_factory=list)
    passed: bool = False
    exit_code: int = EXIT_ERROR

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> RunManifest:
        d = json.loads(text)
        d["stages"] = [StageRecord(**s) for s in d["stages"]]
        return cls(**d)


class _Stages:
    def __init__(self, man: RunManifest):
        self.man = man
        self.failed: Exception | None = None

    def run(self, name: str, fn, eps: float | None = None):
        if self.failed is not None:
            return None
        t0 = time.perf_counter()
        try:
            out = fn()
        except Exception as exc:  # recorded in the manifest; later stages are skipped
            logger.exception("stage %s failed", name)
            self.failed = exc
            self.man.stages.append(StageRecord(name, time.perf_counter() - t0, False, eps,
                                               f"{type(exc).__name__}: {exc}"))
            return None
        passed = None
        if isinstance(out, tuple) and len(out) == 2 and isinstance(out[1], bool):
            out, passed = out
        self.man.stages.append(StageRecord(name, time.perf_counter() - t0, True, eps, None, passed))
        return out


def _error_code(exc: Exception) -> int:
    from .config import ConfigError

    return EXIT_ERROR if isinstance(exc, (OSError, ConfigError)) else EXIT_FAIL


def run_experiment(cfg: ExperimentConfig, progress: bool = False) -> RunManifest:
    """Run every stage for every eps of the sweep and write the manifest."""
    root = cfg.output_dir()
    root.mkdir(parents=True, exist_ok=True)
    man = RunManifest(cfg.digest(), __version__, cfg.checks.seed, str(root))
    (root / "config.ini").write_text(cfg.to_ini())
    st = _Stages(man)
    grid = initial_grid(cfg)
    checks = cfg.checks
    center = (cfg.initial.center_x, cfg.initial.center_y)
    suites = set(checks.suites)

    def stage_initial():
        s = make_initial(cfg.initial, grid, checks, root / "initial" / "g.snap")
        return s, all_passed(s.reports) if "initial" in suites else True

    init = st.run("make-initial", stage_initial)
    trajs: dict[float, Trajectory] = {}
    if init is not None and cfg.solver.t_end > 0:
        for eps in cfg.sweep():
            d = root / eps_dirname(eps)
            scfg = SolverConfig(eps, cfg.solver.t_end, cfg.solver.snapshot_every, cfg.solver.cfl,
                                cfg.solver.stats_every, cfg.solver.scheme)

            def stage_evolve(d=d, scfg=scfg):
                tr = run(init.result.field, scfg, d)
                emit_plot_data(tr, "timeseries", d / "plot" / "timeseries.csv")
                return tr

            tr = st.run("evolve", stage_evolve, eps)
            if tr is None:
                break
            trajs[eps] = tr
        for eps, tr in trajs.items():
            if st.failed is not None:
                break
            d = root / eps_dirname(eps)
            others = [t for e, t in trajs.items() if e != eps]

            def stage_diag(tr=tr, d=d, others=others):
                reps = []
                if "evolve" in suites or "diagnostics" in suites:
                    reps = diagnose(tr, checks, center, others)
                    if "evolve" in suites and init.result.disk.boundary_anchored(grid):
                        reps.append(V.radius_law_check(tr, center, cfg.initial.radius, checks.radius_rel_tol))
                _report_file(d / "identities.csv", reps)
                near = D.near_critical_report(tr.snapshots[-1], tr.epsilon)
                (d / "near_critical.json").write_text(json.dumps(near, indent=1, sort_keys=True) + "\n")
                return reps, all_passed(reps)

            st.run("diagnose", stage_diag, eps)

            def stage_levels(tr=tr, d=d):
                if "varifold" not in suites:
                    return None, True
                ls = levelsets(tr, checks, None, center, d / "curves")
                return ls, all_passed(ls.checks)

            st.run("levelsets", stage_levels, eps)

    def stage_report():
        code, _ = write_summary(root)
        return code, code == EXIT_PASS

    code = st.run("report", stage_report)
    if st.failed is not None:
        man.exit_code = _error_code(st.failed)
        man.passed = False
    else:
        man.exit_code = int(code)
        man.passed = code == EXIT_PASS
    files = sorted(_rel(p, root) for p in root.rglob("*") if p.is_file() and p.name != "manifest.json")
    man.files = files + ["manifest.json"]
    (root / "manifest.json").write_text(man.to_json())
    return man


def load_snapshot_field(path: str | Path) -> ScalarField:
    u, _ = read_snapshot(path)
    return u


__all__ = [
    "EXIT_PASS", "EXIT_FAIL", "EXIT_ERROR", "RunManifest", "StageRecord", "run_experiment", "make_initial",
    "diagnose", "levelsets", "emit_plot_data", "summarize", "write_summary", "field_library", "test_function",
    "load_trajectory", "read_identities",
]
