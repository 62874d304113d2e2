"""Regularized normal and curvature, and the identity checks built on them.

All integrals use the field quadrature (rectangle rule in ``x``, trapezoid in
``y``).  Time integrals over a trajectory use the trapezoid rule on the
chosen time samples.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .backend import kernels
from .grid import (GridSpec, ScalarField, TestVectorField, VectorField2, boundary_integrate, divergence,
                   gradient, integrate)

if TYPE_CHECKING:
    from .evolve import Trajectory


def speed(u: ScalarField, eps: float) -> np.ndarray:
    """``sqrt(|grad u|^2 + eps^2)`` at the nodes."""
    g = gradient(u)
    return np.sqrt(g.x * g.x + g.y * g.y + eps * eps)


def nu_eps(u: ScalarField, eps: float) -> VectorField2:
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = gradient(u)
    s = np.sqrt(g.x * g.x + g.y * g.y + eps * eps)
    return VectorField2(u.grid, g.x / s, g.y / s)


def h_eps(u: ScalarField, eps: float) -> ScalarField:
    """Discrete ``div(nu_eps)``; the wall-normal component is odd about the walls."""
    return divergence(nu_eps(u, eps), "odd")


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    energy: float
    l1_H: float
    l2_H_weighted: float
    sup_grad: float
    dissipation_cum: float = 0.0

    def __post_init__(self):
        for name in ("energy", "l1_H", "sup_grad"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")

    @classmethod
    def of(cls, u: ScalarField, eps: float, t: float = 0.0) -> DiagnosticsRecord:
        return record_from_array(u.values, u.grid, eps, t)

    def replace(self, **kw) -> DiagnosticsRecord:
        return dataclasses.replace(self, **kw)


def record_from_array(values: np.ndarray, grid: GridSpec, eps: float, t: float) -> DiagnosticsRecord:
    e, l1, l2, gmax = kernels.diagnostics(values, grid.hx, grid.hy, eps)
    return DiagnosticsRecord(float(t), e, l1, l2, gmax)


@dataclass
class IdentityReport:
    """Outcome of one check.

    Two-sided: ``passed`` iff ``|lhs - rhs| <= tolerance``.  One-sided:
    ``passed`` iff ``rhs - lhs >= -tolerance``.  Reports with ``gating=False``
    are informational and do not enter aggregate verdicts.
    """

    name: str
    lhs: float
    rhs: float
    tolerance: float
    one_sided: bool = False
    t_range: tuple[float, float] = (0.0, 0.0)
    details: dict = field(default_factory=dict)
    gating: bool = True

    @property
    def abs_residual(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def signed_residual(self) -> float:
        return self.rhs - self.lhs

    @property
    def rel_residual(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs))
        return self.abs_residual / scale if scale > 0 else 0.0

    @property
    def passed(self) -> bool:
        if not (math.isfinite(self.lhs) and math.isfinite(self.rhs)):
            return False
        if self.one_sided:
            return self.rhs - self.lhs >= -self.tolerance
        return self.abs_residual <= self.tolerance

    def line(self) -> str:
        kind = "one-sided" if self.one_sided else "two-sided"
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name}: lhs={self.lhs:.6g} rhs={self.rhs:.6g} "
                f"residual={self.signed_residual:.3g} tol={self.tolerance:.3g} ({kind})")

    def row(self) -> dict:
        return {"name": self.name, "t0": self.t_range[0], "t1": self.t_range[1], "lhs": self.lhs,
                "rhs": self.rhs, "residual": self.signed_residual, "rel_residual": self.rel_residual,
                "tol": self.tolerance, "one_sided": int(self.one_sided), "pass": int(self.passed),
                "gating": int(self.gating)}


IDENTITY_COLUMNS = ("name", "t0", "t1", "lhs", "rhs", "residual", "rel_residual", "tol", "one_sided", "pass",
                    "gating")


def write_identities(path: str | Path, reports: Sequence[IdentityReport]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, IDENTITY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            row = r.row()
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def _trapz(y: np.ndarray, t: np.ndarray) -> float:
    if len(t) < 2:
        return 0.0
    return float(np.sum(0.5 * np.diff(t) * (y[1:] + y[:-1])))


def _records(traj: Trajectory, source: str):
    if source == "records":
        return traj.records
    if source == "snapshots":
        return traj.snapshot_records()
    raise ValueError("source must be 'records' or 'snapshots'")


# ------------------------------------------------------------ time-series checks

def l1_monotonicity_check(traj: Trajectory, jitter: float | None = None, rel_jitter: float = 1e-3,
                          source: str = "snapshots") -> IdentityReport:
    """``int |H^eps|`` must not increase between consecutive samples by more than ``jitter``.

    ``jitter`` defaults to ``rel_jitter * l1_H(0)``.  ``lhs`` is the largest
    increase found.
    """
    recs = _records(traj, source)
    l1 = np.array([r.l1_H for r in recs])
    ts = np.array([r.t for r in recs])
    tol = rel_jitter * l1[0] if jitter is None else jitter
    inc = np.diff(l1)
    worst = float(inc.max()) if inc.size else 0.0
    bad = [(float(ts[k]), float(ts[k + 1]), float(inc[k])) for k in np.flatnonzero(inc > tol)]
    return IdentityReport("l1_monotonicity", max(worst, 0.0), 0.0, tol, one_sided=True,
                          t_range=(float(ts[0]), float(ts[-1])),
                          details={"violations": bad, "max_increase": worst, "initial": float(l1[0])})


def l1_uniform_bound_check(trajs: dict[float, Trajectory], initial_values: dict[float, float],
                           factor: float = 1.1) -> IdentityReport:
    """``max_eps sup_t l1_H / I(eps) <= factor``."""
    ratios = {}
    for eps, traj in trajs.items():
        l1 = traj.series("l1_H")
        ratios[eps] = float(l1.max() / initial_values[eps])
    worst = max(ratios.values()) if ratios else 0.0
    return IdentityReport("l1_uniform_bound", worst, factor, 0.0, one_sided=True, details={"ratios": ratios})


def dissipation_identity_check(traj: Trajectory, rel_tol: float = 0.01, source: str = "records") -> IdentityReport:
    """``energy(T) + int_0^T int H^2 sqrt(...) = energy(0)``."""
    recs = _records(traj, source)
    ts = np.array([r.t for r in recs])
    l2 = np.array([r.l2_H_weighted for r in recs])
    diss = _trapz(l2, ts)
    lhs = recs[-1].energy + diss
    rhs = recs[0].energy
    return IdentityReport("dissipation_identity", lhs, rhs, rel_tol * abs(rhs), t_range=(ts[0], ts[-1]),
                          details={"dissipation": diss, "energy_T": recs[-1].energy, "source": source})


def l2_bound_check(traj: Trajectory, source: str = "records") -> IdentityReport:
    recs = _records(traj, source)
    ts = np.array([r.t for r in recs])
    diss = _trapz(np.array([r.l2_H_weighted for r in recs]), ts)
    return IdentityReport("l2_bound", diss, recs[0].energy, 0.0, one_sided=True, t_range=(ts[0], ts[-1]))


def energy_monotone_check(traj: Trajectory, jitter: float = 0.0, source: str = "records") -> IdentityReport:
    recs = _records(traj, source)
    e = np.array([r.energy for r in recs])
    inc = float(np.max(np.diff(e))) if len(e) > 1 else 0.0
    return IdentityReport("energy_monotone", max(inc, 0.0), 0.0, jitter, one_sided=True,
                          t_range=(recs[0].t, recs[-1].t), details={"max_increase": inc})


def gradient_bound_check(traj: Trajectory, rel_tol: float = 1e-6, jitter: float = 1e-8,
                         source: str = "records") -> IdentityReport:
    """``sup_grad(t) <= sup_grad(0) (1 + rel_tol)``; per-sample increases are reported."""
    recs = _records(traj, source)
    gr = np.array([r.sup_grad for r in recs])
    inc = np.diff(gr)
    return IdentityReport("gradient_bound", float(gr.max()), float(gr[0] * (1 + rel_tol)), 0.0, one_sided=True,
                          t_range=(recs[0].t, recs[-1].t),
                          details={"max_step_increase": float(inc.max()) if inc.size else 0.0,
                                   "step_jitter": jitter,
                                   "monotone": bool(inc.size == 0 or inc.max() <= jitter)})


# ------------------------------------------------------------ field identities

def first_variation_check(u: ScalarField, eps: float, X: TestVectorField, rel_tol: float = 0.02) -> IdentityReport:
    """``int tr((I - nu nu) grad X) s = int H (nu . X) s + int_walls (X . n) s``."""
    grid = u.grid
    xx, yy = grid.mesh()
    nu = nu_eps(u, eps)
    s = speed(u, eps)
    H = h_eps(u, eps).values
    X1, X2 = X.value(xx, yy)
    J = X.jacobian(xx, yy)
    tr = J[..., 0, 0] + J[..., 1, 1] - (nu.x * nu.x * J[..., 0, 0] + nu.x * nu.y * (J[..., 0, 1] + J[..., 1, 0])
                                        + nu.y * nu.y * J[..., 1, 1])
    lhs = integrate(tr * s, grid)
    interior = integrate(H * (nu.x * X1 + nu.y * X2) * s, grid)
    # outward normals: (0, -1) at y = 0, (0, +1) at y = L_y
    wall = boundary_integrate(X2 * s, "top", grid) - boundary_integrate(X2 * s, "bottom", grid)
    rhs = interior + wall
    energy = integrate(s, grid)
    xsup = X.sup_norm(grid)
    # rhs is a sum of two terms that can cancel; its scale is the sum of their sizes
    tol = rel_tol * max(abs(lhs), abs(interior) + abs(wall), energy * xsup * 1e-3)
    return IdentityReport(f"first_variation[{X.name}]", lhs, rhs, tol,
                          details={"interior": interior, "boundary": wall, "field": X.name})


class TestFunction:
    """Analytic ``phi(x, y, t)`` with time derivative and spatial gradient.

    ``sup_grad2_over_phi`` is the analytic ``sup_{phi>0} |grad phi|^2 / phi``
    for time-independent functions, or ``None`` if not provided.
    """

    __test__ = False

    def __init__(self, name: str, value: Callable, dt: Callable, grad: Callable,
                 sup_grad2_over_phi: float | None = None, neumann: bool = True):
        self.name = name
        self._value = value
        self._dt = dt
        self._grad = grad
        self.sup_grad2_over_phi = sup_grad2_over_phi
        self.neumann = neumann

    def value(self, x, y, t=0.0):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return np.broadcast_to(np.asarray(self._value(x, y, t), float), x.shape)

    def dt(self, x, y, t=0.0):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return np.broadcast_to(np.asarray(self._dt(x, y, t), float), x.shape)

    def grad(self, x, y, t=0.0):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        gx, gy = self._grad(x, y, t)
        return np.broadcast_to(np.asarray(gx, float), x.shape), np.broadcast_to(np.asarray(gy, float), x.shape)

    def check_nonnegative(self, x, y, t=0.0):
        v = self.value(x, y, t)
        if np.any(v < 0):
            raise ValueError(f"test function {self.name} is negative (min {v.min():.3g}) at t={t!r}")

    def __repr__(self):
        return f"TestFunction({self.name!r})"


def phi_one() -> TestFunction:
    return TestFunction("one", lambda x, y, t: np.ones_like(x), lambda x, y, t: np.zeros_like(x),
                        lambda x, y, t: (np.zeros_like(x), np.zeros_like(x)), sup_grad2_over_phi=0.0)


def phi_cos_decay(lx: float) -> TestFunction:
    """``1 + cos(2 pi x / L_x) exp(-t)``."""
    k = 2 * np.pi / lx
    return TestFunction(
        "cos_decay",
        lambda x, y, t: 1 + np.cos(k * x) * np.exp(-t),
        lambda x, y, t: -np.cos(k * x) * np.exp(-t),
        lambda x, y, t: (-k * np.sin(k * x) * np.exp(-t), np.zeros_like(x)))


def phi_one_plus_y(t_decay: bool = False) -> TestFunction:
    """``1 + y`` (or ``1 + y exp(-t)``); its normal derivative on the walls is nonzero."""
    if t_decay:
        return TestFunction("one_plus_y_decay", lambda x, y, t: 1 + y * np.exp(-t),
                            lambda x, y, t: -y * np.exp(-t),
                            lambda x, y, t: (np.zeros_like(x), np.exp(-t) * np.ones_like(x)), neumann=False)
    return TestFunction("one_plus_y", lambda x, y, t: 1 + y, lambda x, y, t: np.zeros_like(x),
                        lambda x, y, t: (np.zeros_like(x), np.ones_like(x)), sup_grad2_over_phi=1.0,
                        neumann=False)


def phi_cos_squared(lx: float) -> TestFunction:
    """``(1 + cos(2 pi x / L_x))^2``; ``|grad phi|^2 / phi = 4 k^2 sin^2 <= 4 k^2``."""
    k = 2 * np.pi / lx
    return TestFunction(
        "cos_squared",
        lambda x, y, t: (1 + np.cos(k * x)) ** 2,
        lambda x, y, t: np.zeros_like(x),
        lambda x, y, t: (-2 * k * (1 + np.cos(k * x)) * np.sin(k * x), np.zeros_like(x)),
        sup_grad2_over_phi=4 * k * k)


def default_test_functions(grid: GridSpec) -> list[TestFunction]:
    return [phi_one(), phi_cos_decay(grid.period_x), phi_one_plus_y(), phi_one_plus_y(t_decay=True)]


def integrate_abs_curvature(u: ScalarField, eps: float) -> float:
    """``I(eps) = int |H^eps|``."""
    return integrate(np.abs(h_eps(u, eps).values), u.grid)


def brakke_integrand(u: ScalarField, eps: float, phi: TestFunction, t: float) -> tuple[float, float]:
    """``(int phi s, int (phi_t - H nu . grad phi - phi H^2) s)`` at one time."""
    grid = u.grid
    xx, yy = grid.mesh()
    phi.check_nonnegative(xx, yy, t)
    s = speed(u, eps)
    nu = nu_eps(u, eps)
    H = h_eps(u, eps).values
    p = phi.value(xx, yy, t)
    gx, gy = phi.grad(xx, yy, t)
    integrand = (phi.dt(xx, yy, t) - H * (nu.x * gx + nu.y * gy) - p * H * H) * s
    return integrate(p * s, grid), integrate(integrand, grid)


def brakke_field_check(traj: Trajectory, phi: TestFunction, t1: float | None = None, t2: float | None = None,
                       rel_tol: float = 0.02) -> IdentityReport:
    """Fixed-eps Brakke relation checked as an equality over snapshots in ``[t1, t2]``.

    ``lhs = [int phi s]_{t1}^{t2}``, ``rhs`` = trapezoid in time of the
    integrand of :func:`brakke_integrand`.
    """
    ts = traj.times
    t1 = float(ts[0]) if t1 is None else t1
    t2 = float(ts[-1]) if t2 is None else t2
    sel = [k for k, t in enumerate(ts) if t1 - 1e-14 <= t <= t2 + 1e-14]
    if len(sel) < 2:
        raise ValueError("need at least two snapshots in [t1, t2]")
    mass, dens = [], []
    for k in sel:
        m, d = brakke_integrand(traj.snapshots[k], traj.epsilon, phi, float(ts[k]))
        mass.append(m)
        dens.append(d)
    tt = ts[sel]
    lhs = mass[-1] - mass[0]
    rhs = _trapz(np.array(dens), tt)
    tol = rel_tol * max(abs(lhs), abs(rhs))
    return IdentityReport(f"brakke_field[{phi.name}]", lhs, rhs, tol, t_range=(float(tt[0]), float(tt[-1])),
                          details={"phi": phi.name})


def near_critical_report(u: ScalarField, eps: float, factor: float = 1.0) -> dict:
    """Nodes with ``|grad u| <= factor * eps`` and the size of ``u_t`` there (no verdict)."""
    from .evolve import rhs_flux

    g = gradient(u).norm()
    mask = g <= factor * eps
    ut = np.abs(rhs_flux(u, eps).values)
    w = u.grid.quadrature_weights()
    area = float(np.sum(w))
    return {
        "fraction_nodes": float(mask.mean()),
        "area_fraction": float(np.sum(w * mask) / area),
        "max_abs_ut": float(ut[mask].max()) if mask.any() else 0.0,
        "mean_abs_ut": float(ut[mask].mean()) if mask.any() else 0.0,
        "max_abs_ut_elsewhere": float(ut[~mask].max()) if (~mask).any() else 0.0,
    }
