"""Explicit time stepping of the regularized level-set equation.

The equation is ``u_t = sigma_ij(grad u) u_ij`` with
``sigma(p) = I - p p^T / (|p|^2 + eps^2)`` on the periodic strip, with the
homogeneous Neumann condition on both walls.

Two spatial discretizations are available.

``"flux"`` (default)
    Compact conservative form, monotone for ``cfl <= 0.5``.  It preserves the
    discrete maximum principle.
``"sigma"``
    Central differences of the non-divergence form, as returned by
    :func:`rhs`.  Its mixed-derivative stencil has negative weights, so it can
    overshoot next to saturated regions.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .backend import kernels
from .diagnostics import DiagnosticsRecord, record_from_array
from .grid import GridSpec, ScalarField, read_snapshot, write_snapshot

logger = logging.getLogger(__name__)

SCHEMES = ("flux", "sigma")
STATS_COLUMNS = ("t", "energy", "l1_curvature", "sup_grad", "dissipation_cum", "l2_weighted")


class NonFiniteError(RuntimeError):
    """Raised when a step produces NaN or inf values."""

    def __init__(self, message: str, last_finite: "SolverState"):
        super().__init__(message)
        self.last_finite = last_finite


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping parameters.

    ``snapshot_every`` is a time interval.  Each interval is covered by an
    integer number of equal steps no larger than ``cfl * min(h)^2 / 2``.
    ``stats_every`` is in steps.
    """

    epsilon: float
    t_end: float
    snapshot_every: float
    cfl: float = 0.2
    stats_every: int = 1
    scheme: str = "flux"

    def __post_init__(self):
        errs = []
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            errs.append("epsilon > 0")
        if not (0 < self.cfl <= 0.5):
            errs.append("0 < cfl <= 0.5")
        if not (self.t_end >= 0 and math.isfinite(self.t_end)):
            errs.append("t_end >= 0")
        if not (self.snapshot_every > 0):
            errs.append("snapshot_every > 0")
        if int(self.stats_every) != self.stats_every or self.stats_every < 1:
            errs.append("stats_every >= 1 (integer)")
        if self.scheme not in SCHEMES:
            errs.append(f"scheme in {SCHEMES}")
        if errs:
            raise ValueError("invalid solver config: " + "; ".join(errs))

    def max_dt(self, grid: GridSpec) -> float:
        return stability_bound(grid, self.cfl)

    def snapshot_times(self) -> np.ndarray:
        """Snapshot times, ``0`` and ``t_end`` included."""
        if self.t_end == 0:
            return np.zeros(1)
        k = int(math.floor(self.t_end / self.snapshot_every + 1e-9))
        ts = [i * self.snapshot_every for i in range(k + 1)]
        if self.t_end - ts[-1] > 1e-12 * max(1.0, self.t_end):
            ts.append(self.t_end)
        else:
            ts[-1] = self.t_end
        return np.asarray(ts, dtype=float)


def stability_bound(grid: GridSpec, cfl: float = 0.5) -> float:
    h = min(grid.hx, grid.hy)
    return cfl * h * h / 2.0


@dataclass(frozen=True)
class SolverState:
    u: ScalarField
    t: float = 0.0
    steps: int = 0


def rhs(u: ScalarField, eps: float) -> ScalarField:
    """Central non-divergence form ``sum_ij sigma_ij(grad u) d_ij u``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = u.grid
    return ScalarField(g, kernels.rhs_sigma(u.values, g.hx, g.hy, eps))


def rhs_flux(u: ScalarField, eps: float) -> ScalarField:
    """Compact conservative form of the same operator."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = u.grid
    return ScalarField(g, kernels.rhs_flux(u.values, g.hx, g.hy, eps))


def rhs_divergence_form(u: ScalarField, eps: float) -> ScalarField:
    """``sqrt(|grad u|^2 + eps^2) div(grad u / sqrt(...))`` with central stencils."""
    from .diagnostics import h_eps, speed

    return ScalarField(u.grid, speed(u, eps) * h_eps(u, eps).values)


def step(state: SolverState, dt: float, eps: float, scheme: str = "flux", cfl_max: float = 0.5) -> SolverState:
    """One forward Euler step.

    Raises ``ValueError`` if ``dt`` exceeds the stability bound and
    :class:`NonFiniteError` if the result is not finite.
    """
    g = state.u.grid
    if dt <= 0 or dt > stability_bound(g, cfl_max) * (1 + 1e-12):
        raise ValueError(f"dt={dt!r} outside (0, {stability_bound(g, cfl_max)!r}] (stability bound at cfl={cfl_max})")
    new = kernels.advance(state.u.values, g.hx, g.hy, eps, dt, 1, scheme)
    if not np.all(np.isfinite(new)):
        raise NonFiniteError(f"non-finite values after step at t={state.t + dt!r}", state)
    return SolverState(ScalarField(g, new), state.t + dt, state.steps + 1)


@dataclass
class Trajectory:
    """Snapshots plus the per-step diagnostics series of one run."""

    grid: GridSpec
    epsilon: float
    times: np.ndarray
    snapshots: list[ScalarField]
    records: list[DiagnosticsRecord]
    dt: list[float] = field(default_factory=list)
    scheme: str = "flux"
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.snapshots):
            raise ValueError("times and snapshots differ in length")

    def __len__(self) -> int:
        return len(self.snapshots)

    def __iter__(self) -> Iterator[tuple[float, ScalarField]]:
        return iter(zip(self.times, self.snapshots))

    def snapshot_records(self) -> list[DiagnosticsRecord]:
        """Records at the snapshot times (recomputed if absent)."""
        by_t = {r.t: r for r in self.records}
        out = []
        for t, u in self:
            r = by_t.get(float(t))
            out.append(r if r is not None else DiagnosticsRecord.of(u, self.epsilon, float(t)))
        return out

    def series(self, name: str, source: str = "records") -> np.ndarray:
        recs = self.records if source == "records" else self.snapshot_records()
        return np.array([getattr(r, name) for r in recs], dtype=float)

    def reversed(self) -> Trajectory:
        """Time-reversed copy (snapshot order flipped, times kept)."""
        snaps = self.snapshots[::-1]
        recs = [DiagnosticsRecord.of(u, self.epsilon, float(t)) for t, u in zip(self.times, snaps)]
        return Trajectory(self.grid, self.epsilon, self.times.copy(), snaps, _recumulate(recs), list(self.dt), self.scheme,
                          dict(self.config))

    def with_snapshot(self, k: int, u: ScalarField) -> Trajectory:
        """Copy with snapshot ``k`` replaced; records at that time are recomputed."""
        snaps = list(self.snapshots)
        snaps[k] = u
        tk = float(self.times[k])
        recs = [DiagnosticsRecord.of(u, self.epsilon, tk) if r.t == tk else r for r in self.records]
        return Trajectory(self.grid, self.epsilon, self.times.copy(), snaps, _recumulate(recs), list(self.dt),
                          self.scheme, dict(self.config))

    def save(self, out_dir: str | Path) -> list[Path]:
        return save_trajectory(self, out_dir)


def _recumulate(recs: list[DiagnosticsRecord]) -> list[DiagnosticsRecord]:
    out = []
    acc = 0.0
    for k, r in enumerate(recs):
        if k:
            p = recs[k - 1]
            acc += 0.5 * (r.t - p.t) * (r.l2_H_weighted + p.l2_H_weighted)
        out.append(r.replace(dissipation_cum=acc))
    return out


def run(g: ScalarField, cfg: SolverConfig, out_dir: str | Path | None = None,
        progress: Callable[[float], None] | None = None) -> Trajectory:
    """Evolve ``g`` to ``cfg.t_end``.

    Diagnostics are recorded every ``cfg.stats_every`` steps and at every
    snapshot time.  When ``out_dir`` is given the trajectory is written there,
    and on a non-finite step the last finite state is saved before raising.
    """
    grid = g.grid
    eps = cfg.epsilon
    hmax = cfg.max_dt(grid)
    times = cfg.snapshot_times()
    u = np.array(g.values, dtype=np.float64, order="C")
    rec0 = record_from_array(u, grid, eps, 0.0)
    records = [rec0]
    snaps = [ScalarField(grid, u)]
    dts: list[float] = []
    nsteps = 0
    t = 0.0
    for k in range(1, len(times)):
        span = times[k] - times[k - 1]
        m = max(1, int(math.ceil(span / hmax - 1e-9)))
        dt = span / m
        dts.append(dt)
        done = 0
        while done < m:
            chunk = min(cfg.stats_every - nsteps % cfg.stats_every, m - done)
            new = kernels.advance(u, grid.hx, grid.hy, eps, dt, chunk, cfg.scheme)
            if not np.all(np.isfinite(new)):
                last = SolverState(ScalarField(grid, u), t, nsteps)
                if out_dir is not None:
                    write_snapshot(Path(out_dir) / "last_finite.snap", last.u, eps, t, steps=nsteps)
                raise NonFiniteError(f"non-finite values between t={t!r} and t={t + chunk * dt!r}", last)
            u = new
            done += chunk
            nsteps += chunk
            t = times[k - 1] + done * dt if done < m else float(times[k])
            if done == m or nsteps % cfg.stats_every == 0:
                records.append(record_from_array(u, grid, eps, t))
        snaps.append(ScalarField(grid, u))
        if progress is not None:
            progress(t)
    traj = Trajectory(grid, eps, times, snaps, _recumulate(records), dts, cfg.scheme, asdict(cfg))
    if out_dir is not None:
        save_trajectory(traj, out_dir)
    return traj


# ---------------------------------------------------------------- persistence

def snapshot_name(k: int) -> str:
    return f"snap_{k:05d}.snap"


def write_stats(path: str | Path, records: list[DiagnosticsRecord]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_COLUMNS)
        for r in records:
            w.writerow([repr(float(v)) for v in (r.t, r.energy, r.l1_H, r.sup_grad, r.dissipation_cum,
                                                 r.l2_H_weighted)])
    return path


def read_stats(path: str | Path) -> list[DiagnosticsRecord]:
    out = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        missing = set(STATS_COLUMNS[:5]) - set(rd.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in rd:
            out.append(DiagnosticsRecord(
                t=float(row["t"]), energy=float(row["energy"]), l1_H=float(row["l1_curvature"]),
                l2_H_weighted=float(row.get("l2_weighted") or "nan"), sup_grad=float(row["sup_grad"]),
                dissipation_cum=float(row["dissipation_cum"])))
    return out


def save_trajectory(traj: Trajectory, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for k, (t, u) in enumerate(traj):
        files.append(write_snapshot(out / snapshot_name(k), u, traj.epsilon, float(t), index=k))
    files.append(write_stats(out / "stats.csv", traj.records))
    meta = {"epsilon": traj.epsilon, "scheme": traj.scheme, "dt": traj.dt,
            "times": [float(t) for t in traj.times], "config": traj.config,
            "snapshots": [snapshot_name(k) for k in range(len(traj))]}
    p = out / "trajectory.json"
    p.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    files.append(p)
    return files


def load_trajectory(traj_dir: str | Path) -> Trajectory:
    """Read a directory written by :func:`save_trajectory`.

    Without ``trajectory.json`` all ``snap_*.snap`` files are read in name
    order.  Stats are recomputed from snapshots if ``stats.csv`` is absent.
    """
    d = Path(traj_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"trajectory directory {d} not found")
    meta_p = d / "trajectory.json"
    if meta_p.exists():
        meta = json.loads(meta_p.read_text())
        names = meta["snapshots"]
    else:
        meta = {}
        names = sorted(p.name for p in d.glob("snap_*.snap"))
    if not names:
        raise FileNotFoundError(f"no snapshots in {d}")
    snaps, times, eps = [], [], None
    for nm in names:
        u, hdr = read_snapshot(d / nm)
        snaps.append(u)
        times.append(hdr["time"])
        eps = hdr["epsilon"] if eps is None else eps
    grid = snaps[0].grid
    stats_p = d / "stats.csv"
    fresh = {float(t): DiagnosticsRecord.of(u, eps, float(t)) for t, u in zip(times, snaps)}
    if stats_p.exists():
        # snapshot rows are recomputed so that stats cannot mask an edited snapshot
        records = [fresh.get(r.t, r) for r in read_stats(stats_p)]
        have = {r.t for r in records}
        records += [r for t, r in fresh.items() if t not in have]
        records.sort(key=lambda r: r.t)
    else:
        records = list(fresh.values())
    records = _recumulate(records)
    return Trajectory(grid, float(eps), np.array(times), snaps, records, list(meta.get("dt", [])),
                      meta.get("scheme", "flux"), meta.get("config", {}))
