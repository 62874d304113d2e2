"""Level curves of a field as unit-density 1-varifolds.

Curves are extracted by marching squares on the periodic strip.  A crossing
point is identified by the grid edge it lies on, so chains stitch across the
periodic seam without special handling.  Crossings on the wall rows have a
single adjacent cell and terminate open chains.

Vertices are stored wrapped into ``[0, L_x)``; segment vectors use the
minimal periodic image, so a closed curve that winds around the strip still
has ``vertices[0] == vertices[-1]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .diagnostics import IdentityReport, TestFunction, h_eps, nu_eps
from .grid import GridSpec, ScalarField, TestVectorField

if TYPE_CHECKING:
    from .evolve import Trajectory

NODE_PERTURBATION = 1e-13
MIN_SEGMENT = 1e-12


@dataclass
class LevelCurve:
    """Polyline on the strip.

    ``endpoint_boundary`` holds the wall id (0 for ``y = 0``, 1 for
    ``y = L_y``) of the first and last vertex of an open curve, ``None`` for
    closed curves.
    """

    vertices: np.ndarray
    closed: bool
    period_x: float
    endpoint_boundary: tuple[int | None, int | None] = (None, None)
    gamma: float = 0.0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)

    @property
    def n_segments(self) -> int:
        return max(len(self.vertices) - 1, 0)

    def segment_vectors(self) -> np.ndarray:
        d = np.diff(self.vertices, axis=0)
        L = self.period_x
        d[:, 0] -= L * np.round(d[:, 0] / L)
        return d

    def lengths(self) -> np.ndarray:
        return np.hypot(*self.segment_vectors().T)

    def tangents(self) -> np.ndarray:
        d = self.segment_vectors()
        return d / np.hypot(*d.T)[:, None]

    def normals(self) -> np.ndarray:
        t = self.tangents()
        return np.stack([-t[:, 1], t[:, 0]], axis=1)

    def midpoints(self) -> np.ndarray:
        m = self.vertices[:-1] + 0.5 * self.segment_vectors()
        m[:, 0] = np.mod(m[:, 0], self.period_x)
        return m

    def unwrapped(self) -> np.ndarray:
        """Vertices as a continuous path (``x`` may leave ``[0, L_x)``)."""
        if len(self.vertices) == 0:
            return self.vertices.copy()
        return np.vstack([self.vertices[:1], self.vertices[0] + np.cumsum(self.segment_vectors(), axis=0)])

    def __repr__(self):
        kind = "closed" if self.closed else f"open{self.endpoint_boundary}"
        return f"LevelCurve(gamma={self.gamma:g}, {kind}, n={len(self.vertices)})"


@dataclass
class Extraction:
    curves: list[LevelCurve]
    perturbed_nodes: int = 0


def _crossings(v: np.ndarray, gamma: float):
    nx, ny = v.shape
    above = v > gamma
    # horizontal edge (i, j): nodes (i, j)-(i+1, j); vertical edge (i, j): (i, j)-(i, j+1)
    vr = np.roll(v, -1, axis=0)
    ar = np.roll(above, -1, axis=0)
    hcross = above != ar
    vcross = above[:, :-1] != above[:, 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        th = np.where(hcross, (gamma - v) / (vr - v), 0.0)
        tv = np.where(vcross, (gamma - v[:, :-1]) / (v[:, 1:] - v[:, :-1]), 0.0)
    return above, hcross, vcross, th, tv


def extract_level(u: ScalarField, gamma: float, return_info: bool = False):
    """Isocurves ``{u = gamma}``.

    Saddle cells are resolved by the cell-centre average.  Nodes exactly at
    ``gamma`` are raised by ``NODE_PERTURBATION``.  Returns a list of
    :class:`LevelCurve`, or an :class:`Extraction` with ``return_info``.
    """
    grid = u.grid
    v = np.array(u.values, dtype=float)
    exact = v == gamma
    npert = int(exact.sum())
    if npert:
        v[exact] += NODE_PERTURBATION
    nx, ny = v.shape
    if not (v.min() < gamma < v.max()):
        return Extraction([], npert) if return_info else []
    above, hcross, vcross, th, tv = _crossings(v, gamma)
    nH = nx * ny

    def hid(i, j):
        return j * nx + i

    def vid(i, j):
        return nH + j * nx + i

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny - 1), indexing="ij")
    ip = (ii + 1) % nx
    # local edges: 0 bottom, 1 right, 2 top, 3 left
    ids = np.stack([hid(ii, jj), vid(ip, jj), hid(ii, jj + 1), vid(ii, jj)], axis=-1)
    crossed = np.stack([hcross[ii, jj], vcross[ip, jj], hcross[ii, jj + 1], vcross[ii, jj]], axis=-1)
    ncr = crossed.sum(axis=-1)
    pairs = []
    two = ncr == 2
    if two.any():
        c2 = crossed[two]
        e2 = ids[two]
        order = np.argsort(~c2, axis=1, kind="stable")[:, :2]
        sel = np.take_along_axis(e2, order, axis=1)
        pairs.append(sel)
    four = ncr == 4
    if four.any():
        a = above[ii, jj][four]
        centre = 0.25 * (v[ii, jj] + v[ip, jj] + v[ip, jj + 1] + v[ii, jj + 1])[four] > gamma
        e4 = ids[four]
        # corner a = (i, j) above with centre above: a and c joined, so cut off b and d
        join_ac = a == centre
        p1 = np.where(join_ac[:, None], e4[:, [0, 1]], e4[:, [0, 3]])
        p2 = np.where(join_ac[:, None], e4[:, [2, 3]], e4[:, [1, 2]])
        pairs.extend([p1, p2])
    if not pairs:
        return Extraction([], npert) if return_info else []
    P = np.concatenate(pairs, axis=0)
    src = np.concatenate([P[:, 0], P[:, 1]])
    dst = np.concatenate([P[:, 1], P[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    nodes, start, deg = np.unique(src, return_index=True, return_counts=True)
    if deg.max() > 2:
        raise RuntimeError("level-set graph has a vertex of degree > 2")
    nbr = {}
    for n, s0, d in zip(nodes.tolist(), start.tolist(), deg.tolist()):
        nbr[n] = dst[s0:s0 + d].tolist()

    hx, hy, L = grid.hx, grid.hy, grid.period_x

    def point(e: int) -> tuple[float, float]:
        if e < nH:
            j, i = divmod(e, nx)
            return ((i + th[i, j]) * hx) % L, j * hy
        j, i = divmod(e - nH, nx)
        return i * hx, (j + tv[i, j]) * hy

    def wall(e: int) -> int | None:
        if e < nH:
            j = e // nx
            if j == 0:
                return 0
            if j == ny - 1:
                return 1
        return None

    visited: set[int] = set()
    curves: list[LevelCurve] = []

    def walk(s: int) -> list[int]:
        chain = [s]
        visited.add(s)
        prev, cur = -1, s
        while True:
            nxt = [m for m in nbr[cur] if m != prev and m not in visited]
            if not nxt:
                return chain
            prev, cur = cur, nxt[0]
            chain.append(cur)
            visited.add(cur)

    for n in nodes.tolist():
        if len(nbr[n]) == 1 and n not in visited:
            chain = walk(n)
            curves.append(_make_curve([point(e) for e in chain], False, L, (wall(chain[0]), wall(chain[-1])),
                                      gamma))
    for n in nodes.tolist():
        if n not in visited:
            chain = walk(n)
            pts = [point(e) for e in chain]
            pts.append(pts[0])
            curves.append(_make_curve(pts, True, L, (None, None), gamma))
    curves = [c for c in curves if len(c.vertices) >= 2]
    return Extraction(curves, npert) if return_info else curves


def _make_curve(pts, closed, L, ends, gamma) -> LevelCurve:
    p = np.asarray(pts, dtype=float)
    # merge vertices closer than MIN_SEGMENT
    keep = [0]
    for k in range(1, len(p)):
        d = p[k] - p[keep[-1]]
        d[0] -= L * round(d[0] / L)
        if math.hypot(d[0], d[1]) >= MIN_SEGMENT:
            keep.append(k)
        elif k == len(p) - 1:
            keep[-1] = k
    p = p[keep]
    if closed and len(p) > 1:
        p[-1] = p[0]
    return LevelCurve(p, closed, L, ends, gamma)


# ------------------------------------------------------------------ measures

def curve_mass(c: LevelCurve) -> float:
    return float(np.sum(c.lengths())) if c.n_segments else 0.0


def total_mass(curves: Sequence[LevelCurve]) -> float:
    return float(sum(curve_mass(c) for c in curves))


def curve_first_variation(c: LevelCurve, X: TestVectorField) -> float:
    """Midpoint rule for ``int tr((I - nu nu) grad X) dH^1 = int tau . (grad X) tau``."""
    if c.n_segments == 0:
        return 0.0
    m = c.midpoints()
    t = c.tangents()
    J = X.jacobian(m[:, 0], m[:, 1])
    tt = np.einsum("ki,kij,kj->k", t, J, t)
    return float(np.sum(tt * c.lengths()))


def curve_integral(c: LevelCurve, vertex_values: np.ndarray) -> float:
    """Trapezoid rule along the polyline for values given at the vertices."""
    if c.n_segments == 0:
        return 0.0
    f = np.asarray(vertex_values, float)
    return float(np.sum(0.5 * (f[1:] + f[:-1]) * c.lengths()))


def sample_bilinear(values: np.ndarray, grid: GridSpec, pts: np.ndarray) -> np.ndarray:
    """Bilinear interpolation, periodic in ``x`` and clamped to the walls in ``y``."""
    pts = np.asarray(pts, float).reshape(-1, 2)
    fx = np.mod(pts[:, 0], grid.period_x) / grid.hx
    fy = np.clip(pts[:, 1], 0.0, grid.height_y) / grid.hy
    i0 = np.floor(fx).astype(int)
    j0 = np.minimum(np.floor(fy).astype(int), grid.ny - 2)
    ax = fx - i0
    ay = fy - j0
    i0 %= grid.nx
    i1 = (i0 + 1) % grid.nx
    v = values
    return ((1 - ax) * (1 - ay) * v[i0, j0] + ax * (1 - ay) * v[i1, j0]
            + (1 - ax) * ay * v[i0, j0 + 1] + ax * ay * v[i1, j0 + 1])


@dataclass
class CurveFields:
    """``H^eps`` and ``nu^eps`` of one snapshot, for sampling on curves."""

    grid: GridSpec
    H: np.ndarray
    nux: np.ndarray
    nuy: np.ndarray

    @classmethod
    def of(cls, u: ScalarField, eps: float) -> CurveFields:
        nu = nu_eps(u, eps)
        return cls(u.grid, h_eps(u, eps).values, nu.x, nu.y)

    def at(self, pts: np.ndarray):
        return (sample_bilinear(self.H, self.grid, pts), sample_bilinear(self.nux, self.grid, pts),
                sample_bilinear(self.nuy, self.grid, pts))


def curvature_l1(c: LevelCurve, fields: CurveFields | None = None) -> float:
    """``int |H| dH^1``: sampled from the field, or the polyline turning angles without one."""
    if c.n_segments == 0:
        return 0.0
    if fields is not None:
        H, _, _ = fields.at(c.vertices)
        return curve_integral(c, np.abs(H))
    t = c.tangents()
    if c.closed:
        t2 = np.vstack([t, t[:1]])
    else:
        t2 = t
    cross = t2[:-1, 0] * t2[1:, 1] - t2[:-1, 1] * t2[1:, 0]
    dot = np.sum(t2[:-1] * t2[1:], axis=1)
    return float(np.sum(np.abs(np.arctan2(cross, dot))))


def geometric_curvature(c: LevelCurve) -> np.ndarray:
    """Three-point circumcircle curvature at interior vertices (cross-check only)."""
    p = c.unwrapped()
    if len(p) < 3:
        return np.zeros(0)
    a, b, d = p[:-2], p[1:-1], p[2:]
    ab = np.hypot(*(b - a).T)
    bd = np.hypot(*(d - b).T)
    ad = np.hypot(*(d - a).T)
    cr = (b - a)[:, 0] * (d - a)[:, 1] - (b - a)[:, 1] * (d - a)[:, 0]
    return 2 * cr / (ab * bd * ad)


# ------------------------------------------------------------------ boundary contact

def conormals(c: LevelCurve) -> list[tuple[int, np.ndarray]]:
    """Outward unit conormals at the two ends of an open curve, with their wall ids."""
    if c.closed:
        raise ValueError("closed curve has no endpoints")
    if None in c.endpoint_boundary:
        raise ValueError("endpoint not on the boundary")
    t = c.tangents()
    return [(c.endpoint_boundary[0], -t[0]), (c.endpoint_boundary[1], t[-1])]


def conormal_angle_check(c: LevelCurve) -> list[float]:
    """Angle in degrees between each outward conormal and the wall normal."""
    out = []
    for w, eta in conormals(c):
        n = np.array([0.0, -1.0]) if w == 0 else np.array([0.0, 1.0])
        out.append(float(np.degrees(np.arccos(np.clip(eta @ n, -1.0, 1.0)))))
    return out


def total_variation(c: LevelCurve) -> float:
    """Exact ``sup {delta V(X) : |X| <= 1}`` for the polyline varifold.

    With exact quadrature on each segment,
    ``delta V(X) = sum_v X(v) . (tau_in - tau_out) + X(end) . tau_last - X(start) . tau_first``.
    """
    if c.n_segments == 0:
        return 0.0
    t = c.tangents()
    if c.closed:
        jumps = np.vstack([t[-1:], t]) - np.vstack([t, t[:1]])
        return float(np.sum(np.hypot(*jumps[:-1].T)))
    inner = t[:-1] - t[1:]
    return float(np.sum(np.hypot(*inner.T)) + 2.0)


def extension_constant(grid: GridSpec) -> float:
    """``max(|X0|_inf, |grad X0|_inf)`` for ``X0 = (0, 2y/L_y - 1)``, the outward wall normal on both walls."""
    return max(1.0, 2.0 / grid.height_y)


@dataclass
class TotalVariationEstimate:
    tv: float
    tv_library: float
    bound: float
    factor: float = 1.05

    @property
    def passed(self) -> bool:
        return self.tv <= self.bound * self.factor


def total_variation_estimate(c: LevelCurve, grid: GridSpec, fields: CurveFields | None = None,
                             library: Sequence[TestVectorField] = (), factor: float = 1.05) -> TotalVariationEstimate:
    """Compare ``|delta V|`` with ``(C + 1)(mass + int |H|)``."""
    C = extension_constant(grid)
    bound = (C + 1.0) * (curve_mass(c) + curvature_l1(c, fields))
    lib = 0.0
    for X in library:
        s = X.sup_norm(grid)
        if s > 0:
            lib = max(lib, abs(curve_first_variation(c, X)) / s)
    return TotalVariationEstimate(total_variation(c), lib, bound, factor)


# ------------------------------------------------------------------ families

@dataclass
class CurveFamily:
    """Level curves for a grid of ``gamma`` values at a set of times."""

    grid: GridSpec
    epsilon: float
    gammas: np.ndarray
    times: np.ndarray
    curves: dict[tuple[int, int], list[LevelCurve]] = field(default_factory=dict)
    perturbed: dict[tuple[int, int], int] = field(default_factory=dict)

    def get(self, g: int, k: int) -> list[LevelCurve]:
        return self.curves.get((g, k), [])

    def mass_table(self) -> np.ndarray:
        """``M[k, g]`` = mass of level ``gammas[g]`` at ``times[k]``."""
        M = np.zeros((len(self.times), len(self.gammas)))
        for (g, k), cs in self.curves.items():
            M[k, g] = total_mass(cs)
        return M

    def outliers(self, jump: float = 0.5) -> list[int]:
        """Levels whose mass differs by more than ``jump`` (relative) from every adjacent level at some time."""
        M = self.mass_table()
        bad = set()
        n = len(self.gammas)
        for k in range(M.shape[0]):
            for g in range(n):
                nb = [h for h in (g - 1, g + 1) if 0 <= h < n]
                if not nb:
                    continue
                rel = [abs(M[k, g] - M[k, h]) / max(M[k, g], M[k, h], 1e-300) for h in nb]
                if min(rel) > jump:
                    bad.add(g)
        return sorted(bad)


def uniform_gammas(n: int = 17, limit: float = 0.9) -> np.ndarray:
    return np.linspace(-limit, limit, n)


def build_family(traj: Trajectory, gammas: Sequence[float], snapshot_indices: Sequence[int] | None = None,
                 margin: float = 0.0) -> CurveFamily:
    gam = np.asarray(gammas, dtype=float)
    if margin and np.any(np.abs(gam) > 1 - margin):
        raise ValueError(f"|gamma| must be <= {1 - margin}")
    idx = list(range(len(traj))) if snapshot_indices is None else list(snapshot_indices)
    fam = CurveFamily(traj.grid, traj.epsilon, gam, traj.times[idx])
    for k, s in enumerate(idx):
        u = traj.snapshots[s]
        for g, gv in enumerate(gam):
            ex = extract_level(u, float(gv), return_info=True)
            fam.curves[(g, k)] = ex.curves
            fam.perturbed[(g, k)] = ex.perturbed_nodes
    return fam


def coarea_lhs(u: ScalarField, phi: TestFunction, lo: float, hi: float, t: float = 0.0, sub: int = 8) -> float:
    """``int phi |grad u_b| 1{lo < u_b < hi}`` for the bilinear interpolant ``u_b``.

    Marching squares traces level sets of ``u_b``, so this is the side of the
    coarea formula consistent with the extracted curves.  Each cell is
    sampled at ``sub x sub`` midpoints.
    """
    g = u.grid
    v = u.values
    vr = np.roll(v, -1, axis=0)
    a = v[:, :-1]
    b = vr[:, :-1] - a
    c = v[:, 1:] - a
    d = vr[:, 1:] - v[:, 1:] - b
    total = 0.0
    r = (np.arange(sub) + 0.5) / sub
    x0 = g.x[:, None]
    y0 = g.y[None, :-1]
    for sx in r:
        for sy in r:
            val = a + b * sx + c * sy + d * sx * sy
            gx = (b + d * sy) / g.hx
            gy = (c + d * sx) / g.hy
            inside = (val > lo) & (val < hi)
            if not inside.any():
                continue
            ph = phi.value(np.broadcast_to(x0 + sx * g.hx, val.shape), np.broadcast_to(y0 + sy * g.hy, val.shape), t)
            total += float(np.sum(ph * np.hypot(gx, gy) * inside))
    return total * g.hx * g.hy / (sub * sub)


def coarea_check(u: ScalarField, phi: TestFunction, gamma_grid: Sequence[float], t: float = 0.0,
                 rel_tol: float = 0.02, sub: int = 8) -> IdentityReport:
    """``int phi |grad u|`` over ``{u in band}`` against ``sum dgamma int_{u = gamma} phi``.

    The band is the union of the midpoint cells of ``gamma_grid``.
    """
    gam = np.asarray(gamma_grid, float)
    if len(gam) < 2:
        raise ValueError("need at least two levels")
    dg = np.diff(gam)
    if not np.allclose(dg, dg[0], rtol=1e-9, atol=1e-14):
        raise ValueError("gamma grid must be uniform")
    d = float(dg[0])
    grid = u.grid
    xx, yy = grid.mesh()
    phi.check_nonnegative(xx, yy, t)
    lhs = coarea_lhs(u, phi, gam[0] - d / 2, gam[-1] + d / 2, t, sub)
    rhs = 0.0
    for gv in gam:
        for c in extract_level(u, float(gv)):
            rhs += d * curve_integral(c, phi.value(c.vertices[:, 0], c.vertices[:, 1], t))
    return IdentityReport(f"coarea[{phi.name}]", lhs, rhs, rel_tol * max(abs(lhs), abs(rhs)), t_range=(t, t),
                          details={"levels": len(gam), "dgamma": d})


# ------------------------------------------------------------------ time checks

@dataclass
class LevelReport:
    gamma: float
    passed: bool
    excluded: bool
    worst: float
    details: dict = field(default_factory=dict)


def _included(fam: CurveFamily, jump: float):
    out = set(fam.outliers(jump))
    return [(g, g in out) for g in range(len(fam.gammas))]


def mass_monotonicity_check(fam: CurveFamily, rel_tol: float = 0.02, outlier_jump: float = 0.5) -> list[LevelReport]:
    """``mass(t) <= mass(0) (1 + rel_tol)`` per level; pairwise monotonicity is reported only."""
    M = fam.mass_table()
    out = []
    for g, excl in _included(fam, outlier_jump):
        m0 = M[0, g]
        ratio = float(M[:, g].max() / m0) if m0 > 0 else (0.0 if M[:, g].max() == 0 else np.inf)
        pair = bool(np.all(np.diff(M[:, g]) <= rel_tol * max(m0, 1e-300)))
        out.append(LevelReport(float(fam.gammas[g]), bool(ratio <= 1 + rel_tol), excl, ratio,
                               {"pairwise_monotone": pair, "mass": M[:, g].tolist()}))
    return out


def _curve_brakke_terms(curves, fields: CurveFields, phi: TestFunction, t: float) -> tuple[float, float]:
    mass = 0.0
    dens = 0.0
    for c in curves:
        if c.n_segments == 0:
            continue
        x, y = c.vertices[:, 0], c.vertices[:, 1]
        phi.check_nonnegative(x, y, t)
        p = phi.value(x, y, t)
        gx, gy = phi.grad(x, y, t)
        H, nx_, ny_ = fields.at(c.vertices)
        mass += curve_integral(c, p)
        dens += curve_integral(c, phi.dt(x, y, t) - H * (nx_ * gx + ny_ * gy) - p * H * H)
    return mass, dens


def brakke_curve_check(fam: CurveFamily, traj: Trajectory, phi: TestFunction, gamma_index: int,
                       t1: float | None = None, t2: float | None = None, rel_tol: float = 0.03,
                       snapshot_indices: Sequence[int] | None = None) -> IdentityReport:
    """Brakke inequality ``rhs - lhs >= -tol`` on one level between ``t1`` and ``t2``.

    ``snapshot_indices`` maps family times to trajectory snapshots
    (default: the family was built from every snapshot).
    """
    idx = list(range(len(fam.times))) if snapshot_indices is None else list(snapshot_indices)
    ts = fam.times
    t1 = float(ts[0]) if t1 is None else t1
    t2 = float(ts[-1]) if t2 is None else t2
    sel = [k for k, t in enumerate(ts) if t1 - 1e-14 <= t <= t2 + 1e-14]
    if len(sel) < 2:
        raise ValueError("need two family times in [t1, t2]")
    masses, dens = [], []
    sup_dt = 0.0
    for k in sel:
        u = traj.snapshots[idx[k]]
        f = CurveFields.of(u, traj.epsilon)
        m, d = _curve_brakke_terms(fam.get(gamma_index, k), f, phi, float(ts[k]))
        masses.append(m)
        dens.append(d)
        xx, yy = traj.grid.mesh()
        sup_dt = max(sup_dt, float(np.max(np.abs(phi.dt(xx, yy, float(ts[k]))))))
    tt = ts[sel]
    lhs = masses[-1] - masses[0]
    rhs = float(np.sum(0.5 * np.diff(tt) * (np.array(dens[1:]) + np.array(dens[:-1]))))
    scale = abs(lhs) + abs(rhs) + masses[0] * sup_dt * (tt[-1] - tt[0]) * 0.01
    return IdentityReport(f"brakke_curve[{phi.name}, gamma={fam.gammas[gamma_index]:g}]", lhs, rhs,
                          rel_tol * scale, one_sided=True, t_range=(float(tt[0]), float(tt[-1])),
                          details={"mass": masses, "density": dens})


def semidecreasing_check(fam: CurveFamily, phi: TestFunction, rel_jitter: float = 0.02,
                         outlier_jump: float = 0.5) -> list[LevelReport]:
    """``t -> int phi dH^1 - C_phi t`` non-increasing, ``C_phi = mass(0) sup |grad phi|^2 / phi``."""
    if phi.sup_grad2_over_phi is None:
        raise ValueError(f"test function {phi.name} has no analytic sup |grad phi|^2 / phi")
    out = []
    for g, excl in _included(fam, outlier_jump):
        vals = []
        for k, t in enumerate(fam.times):
            f = 0.0
            for c in fam.get(g, k):
                x, y = c.vertices[:, 0], c.vertices[:, 1]
                phi.check_nonnegative(x, y, float(t))
                f += curve_integral(c, phi.value(x, y, float(t)))
            vals.append(f)
        vals = np.array(vals)
        m0 = total_mass(fam.get(g, 0))
        C = m0 * phi.sup_grad2_over_phi
        adj = vals - C * fam.times
        inc = np.diff(adj)
        worst = float(inc.max()) if inc.size else 0.0
        jitter = rel_jitter * abs(vals[0]) if vals.size else 0.0
        out.append(LevelReport(float(fam.gammas[g]), bool(worst <= jitter), excl, worst,
                               {"C_phi": C, "jitter": jitter,
                                "violations": [float(fam.times[k + 1]) for k in np.flatnonzero(inc > jitter)]}))
    return out


# ------------------------------------------------------------------ invariants

def _segments(c: LevelCurve) -> tuple[np.ndarray, np.ndarray]:
    return c.vertices[:-1], c.segment_vectors()


def self_intersections(curves: Sequence[LevelCurve], period_x: float) -> int:
    """Number of properly crossing pairs of non-adjacent segments."""
    A, D, owner, pos, closed_len = [], [], [], [], []
    for ci, c in enumerate(curves):
        a, d = _segments(c)
        A.append(a)
        D.append(d)
        owner.append(np.full(len(a), ci))
        pos.append(np.arange(len(a)))
        closed_len.append(len(a) if c.closed else -1)
    if not A:
        return 0
    A = np.vstack(A)
    D = np.vstack(D)
    owner = np.concatenate(owner)
    pos = np.concatenate(pos)
    count = 0
    lo = np.minimum(A, A + D)
    hi = np.maximum(A, A + D)
    for k in range(len(A)):
        # candidate partners in a horizontal window, with periodic shifts
        for shift in (-period_x, 0.0, period_x):
            a0 = A[k] + (shift, 0.0)
            l0 = np.minimum(a0, a0 + D[k])
            h0 = np.maximum(a0, a0 + D[k])
            cand = np.flatnonzero((lo[:, 0] <= h0[0]) & (hi[:, 0] >= l0[0]) & (lo[:, 1] <= h0[1])
                                  & (hi[:, 1] >= l0[1]))
            cand = cand[cand > k]
            if cand.size == 0:
                continue
            same = owner[cand] == owner[k]
            dp = np.abs(pos[cand] - pos[k])
            n = np.array([closed_len[o] for o in owner[cand]])
            adjacent = same & ((dp <= 1) | ((n > 0) & (dp == n - 1)))
            cand = cand[~adjacent]
            if cand.size == 0:
                continue
            b0, e = A[cand], D[cand]
            den = D[k, 0] * e[:, 1] - D[k, 1] * e[:, 0]
            r = b0 - a0
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (r[:, 0] * e[:, 1] - r[:, 1] * e[:, 0]) / den
                u_ = (r[:, 0] * D[k, 1] - r[:, 1] * D[k, 0]) / den
            hit = (np.abs(den) > 0) & (s > 0) & (s < 1) & (u_ > 0) & (u_ < 1)
            count += int(hit.sum())
    return count


def interior_first_variation_gap(c: LevelCurve, X: TestVectorField, fields: CurveFields) -> tuple[float, float]:
    """``(|delta V(X) - int H nu . X|, |X|_inf (mass + int |H|))`` on one curve."""
    dv = curve_first_variation(c, X)
    H, nx_, ny_ = fields.at(c.vertices)
    X1, X2 = X.value(c.vertices[:, 0], c.vertices[:, 1])
    hv = curve_integral(c, H * (nx_ * X1 + ny_ * X2))
    xs = X.sup_norm(fields.grid)
    return abs(dv - hv), xs * (curve_mass(c) + curve_integral(c, np.abs(H)))


def endpoint_contribution(c: LevelCurve, X: TestVectorField) -> float:
    """``sum_endpoints X . eta`` (outward conormal) for an open curve."""
    tot = 0.0
    for k, (w, eta) in zip((0, -1), conormals(c)):
        p = c.vertices[k]
        X1, X2 = X.value(p[0], p[1])
        tot += float(X1 * eta[0] + X2 * eta[1])
    return tot


# ------------------------------------------------------------------ circle law

def level_radius(curves: Sequence[LevelCurve], center, period_x: float) -> tuple[float, float]:
    """``(mean, max - min)`` of vertex distances to ``center`` (nearest periodic image).

    Distances are weighted by the vertex share of the curve length.
    """
    c = np.asarray(center, float)
    ds, ws = [], []
    for cv in curves:
        if cv.n_segments == 0:
            continue
        v = cv.vertices
        dx = (v[:, 0] - c[0] + 0.5 * period_x) % period_x - 0.5 * period_x
        d = np.hypot(dx, v[:, 1] - c[1])
        L = cv.lengths()
        w = np.zeros(len(v))
        w[:-1] += 0.5 * L
        w[1:] += 0.5 * L
        ds.append(d)
        ws.append(w)
    if not ds:
        return 0.0, 0.0
    d = np.concatenate(ds)
    w = np.concatenate(ws)
    return float(np.sum(d * w) / np.sum(w)), float(d.max() - d.min())


def circle_radius(rho: float, t) -> np.ndarray:
    """Radius of a circle shrinking by curvature, ``sqrt(rho^2 - 2t)`` (0 after extinction)."""
    return np.sqrt(np.maximum(rho * rho - 2.0 * np.asarray(t, float), 0.0))


def radius_law_check(traj: Trajectory, center, rho: float, rel_tol: float = 0.02, t_max: float | None = None,
                     gamma: float = 0.0) -> IdentityReport:
    """Largest relative error of the ``gamma`` level radius against :func:`circle_radius` for ``t <= t_max``."""
    t_max = rho * rho / 4 if t_max is None else t_max
    errs, rows = [], []
    for t, u in traj:
        if t > t_max + 1e-14:
            continue
        r, spread = level_radius(extract_level(u, gamma), center, traj.grid.period_x)
        ex = float(circle_radius(rho, t))
        errs.append(abs(r - ex) / ex)
        rows.append((float(t), r, ex, spread))
    worst = max(errs) if errs else 0.0
    return IdentityReport("radius_law", worst, 0.0, rel_tol, t_range=(rows[0][0], rows[-1][0]) if rows else (0, 0),
                          details={"samples": rows})


def semicircle_brakke_values(rho: float, t1: float, t2: float) -> tuple[float, float]:
    """Both sides of the level-0 Brakke relation for ``phi = 1`` on the shrinking semicircle.

    Mass ``pi r(t)`` and ``H = 1/r``: ``lhs = pi (r(t2) - r(t1))`` and
    ``rhs = -int pi r H^2 dt = -int pi / r dt``, equal to ``lhs``.
    """
    r1, r2 = circle_radius(rho, t1), circle_radius(rho, t2)
    lhs = float(np.pi * (r2 - r1))
    # int_{t1}^{t2} dt / sqrt(rho^2 - 2t) = r(t1) - r(t2)
    rhs = float(-np.pi * (r1 - r2))
    return lhs, rhs


# ------------------------------------------------------------------ reports and files

@dataclass
class VarifoldReport:
    gamma: float
    t: float
    n_curves: int
    mass: float
    first_variation: dict[str, float]
    conormal_angles: list[float]
    total_variation: float
    total_variation_bound: float
    perturbed_nodes: int = 0
    excluded: bool = False
    brakke_residual: float | None = None
    semidecreasing_violations: int = 0

    def __post_init__(self):
        if self.mass < 0:
            raise ValueError("mass must be >= 0")
        if any(not (0.0 <= a <= 180.0) for a in self.conormal_angles):
            raise ValueError("angles must lie in [0, 180]")

    @property
    def max_angle(self) -> float:
        return max(self.conormal_angles) if self.conormal_angles else 0.0


def varifold_reports(fam: CurveFamily, traj: Trajectory, library: Sequence[TestVectorField] = (),
                     snapshot_indices: Sequence[int] | None = None, outlier_jump: float = 0.5) -> list[VarifoldReport]:
    idx = list(range(len(fam.times))) if snapshot_indices is None else list(snapshot_indices)
    excl = set(fam.outliers(outlier_jump))
    out = []
    for k, t in enumerate(fam.times):
        fields = CurveFields.of(traj.snapshots[idx[k]], traj.epsilon)
        for g, gv in enumerate(fam.gammas):
            cs = fam.get(g, k)
            fv = {X.name: float(sum(curve_first_variation(c, X) for c in cs)) for X in library}
            angles = [a for c in cs if not c.closed for a in conormal_angle_check(c)]
            tv = [total_variation_estimate(c, fam.grid, fields) for c in cs]
            out.append(VarifoldReport(float(gv), float(t), len(cs), total_mass(cs), fv, angles,
                                      float(sum(e.tv for e in tv)), float(sum(e.bound for e in tv)),
                                      fam.perturbed.get((g, k), 0), g in excl))
    return out


VARIFOLD_COLUMNS = ("gamma", "t", "n_curves", "mass", "max_conormal_angle_deg", "total_variation",
                    "total_variation_bound", "perturbed_nodes", "excluded")


def write_varifold_report(path: str | Path, reports: Sequence[VarifoldReport]) -> Path:
    path = Path(path)
    fv_names = sorted({n for r in reports for n in r.first_variation})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(VARIFOLD_COLUMNS) + [f"first_variation[{n}]" for n in fv_names])
        for r in reports:
            w.writerow([repr(r.gamma), repr(r.t), r.n_curves, repr(r.mass), repr(r.max_angle),
                        repr(r.total_variation), repr(r.total_variation_bound), r.perturbed_nodes,
                        int(r.excluded)] + [repr(r.first_variation.get(n, 0.0)) for n in fv_names])
    return path


def write_curves(path: str | Path, curves: Sequence[LevelCurve], gamma: float, t: float) -> Path:
    """One polyline file: ``# gamma=... t=... curves=N`` then ``curve,closed,x,y`` rows."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# gamma={gamma!r} t={t!r} curves={len(curves)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["curve", "closed", "x", "y"])
        for k, c in enumerate(curves):
            for x, y in c.vertices:
                w.writerow([k, int(c.closed), repr(float(x)), repr(float(y))])
    return path


def read_curves(path: str | Path, period_x: float) -> list[LevelCurve]:
    rows: dict[int, list] = {}
    closed: dict[int, bool] = {}
    gamma = 0.0
    with open(path, newline="") as fh:
        first = fh.readline()
        for tok in first.lstrip("# ").split():
            if tok.startswith("gamma="):
                gamma = float(tok[6:])
        for row in csv.DictReader(fh):
            k = int(row["curve"])
            rows.setdefault(k, []).append((float(row["x"]), float(row["y"])))
            closed[k] = bool(int(row["closed"]))
    out = []
    for k in sorted(rows):
        v = np.array(rows[k])
        ends = (None, None)
        if not closed[k]:
            ends = tuple(0 if abs(p[1]) < 1e-12 else 1 for p in (v[0], v[-1]))
        out.append(LevelCurve(v, closed[k], period_x, ends, gamma))
    return out
