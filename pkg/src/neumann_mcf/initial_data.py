"""Smooth initial datum ``g`` whose zero set is ``Gamma_0 = dU cap closure(Omega)``.

Construction for a disk ``U`` on the periodic strip:

1. Signed distances ``d_U`` (negative in ``U``) and ``d_Omega`` (negative
   in ``Omega``), cutoffs ``eta`` (radius ``R``) and ``zeta`` (radius ``r``).
2. Vector field ``X = eta(d_U) eta(d_Omega) {(I - n n) grad d_U + d_Omega X0}``
   with ``n = grad d_Omega`` and the correction
   ``X0 = (D^2 d_Omega) grad d_U - (I - n n)(D^2 d_U) n``.  ``X`` is tangent to
   the walls, so its flow ``Phi`` preserves them.
3. ``f(x)`` is the flow time with ``d_U(Phi(x, -f(x))) = 0``; it has the
   sign of ``d_U`` and satisfies ``grad f . n = 0`` on the walls.
4. ``g0 = (1 - zeta(d_Omega)) d_U + zeta(d_Omega) f`` and ``g = phi(g0)``
   with an odd profile ``phi`` saturating at ``+-1`` for ``|s| >= delta``.

Points are passed as arrays of shape ``(n, 2)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicHermiteSpline

from .grid import GridSpec, ScalarField, divergence, gradient, integrate

logger = logging.getLogger(__name__)


class ConstructionError(ValueError):
    """A hypothesis of the construction fails for the chosen parameters."""


def _points(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 2:
        raise ValueError("points must have a trailing dimension of size 2")
    return p.reshape(-1, 2)


class SmoothScalar:
    """Function of the plane with value, gradient and Hessian evaluators.

    Subclasses implement the vectorized ``value``/``gradient``/``hessian``
    over ``(n, 2)`` point arrays.  The default ``hessian`` differentiates
    ``gradient`` by centered differences.
    """

    fd_step = 1e-5

    def value(self, p) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, p) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, p) -> np.ndarray:
        p = _points(p)
        h = self.fd_step
        cols = []
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            cols.append((self.gradient(p + e) - self.gradient(p - e)) / (2.0 * h))
        H = np.stack(cols, axis=-1)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def __call__(self, p) -> np.ndarray:
        return self.value(p)


def fd_gradient(fun, p, h: float = 1e-5) -> np.ndarray:
    """Centered-difference gradient of a vectorized scalar function."""
    p = _points(p)
    out = np.empty_like(p)
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        out[:, k] = (fun(p + e) - fun(p - e)) / (2.0 * h)
    return out


# -- geometry -----------------------------------------------------------------

@dataclass(frozen=True)
class DiskSet:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0 (got {self.radius})")

    def boundary_anchored(self, grid: GridSpec) -> bool:
        cy = self.center[1]
        return abs(cy) < 1e-14 or abs(cy - grid.height_y) < 1e-14


class SignedDistanceDisk(SmoothScalar):
    """``|p - c| - rho`` with the nearest periodic image in ``x``."""

    singular_tol = 1e-8

    def __init__(self, disk: DiskSet, period_x: float):
        if disk.radius >= period_x / 2:
            raise ValueError("disk radius must be below half the period")
        self.disk = disk
        self.period_x = period_x

    def _rel(self, p, strict=True):
        p = _points(p)
        cx, cy = self.disk.center
        dx = (p[:, 0] - cx + 0.5 * self.period_x) % self.period_x - 0.5 * self.period_x
        d = np.stack([dx, p[:, 1] - cy], axis=-1)
        rad = np.hypot(d[:, 0], d[:, 1])
        if strict and np.any(rad < self.singular_tol):
            raise ValueError("signed distance to a disk is singular at its center")
        return d, rad

    def value(self, p):
        _, rad = self._rel(p)
        return rad - self.disk.radius

    def value_everywhere(self, p):
        """``value`` without the center check (bulk grid sampling)."""
        _, rad = self._rel(p, strict=False)
        return rad - self.disk.radius

    def gradient(self, p):
        d, rad = self._rel(p)
        return d / rad[:, None]

    def hessian(self, p):
        d, rad = self._rel(p)
        rh = d / rad[:, None]
        return (np.eye(2)[None] - rh[:, :, None] * rh[:, None, :]) / rad[:, None, None]

    def third(self, p):
        """``T[n, i, j, k] = d_k d_ij d_U``."""
        d, rad = self._rel(p)
        rh = d / rad[:, None]
        I = np.eye(2)
        P = I[None] - rh[:, :, None] * rh[:, None, :]
        T = -(
            P[:, :, None, :] * rh[:, None, :, None]
            + rh[:, :, None, None] * P[:, None, :, :]
            + P[:, :, :, None] * rh[:, None, None, :]
        )
        return T / (rad[:, None, None, None] ** 2)


class StripDistance(SmoothScalar):
    """Signed distance to the strip ``0 < y < L_y`` (negative inside)."""

    def __init__(self, height_y: float):
        self.height_y = height_y

    def value(self, p):
        p = _points(p)
        return np.maximum(-p[:, 1], p[:, 1] - self.height_y)

    def gradient(self, p):
        p = _points(p)
        g = np.zeros_like(p)
        g[:, 1] = np.where(p[:, 1] < 0.5 * self.height_y, -1.0, 1.0)
        return g

    def hessian(self, p):
        # flat walls; the mid-strip kink lies outside every cutoff support used here
        return np.zeros((_points(p).shape[0], 2, 2))


# -- cutoffs and the odd profile ----------------------------------------------

def _smoothstep(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, with first two derivatives."""
    t = np.asarray(t, dtype=float)
    tc = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(tc > 0, np.exp(-1.0 / tc), 0.0)
        b = np.where(tc < 1, np.exp(-1.0 / (1.0 - tc)), 0.0)
        da = np.where(tc > 0, a / tc**2, 0.0)
        db = np.where(tc < 1, -b / (1.0 - tc) ** 2, 0.0)
        d2a = np.where(tc > 0, a * (1.0 - 2.0 * tc) / tc**4, 0.0)
        d2b = np.where(tc < 1, b * (1.0 - 2.0 * (1.0 - tc)) / (1.0 - tc) ** 4, 0.0)
    s = a + b
    v = a / s
    dv = (da * s - a * (da + db)) / s**2
    d2v = (d2a * s - a * (d2a + d2b)) / s**2 - 2.0 * dv * (da + db) / s
    inside = (t > 0) & (t < 1)
    return v, np.where(inside, dv, 0.0), np.where(inside, d2v, 0.0)


@dataclass(frozen=True)
class Cutoff:
    """Even cutoff: 1 on ``|s| < radius``, 0 on ``|s| >= 1.5 radius``."""

    radius: float

    def __call__(self, s):
        return self.derivs(s)[0]

    def derivs(self, s):
        s = np.asarray(s, dtype=float)
        R = self.radius
        t = (1.5 * R - np.abs(s)) / (0.5 * R)
        v, dv, d2v = _smoothstep(t)
        sg = np.sign(s)
        return v, -dv * sg / (0.5 * R), d2v / (0.25 * R * R)


@dataclass(frozen=True)
class CutoffProfile:
    """Cutoff radii ``R`` (for ``eta``), ``r`` (for ``zeta``) and profile half-width ``delta``."""

    R: float = 0.12
    r: float = 0.045
    delta: float = 0.04

    def __post_init__(self):
        if min(self.R, self.r, self.delta) <= 0:
            raise ValueError("cutoff radii and delta must be > 0")
        if 2.0 * self.r >= self.R:
            raise ValueError("need 2 r < R so that the r-tube lies where eta = 1")

    def validate(self, grid: GridSpec, disk: DiskSet):
        if self.R >= grid.height_y / 4:
            raise ValueError(f"R must be < L_y/4 = {grid.height_y / 4} (got {self.R})")
        if 2.0 * self.R >= disk.radius:
            raise ValueError(f"d_U is singular at the center: need 2R < radius ({disk.radius})")

    @property
    def eta(self) -> Cutoff:
        return Cutoff(self.R)

    @property
    def zeta(self) -> Cutoff:
        return Cutoff(self.r)


@dataclass(frozen=True)
class AppendixConfig:
    """Numerics of the flow map and the implicit function ``f``.

    ``s0`` and ``ode_step`` default to ``R`` and ``s0 / 64`` when left unset.
    """

    ode_step: float | None = None
    root_tol: float = 1e-12
    s0: float | None = None
    newton_max_iter: int = 30

    def resolved(self, cut: CutoffProfile) -> AppendixConfig:
        s0 = self.s0 if self.s0 is not None else cut.R
        step = self.ode_step if self.ode_step is not None else s0 / 64
        cfg = AppendixConfig(step, self.root_tol, s0, self.newton_max_iter)
        if step > s0 / 16:
            raise ValueError("ode_step must be <= s0/16")
        if self.root_tol > 1e-10:
            raise ValueError("root_tol must be <= 1e-10")
        return cfg


_BUMP_TABLE_N = 4097


class OddProfile:
    """Odd, monotone profile saturating at ``-1`` below ``-delta``.

    ``phi(s) = -1 + F(s) / F(0)`` on ``[-delta, 0]``, ``F`` the integral of the
    bump ``b(t) = exp(-delta^2 / (delta^2 - t^2))`` from ``-delta``; extended
    oddly.  ``phi'`` and ``phi''`` are evaluated in closed form; ``phi`` comes
    from a cubic Hermite interpolant of a Simpson table built with the exact
    derivative data.
    """

    def __init__(self, delta: float):
        if not delta > 0:
            raise ValueError(f"delta must be > 0 (got {delta})")
        self.delta = float(delta)
        t = np.linspace(-1.0, 0.0, _BUMP_TABLE_N)
        b = self._bump(t)
        F = cumulative_simpson(b, x=t, initial=0.0)
        self._F0 = F[-1]
        self._spline = CubicHermiteSpline(t, F / self._F0, b / self._F0)

    @staticmethod
    def _bump(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            v = np.exp(-1.0 / (1.0 - t * t))
        return np.where(np.abs(t) < 1.0, v, 0.0)

    @staticmethod
    def _dbump(t):
        t = np.asarray(t, dtype=float)
        inside = np.abs(t) < 1.0
        den = np.where(inside, 1.0 - t * t, 1.0)
        return np.where(inside, np.exp(-1.0 / den) * (-2.0 * t) / den**2, 0.0)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        t = -np.abs(s) / self.delta
        neg = -1.0 + np.where(t <= -1.0, 0.0, self._spline(np.clip(t, -1.0, 0.0)))  # phi(-|s|)
        return -np.sign(s) * neg

    def d1(self, s):
        t = np.asarray(s, dtype=float) / self.delta
        return self._bump(t) / (self._F0 * self.delta)

    def d2(self, s):
        t = np.asarray(s, dtype=float) / self.delta
        return self._dbump(t) / (self._F0 * self.delta**2)


def profile_phi(delta: float) -> OddProfile:
    return OddProfile(delta)


# -- the tangential flow --------------------------------------------------------

class TangentialFlowField:
    """The field ``X`` and its Jacobian ``J[n, i, j] = dX_i/dx_j``.

    ``d_Omega`` is assumed to have vanishing third derivatives (flat walls).
    """

    def __init__(self, dU: SignedDistanceDisk, dOmega: StripDistance, cut: CutoffProfile):
        self.dU = dU
        self.dOmega = dOmega
        self.cut = cut

    def _parts(self, p):
        p = _points(p)
        a = self.dU.gradient(p)
        A = self.dU.hessian(p)
        n = self.dOmega.gradient(p)
        B = self.dOmega.hessian(p)
        dO = self.dOmega.value(p)
        dUv = self.dU.value(p)
        Pi = np.eye(2)[None] - n[:, :, None] * n[:, None, :]
        X0 = np.einsum("nij,nj->ni", B, a) - np.einsum("nij,njk,nk->ni", Pi, A, n)
        Y = np.einsum("nij,nj->ni", Pi, a) + dO[:, None] * X0
        e1, de1, _ = self.cut.eta.derivs(dUv)
        e2, de2, _ = self.cut.eta.derivs(dO)
        return p, a, A, n, B, dO, Pi, X0, Y, e1, de1, e2, de2

    def value_near_walls(self, p):
        _, _, _, _, _, _, _, _, Y, e1, _, e2, _ = self._parts(p)
        return (e1 * e2)[:, None] * Y

    def __call__(self, p):
        p = _points(p)
        out = np.zeros_like(p)
        active = self._active(p)
        if np.any(active):
            out[active] = self.value_near_walls(p[active])
        return out

    def _active(self, p):
        R15 = 1.5 * self.cut.R
        dx = (p[:, 0] - self.dU.disk.center[0] + 0.5 * self.dU.period_x) % self.dU.period_x - 0.5 * self.dU.period_x
        rad = np.hypot(dx, p[:, 1] - self.dU.disk.center[1])
        return (np.abs(rad - self.dU.disk.radius) < R15) & (np.abs(self.dOmega.value(p)) < R15)

    def jacobian(self, p):
        p = _points(p)
        out = np.zeros((p.shape[0], 2, 2))
        active = self._active(p)
        if np.any(active):
            out[active] = self._jacobian_active(p[active])
        return out

    def _jacobian_active(self, p):
        p, a, A, n, B, dO, Pi, X0, Y, e1, de1, e2, de2 = self._parts(p)
        T = self.dU.third(p)
        w = e1 * e2
        dw = (de1 * e2)[:, None] * a + (e1 * de2)[:, None] * n
        na = np.einsum("ni,ni->n", n, a)
        Ba = np.einsum("nij,nj->ni", B, a)
        An = np.einsum("nij,nj->ni", A, n)
        nAn = np.einsum("ni,ni->n", n, An)
        BAn = np.einsum("nij,nj->ni", B, An)
        # d/dx_j of (Pi a)_i
        dPia = -B * na[:, None, None] - n[:, :, None] * Ba[:, None, :] + np.einsum("nik,nkj->nij", Pi, A)
        # d/dx_j of A_kl n_l
        dAn = np.einsum("nklj,nl->nkj", T, n) + np.einsum("nkl,nlj->nkj", A, B)
        dX0 = (
            np.einsum("nik,nkj->nij", B, A)
            + B * nAn[:, None, None]
            + n[:, :, None] * BAn[:, None, :]
            - np.einsum("nik,nkj->nij", Pi, dAn)
        )
        dY = dPia + X0[:, :, None] * n[:, None, :] + dO[:, None, None] * dX0
        return Y[:, :, None] * dw[:, None, :] + w[:, None, None] * dY


def build_X(dU: SignedDistanceDisk, dOmega: StripDistance, cut: CutoffProfile) -> TangentialFlowField:
    return TangentialFlowField(dU, dOmega, cut)


class FlowError(RuntimeError):
    pass


def _rk4_step(X, p, J, h):
    """One classical RK4 step of ``p' = X(p)``, ``J' = DX(p) J``; ``h`` scalar or per point."""
    hp = np.asarray(h, dtype=float)
    hJ = hp
    if hp.ndim:
        hp, hJ = hp[:, None], hp[:, None, None]

    def rhs(q, M):
        if M is None:
            return X(q), None
        return X(q), np.einsum("nij,njk->nik", X.jacobian(q), M)

    k1p, k1J = rhs(p, J)
    k2p, k2J = rhs(p + 0.5 * hp * k1p, None if J is None else J + 0.5 * hJ * k1J)
    k3p, k3J = rhs(p + 0.5 * hp * k2p, None if J is None else J + 0.5 * hJ * k2J)
    k4p, k4J = rhs(p + hp * k3p, None if J is None else J + hJ * k3J)
    p_new = p + hp / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    if J is None:
        return p_new, None
    return p_new, J + hJ / 6.0 * (k1J + 2 * k2J + 2 * k3J + k4J)


def flow(X: TangentialFlowField, x, s: float, cfg: AppendixConfig, bbox=None) -> np.ndarray:
    """``Phi(x, s)`` by RK4 with ``ceil(|s| / ode_step)`` equal steps."""
    p = _points(x).copy()
    if s == 0:
        return p
    if cfg.s0 is not None and abs(s) > cfg.s0 * (1 + 1e-12):
        raise FlowError(f"|s| = {abs(s)} exceeds s0 = {cfg.s0}")
    n = max(1, int(np.ceil(abs(s) / cfg.ode_step - 1e-12)))
    h = s / n
    for _ in range(n):
        p, _ = _rk4_step(X, p, None, h)
    if bbox is not None:
        (x0, x1), (y0, y1) = bbox
        if np.any((p[:, 1] < y0) | (p[:, 1] > y1)):
            raise FlowError("flow trajectory left the bounding box")
    return p


# -- implicit function f --------------------------------------------------------

class ImplicitFlowTime(SmoothScalar):
    """``f`` with ``d_U(Phi(x, -f(x))) = 0``, plus its gradient.

    Evaluation marches the backward/forward trajectory in steps of
    ``ode_step`` to bracket the root, then polishes with safeguarded Newton
    on a partial RK4 step using ``d/dtau d_U(Phi(x, tau)) = X . grad d_U``.
    ``grad f = (DPhi)^T grad d_U / (X . grad d_U)`` at ``Phi(x, -f)``.
    Scalar queries are memoized.
    """

    def __init__(self, X: TangentialFlowField, cfg: AppendixConfig):
        self.X = X
        self.cfg = cfg
        self._memo: dict[tuple[float, float], tuple[float, np.ndarray]] = {}

    def evaluate(self, p) -> tuple[np.ndarray, np.ndarray]:
        p = _points(p)
        m = p.shape[0]
        vals = np.zeros(m)
        grads = np.zeros((m, 2))
        if m == 0:
            return vals, grads
        keys = [tuple(q) for q in p]
        todo = [k for k, key in enumerate(keys) if key not in self._memo]
        if todo:
            v, g = self._solve(p[todo])
            for k, vk, gk in zip(todo, v, g):
                self._memo[keys[k]] = (vk, gk)
        for k, key in enumerate(keys):
            vals[k], grads[k] = self._memo[key]
        return vals, grads

    def value(self, p):
        return self.evaluate(p)[0]

    def gradient(self, p):
        return self.evaluate(p)[1]

    def _solve(self, p):
        dU, X, cfg = self.X.dU, self.X, self.cfg
        m = p.shape[0]
        d0 = dU.value(p)
        direction = -np.sign(d0)  # tau = -f moves against the sign of d_U
        nsteps = int(round(cfg.s0 / cfg.ode_step))
        h = direction * cfg.ode_step
        tau = np.zeros(m)
        q = p.copy()
        J = np.broadcast_to(np.eye(2), (m, 2, 2)).copy()
        done = d0 == 0.0
        bracket_tau = np.zeros(m)
        bracket_q = p.copy()
        bracket_J = J.copy()
        bracket_h = np.zeros(m)
        found = done.copy()
        for _ in range(nsteps):
            active = ~found
            if not np.any(active):
                break
            qa, Ja = _rk4_step(X, q[active], J[active], h[active])
            da = dU.value(qa)
            crossed = np.sign(da) != np.sign(d0[active])
            idx = np.flatnonzero(active)
            hit = idx[crossed]
            bracket_q[hit] = q[hit]
            bracket_J[hit] = J[hit]
            bracket_tau[hit] = tau[hit]
            bracket_h[hit] = h[hit]
            found[hit] = True
            q[idx] = qa
            J[idx] = Ja
            tau[idx] += h[idx]
        if not np.all(found):
            bad = p[~found]
            raise ConstructionError(
                f"{bad.shape[0]} point(s) outside the implicit-function neighborhood "
                f"(no sign change of d_U along the flow within |s| < s0), e.g. {bad[0]}"
            )
        vals = np.zeros(m)
        grads = np.zeros((m, 2))
        zero = d0 == 0.0
        if np.any(zero):
            grads[zero] = self._gradient_at(p[zero], np.broadcast_to(np.eye(2), (int(zero.sum()), 2, 2)))
        live = ~zero
        if np.any(live):
            t, qr, Jr = self._polish(bracket_q[live], bracket_J[live], bracket_h[live])
            vals[live] = -(bracket_tau[live] + t)
            grads[live] = self._gradient_at(qr, Jr)
        return vals, grads

    def _polish(self, q0, J0, hmax):
        dU, X, cfg = self.X.dU, self.X, self.cfg
        lo = np.zeros_like(hmax)
        hi = hmax.copy()  # signed partial-step bracket [0, hmax]
        f_lo = dU.value(q0)
        t = 0.5 * hi
        for _ in range(cfg.newton_max_iter + 60):
            qt, Jt = _rk4_step(X, q0, J0, t)
            ft = dU.value(qt)
            if np.all(np.abs(ft) <= cfg.root_tol):
                return t, qt, Jt
            same = np.sign(ft) == np.sign(f_lo)
            lo = np.where(same, t, lo)
            f_lo = np.where(same, ft, f_lo)
            hi = np.where(same, hi, t)
            slope = np.einsum("ni,ni->n", X(qt), dU.gradient(qt))
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = t - ft / slope
            inside = (newton - lo) * (newton - hi) < 0  # strictly within bracket
            t = np.where(np.abs(ft) <= cfg.root_tol, t, np.where(inside, newton, 0.5 * (lo + hi)))
        qt, Jt = _rk4_step(X, q0, J0, t)
        worst = np.max(np.abs(dU.value(qt)))
        if worst > cfg.root_tol:
            raise ConstructionError(f"root polish stalled at |d_U| = {worst:.3e}")
        return t, qt, Jt

    def _gradient_at(self, q, J):
        a = self.X.dU.gradient(q)
        Xq = self.X(q)
        return np.einsum("nji,nj->ni", J, a) / np.einsum("ni,ni->n", Xq, a)[:, None]


def eval_f(f: ImplicitFlowTime, x) -> float | np.ndarray:
    v = f.value(x)
    return float(v[0]) if np.ndim(x) == 1 else v


# -- blended distance g0 and the datum g ----------------------------------------

class BlendedDistance(SmoothScalar):
    """``g0 = (1 - zeta(d_Omega)) d_U + zeta(d_Omega) f`` on the ``2r`` tube."""

    def __init__(self, dU, dOmega, f: ImplicitFlowTime, cut: CutoffProfile):
        self.dU, self.dOmega, self.f, self.cut = dU, dOmega, f, cut

    def evaluate(self, p) -> tuple[np.ndarray, np.ndarray]:
        p = _points(p)
        dUv = self.dU.value(p)
        a = self.dU.gradient(p)
        dO = self.dOmega.value(p)
        n = self.dOmega.gradient(p)
        z, dz, _ = self.cut.zeta.derivs(dO)
        fv = np.zeros_like(dUv)
        fg = np.zeros_like(a)
        need = z > 0
        if np.any(need):
            fv[need], fg[need] = self.f.evaluate(p[need])
        val = (1.0 - z) * dUv + z * fv
        grad = (1.0 - z)[:, None] * a + z[:, None] * fg + (dz * (fv - dUv))[:, None] * n
        return val, grad

    def value(self, p):
        return self.evaluate(p)[0]

    def gradient(self, p):
        return self.evaluate(p)[1]


def build_g0(dU, dOmega, f, cut) -> BlendedDistance:
    return BlendedDistance(dU, dOmega, f, cut)


class InitialDatum(SmoothScalar):
    """``g = phi(g0)`` on ``|d_U| < r``, ``sign(d_U)`` elsewhere."""

    def __init__(self, g0: BlendedDistance, phi: OddProfile, cut: CutoffProfile):
        self.g0, self.phi, self.cut = g0, phi, cut

    def evaluate(self, p):
        p = _points(p)
        dUv = self.g0.dU.value_everywhere(p)
        val = np.sign(dUv).astype(float)
        grad = np.zeros_like(p)
        tube = np.abs(dUv) < self.cut.r
        if np.any(tube):
            v0, g0 = self.g0.evaluate(p[tube])
            val[tube] = self.phi(v0)
            grad[tube] = self.phi.d1(v0)[:, None] * g0
        return val, grad

    def value(self, p):
        return self.evaluate(p)[0]

    def gradient(self, p):
        return self.evaluate(p)[1]

    @property
    def delta(self) -> float:
        return self.phi.delta


@dataclass
class InitialDatumResult:
    field: ScalarField
    datum: InitialDatum
    disk: DiskSet
    cut: CutoffProfile
    cfg: AppendixConfig
    delta: float
    c0: float
    c1: float
    halvings: int
    notes: list[str] = field(default_factory=list)


def _default_cut(disk: DiskSet, grid: GridSpec, delta: float | None) -> CutoffProfile:
    R = min(0.48 * disk.radius, 0.24 * grid.height_y)
    r = 0.375 * R
    return CutoffProfile(R=R, r=r, delta=delta if delta is not None else 8.0 / 9.0 * r)


def build_g(
    disk: DiskSet,
    grid: GridSpec,
    cut: CutoffProfile | None = None,
    cfg: AppendixConfig | None = None,
    max_halvings: int = 10,
) -> InitialDatumResult:
    """Sample the datum on ``grid``; shrink ``delta`` until ``{|g0| <= delta}`` lies in ``{|d_U| < r}``."""
    cut = cut or _default_cut(disk, grid, None)
    cut.validate(grid, disk)
    cfg = (cfg or AppendixConfig()).resolved(cut)
    dU = SignedDistanceDisk(disk, grid.period_x)
    dO = StripDistance(grid.height_y)
    X = build_X(dU, dO, cut)
    f = ImplicitFlowTime(X, cfg)
    g0 = build_g0(dU, dO, f, cut)

    pts = grid.points()
    dUv = dU.value_everywhere(pts)
    tube = np.abs(dUv) < 2.0 * cut.r
    dO_v = dO.value(pts)
    if not disk.boundary_anchored(grid):
        near = tube & (cut.zeta(dO_v) > 0)
        if np.any(near):
            raise ConstructionError("interior disk reaches the wall cutoff region; use a boundary-anchored disk")
    v0, grad0 = g0.evaluate(pts[tube])
    d_tube = dUv[tube]
    delta = cut.delta
    halvings = 0
    inner = np.abs(d_tube) < cut.r
    while True:
        in_V = np.abs(v0) <= delta
        if not np.any(in_V & ~inner):
            break
        if halvings >= max_halvings:
            raise ConstructionError("(G1) violated: {|g0| <= delta} leaves {|d_U| < r}")
        delta *= 0.5
        halvings += 1
        logger.info("halving delta to %g", delta)
    phi = profile_phi(delta)
    cut_used = CutoffProfile(cut.R, cut.r, delta)
    datum = InitialDatum(g0, phi, cut_used)
    values = np.sign(dUv).astype(float)
    tv = np.where(inner, phi(v0), np.sign(d_tube))
    values[tube] = tv
    in_V = np.abs(v0) <= delta
    gn = np.hypot(grad0[:, 0], grad0[:, 1])
    c0 = float(gn[in_V].min()) if np.any(in_V) else float("nan")
    c1 = float(gn[in_V].max()) if np.any(in_V) else float("nan")
    if not c0 > 0:
        raise ConstructionError("grad g0 vanishes on V")
    field_ = ScalarField(grid, values.reshape(grid.shape))
    return InitialDatumResult(field_, datum, disk, cut_used, cfg, delta, c0, c1, halvings)


def constant_field(grid: GridSpec, c: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.shape, float(c)))


def naive_datum(disk: DiskSet, grid: GridSpec, delta: float) -> ScalarField:
    """``phi(clamp(d_U))`` without the wall correction ``f``."""
    dU = SignedDistanceDisk(disk, grid.period_x)
    phi = profile_phi(delta)
    d = dU.value_everywhere(grid.points())
    return ScalarField(grid, phi(np.clip(d, -delta, delta)).reshape(grid.shape))


# -- verification of the L1 curvature bound -------------------------------------

def regularized_curvature(g: ScalarField, eps: float) -> ScalarField:
    """``div(grad g / sqrt(|grad g|^2 + eps^2))`` with the mirror ghost policy."""
    from .grid import VectorField2

    grad = gradient(g)
    s = np.sqrt(grad.x**2 + grad.y**2 + eps * eps)
    return divergence(VectorField2(g.grid, grad.x / s, grad.y / s), "odd")


@dataclass
class InitialDatumReport:
    eps: list[float]
    l1: list[float]
    slope: float
    tolerance: float
    passed: bool

    def lines(self) -> list[str]:
        out = [f"eps={e:.6g} I={v:.10g}" for e, v in zip(self.eps, self.l1)]
        out.append(f"slope_vs_log_inv_eps={self.slope:.6g} tolerance={self.tolerance:.6g} pass={self.passed}")
        return out


def verify_initial_datum(g: ScalarField, eps_list: Sequence[float] = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3),
                         slope_rel_tol: float = 0.05) -> InitialDatumReport:
    """``I(eps) = int |div(grad g / sqrt(|grad g|^2 + eps^2))|`` over an eps sweep.

    Boundedness is judged by the least-squares slope of ``I`` against
    ``log(1/eps)``: ``|slope| <= slope_rel_tol * I(max eps)``.
    """
    eps = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    vals = [integrate(np.abs(regularized_curvature(g, e).values), g.grid) for e in eps]
    if len(eps) >= 2:
        slope = float(np.polyfit(np.log(1.0 / np.asarray(eps)), vals, 1)[0])
    else:
        slope = 0.0
    tol = slope_rel_tol * vals[0]
    passed = abs(slope) <= tol if vals[0] > 0 else abs(slope) <= 1e-12
    return InitialDatumReport(eps, vals, slope, tol, bool(passed))


def boundary_zero_residual(result: InitialDatumResult, n: int = 721) -> float:
    """``max |g|`` over ``n`` points of the free boundary ``dU intersected with the closed strip``."""
    c, rho = np.asarray(result.disk.center, float), result.disk.radius
    grid = result.field.grid
    th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    p = c + rho * np.stack([np.cos(th), np.sin(th)], axis=1)
    p = p[(p[:, 1] >= 0.0) & (p[:, 1] <= grid.height_y)]
    p[:, 0] = np.mod(p[:, 0], grid.period_x)
    return float(np.max(np.abs(result.datum.value(p)))) if len(p) else 0.0


def wall_normal_derivative(result: InitialDatumResult) -> dict[str, float]:
    """``max |dg/dy|`` on the wall rows: the discrete mirrored stencil and the analytic datum."""
    grid = result.field.grid
    dy = gradient(result.field).y
    x = grid.x
    walls = np.concatenate([np.stack([x, np.zeros_like(x)], 1), np.stack([x, np.full_like(x, grid.height_y)], 1)])
    an = result.datum.gradient(walls)[:, 1]
    return {"discrete": float(np.max(np.abs(dy[:, [0, -1]]))), "analytic": float(np.max(np.abs(an)))}
