"""Pure-numpy kernels; the reference semantics for the compiled module.

Two right-hand sides are provided for ``u_t = sigma_ij(grad u) u_ij``:

``rhs_sigma``
    central differences in non-divergence form.
``rhs_flux``
    compact conservative form ``s * div(a grad u)`` with face coefficients
    ``a_f = 1/sqrt(|grad u|_f^2 + eps^2)`` and node factor
    ``s = 4 / (a_e + a_w + a_n + a_s)``.  The update is a convex combination
    of the five-point neighbourhood whenever ``dt <= min(h)^2 / 4``.
"""
from __future__ import annotations

import numpy as np

from .grid import d2dx2, d2dy2_even, ddx, ddy_even, ddy_odd

NAME = "python"
SCHEMES = ("flux", "sigma")


def rhs_sigma(u: np.ndarray, hx: float, hy: float, eps: float) -> np.ndarray:
    """``sigma_ij(grad u) d_ij u`` with ``sigma = I - p p^T / (|p|^2 + eps^2)``."""
    ux = ddx(u, hx)
    uy = ddy_even(u, hy)
    uxx = d2dx2(u, hx)
    uyy = d2dy2_even(u, hy)
    uxy = ddx(ddy_even(u, hy), hx)
    q = ux * ux + uy * uy + eps * eps
    return uxx + uyy - (ux * ux * uxx + 2.0 * ux * uy * uxy + uy * uy * uyy) / q


def _faces(u: np.ndarray, hx: float, hy: float, eps: float):
    e2 = eps * eps
    ux = ddx(u, hx)
    uy = ddy_even(u, hy)
    ue = np.roll(u, -1, axis=0)
    ae = 1.0 / np.sqrt(((ue - u) / hx) ** 2 + (0.5 * (uy + np.roll(uy, -1, axis=0))) ** 2 + e2)
    # north faces between rows j and j+1, j = 0..ny-2
    gy = (u[:, 1:] - u[:, :-1]) / hy
    gx = 0.5 * (ux[:, 1:] + ux[:, :-1])
    an_inner = 1.0 / np.sqrt(gx * gx + gy * gy + e2)
    an = np.empty_like(u)
    as_ = np.empty_like(u)
    an[:, :-1] = an_inner
    an[:, -1] = an_inner[:, -1]
    as_[:, 1:] = an_inner
    as_[:, 0] = an_inner[:, 0]
    un = np.empty_like(u)
    us = np.empty_like(u)
    un[:, :-1] = u[:, 1:]
    un[:, -1] = u[:, -2]
    us[:, 1:] = u[:, :-1]
    us[:, 0] = u[:, 1]
    return ae, np.roll(ae, 1, axis=0), an, as_, ue, np.roll(u, 1, axis=0), un, us


def compact_curvature(u: np.ndarray, hx: float, hy: float, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Compact ``div(a grad u)`` and the node factor ``s`` of the flux scheme."""
    ae, aw, an, as_, ue, uw, un, us = _faces(u, hx, hy, eps)
    div = (ae * (ue - u) - aw * (u - uw)) / (hx * hx) + (an * (un - u) - as_ * (u - us)) / (hy * hy)
    return div, 4.0 / (ae + aw + an + as_)


def rhs_flux(u: np.ndarray, hx: float, hy: float, eps: float) -> np.ndarray:
    div, s = compact_curvature(u, hx, hy, eps)
    return s * div


def rhs(u: np.ndarray, hx: float, hy: float, eps: float, scheme: str = "flux") -> np.ndarray:
    if scheme == "flux":
        return rhs_flux(u, hx, hy, eps)
    if scheme == "sigma":
        return rhs_sigma(u, hx, hy, eps)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def advance(u: np.ndarray, hx: float, hy: float, eps: float, dt: float, nsteps: int,
            scheme: str = "flux") -> np.ndarray:
    u = np.array(u, dtype=np.float64, copy=True)
    for _ in range(nsteps):
        u += dt * rhs(u, hx, hy, eps, scheme)
    return u


def diagnostics(u: np.ndarray, hx: float, hy: float, eps: float) -> tuple[float, float, float, float]:
    """``(energy, l1_H, l2_H_weighted, sup_grad)`` on the trapezoid/rectangle rule."""
    ux = ddx(u, hx)
    uy = ddy_even(u, hy)
    g2 = ux * ux + uy * uy
    s = np.sqrt(g2 + eps * eps)
    H = ddx(ux / s, hx) + ddy_odd(uy / s, hy)
    w = np.full(u.shape[1], hx * hy)
    w[0] = w[-1] = 0.5 * hx * hy
    energy = float(np.sum(s * w))
    l1 = float(np.sum(np.abs(H) * w))
    l2 = float(np.sum(H * H * s * w))
    return energy, l1, l2, float(np.sqrt(np.max(g2)))
