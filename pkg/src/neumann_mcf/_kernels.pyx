# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stencil kernels; same stencils as ``_kernels_py``."""
import numpy as np
cimport cython
from libc.math cimport sqrt, fabs

NAME = "compiled"
SCHEMES = ("flux", "sigma")


cdef void _sigma_into(const double[:, ::1] u, double hx, double hy, double eps,
                    double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t nx = u.shape[0], ny = u.shape[1]
    cdef Py_ssize_t i, j, ip, im, jp, jm
    cdef double ux, uy, uxx, uyy, uxy, q, c
    cdef double i2hx = 1.0 / (2.0 * hx), i2hy = 1.0 / (2.0 * hy)
    cdef double ihx2 = 1.0 / (hx * hx), ihy2 = 1.0 / (hy * hy)
    cdef double e2 = eps * eps
    for i in range(nx):
        ip = i + 1 if i + 1 < nx else 0
        im = i - 1 if i > 0 else nx - 1
        for j in range(ny):
            c = u[i, j]
            ux = (u[ip, j] - u[im, j]) * i2hx
            uxx = (u[ip, j] - 2.0 * c + u[im, j]) * ihx2
            if j == 0:
                uy = 0.0
                uxy = 0.0
                uyy = 2.0 * (u[i, 1] - c) * ihy2
            elif j == ny - 1:
                uy = 0.0
                uxy = 0.0
                uyy = 2.0 * (u[i, ny - 2] - c) * ihy2
            else:
                jp = j + 1
                jm = j - 1
                uy = (u[i, jp] - u[i, jm]) * i2hy
                uyy = (u[i, jp] - 2.0 * c + u[i, jm]) * ihy2
                uxy = ((u[ip, jp] - u[ip, jm]) * i2hy - (u[im, jp] - u[im, jm]) * i2hy) * i2hx
            q = ux * ux + uy * uy + e2
            out[i, j] = uxx + uyy - (ux * ux * uxx + 2.0 * ux * uy * uxy + uy * uy * uyy) / q



cdef void _flux_into(const double[:, ::1] u, double hx, double hy, double eps,
                     double[:, ::1] ux, double[:, ::1] uy, double[:, ::1] ae,
                     double[:, ::1] an, double[:, ::1] out) noexcept nogil:
    # ae[i, j]: face (i+1/2, j); an[i, j]: face (i, j+1/2) for j < ny-1
    cdef Py_ssize_t nx = u.shape[0], ny = u.shape[1]
    cdef Py_ssize_t i, j, ip, im
    cdef double gx, gy, c, aw, a_n, a_s, un, us, div
    cdef double i2hx = 1.0 / (2.0 * hx), i2hy = 1.0 / (2.0 * hy)
    cdef double ihx2 = 1.0 / (hx * hx), ihy2 = 1.0 / (hy * hy)
    cdef double e2 = eps * eps
    for i in range(nx):
        ip = i + 1 if i + 1 < nx else 0
        im = i - 1 if i > 0 else nx - 1
        for j in range(ny):
            ux[i, j] = (u[ip, j] - u[im, j]) * i2hx
            if j == 0 or j == ny - 1:
                uy[i, j] = 0.0
            else:
                uy[i, j] = (u[i, j + 1] - u[i, j - 1]) * i2hy
    for i in range(nx):
        ip = i + 1 if i + 1 < nx else 0
        for j in range(ny):
            gx = (u[ip, j] - u[i, j]) / hx
            gy = 0.5 * (uy[i, j] + uy[ip, j])
            ae[i, j] = 1.0 / sqrt(gx * gx + gy * gy + e2)
            if j < ny - 1:
                gy = (u[i, j + 1] - u[i, j]) / hy
                gx = 0.5 * (ux[i, j] + ux[i, j + 1])
                an[i, j] = 1.0 / sqrt(gx * gx + gy * gy + e2)
    for i in range(nx):
        ip = i + 1 if i + 1 < nx else 0
        im = i - 1 if i > 0 else nx - 1
        for j in range(ny):
            c = u[i, j]
            aw = ae[im, j]
            if j == 0:
                a_n = an[i, 0]
                a_s = a_n
                un = u[i, 1]
                us = un
            elif j == ny - 1:
                a_s = an[i, ny - 2]
                a_n = a_s
                us = u[i, ny - 2]
                un = us
            else:
                a_n = an[i, j]
                a_s = an[i, j - 1]
                un = u[i, j + 1]
                us = u[i, j - 1]
            div = (ae[i, j] * (u[ip, j] - c) - aw * (c - u[im, j])) * ihx2 \
                + (a_n * (un - c) - a_s * (c - us)) * ihy2
            out[i, j] = 4.0 * div / (ae[i, j] + aw + a_n + a_s)


cdef int _scheme_id(str scheme) except -1:
    if scheme == "flux":
        return 0
    if scheme == "sigma":
        return 1
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def rhs_sigma(u, double hx, double hy, double eps):
    cdef const double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    out = np.empty_like(np.asarray(uv))
    cdef double[:, ::1] ov = out
    with nogil:
        _sigma_into(uv, hx, hy, eps, ov)
    return out


def rhs_flux(u, double hx, double hy, double eps):
    cdef const double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    shape = (uv.shape[0], uv.shape[1])
    out = np.empty(shape)
    cdef double[:, ::1] ov = out
    cdef double[:, ::1] w1 = np.empty(shape)
    cdef double[:, ::1] w2 = np.empty(shape)
    cdef double[:, ::1] w3 = np.empty(shape)
    cdef double[:, ::1] w4 = np.empty(shape)
    with nogil:
        _flux_into(uv, hx, hy, eps, w1, w2, w3, w4, ov)
    return out


def rhs(u, double hx, double hy, double eps, str scheme="flux"):
    if _scheme_id(scheme) == 0:
        return rhs_flux(u, hx, hy, eps)
    return rhs_sigma(u, hx, hy, eps)


def advance(u, double hx, double hy, double eps, double dt, Py_ssize_t nsteps, str scheme="flux"):
    cdef int sid = _scheme_id(scheme)
    cur = np.array(u, dtype=np.float64, order="C", copy=True)
    shape = (cur.shape[0], cur.shape[1])
    cdef double[:, ::1] cv = cur
    cdef double[:, ::1] wv = np.empty(shape)
    cdef double[:, ::1] w1 = np.empty(shape)
    cdef double[:, ::1] w2 = np.empty(shape)
    cdef double[:, ::1] w3 = np.empty(shape)
    cdef double[:, ::1] w4 = np.empty(shape)
    cdef Py_ssize_t n, i, j
    cdef Py_ssize_t nx = cur.shape[0], ny = cur.shape[1]
    with nogil:
        for n in range(nsteps):
            if sid == 0:
                _flux_into(cv, hx, hy, eps, w1, w2, w3, w4, wv)
            else:
                _sigma_into(cv, hx, hy, eps, wv)
            for i in range(nx):
                for j in range(ny):
                    cv[i, j] = cv[i, j] + dt * wv[i, j]
    return cur


def diagnostics(u, double hx, double hy, double eps):
    cdef const double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t nx = uv.shape[0], ny = uv.shape[1]
    nux_a = np.empty((nx, ny))
    nuy_a = np.empty((nx, ny))
    s_a = np.empty((nx, ny))
    cdef double[:, ::1] nux = nux_a
    cdef double[:, ::1] nuy = nuy_a
    cdef double[:, ::1] s = s_a
    cdef Py_ssize_t i, j, ip, im
    cdef double ux, uy, g2, H, w, gmax = 0.0
    cdef double energy = 0.0, l1 = 0.0, l2 = 0.0
    cdef double i2hx = 1.0 / (2.0 * hx), i2hy = 1.0 / (2.0 * hy)
    cdef double e2 = eps * eps
    with nogil:
        for i in range(nx):
            ip = i + 1 if i + 1 < nx else 0
            im = i - 1 if i > 0 else nx - 1
            for j in range(ny):
                ux = (uv[ip, j] - uv[im, j]) * i2hx
                if j == 0 or j == ny - 1:
                    uy = 0.0
                else:
                    uy = (uv[i, j + 1] - uv[i, j - 1]) * i2hy
                g2 = ux * ux + uy * uy
                if g2 > gmax:
                    gmax = g2
                s[i, j] = sqrt(g2 + e2)
                nux[i, j] = ux / s[i, j]
                nuy[i, j] = uy / s[i, j]
        for i in range(nx):
            ip = i + 1 if i + 1 < nx else 0
            im = i - 1 if i > 0 else nx - 1
            for j in range(ny):
                H = (nux[ip, j] - nux[im, j]) * i2hx
                if j == 0:
                    H = H + (nuy[i, 1] + nuy[i, 1]) * i2hy
                    w = 0.5 * hx * hy
                elif j == ny - 1:
                    H = H - (nuy[i, ny - 2] + nuy[i, ny - 2]) * i2hy
                    w = 0.5 * hx * hy
                else:
                    H = H + (nuy[i, j + 1] - nuy[i, j - 1]) * i2hy
                    w = hx * hy
                energy += w * s[i, j]
                l1 += w * fabs(H)
                l2 += w * H * H * s[i, j]
    return energy, l1, l2, sqrt(gmax)
