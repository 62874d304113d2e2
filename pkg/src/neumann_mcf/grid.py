"""Structured grid on the periodic strip and the finite-difference toolkit.

The domain is ``Omega = (R / L_x Z) x [0, L_y]``: periodic in ``x`` and
bounded by two flat walls ``y = 0`` (outer normal ``(0, -1)``) and
``y = L_y`` (outer normal ``(0, +1)``).  Nodes are ``x_i = i * hx`` for
``i = 0 .. nx-1`` and ``y_j = j * hy`` for ``j = 0 .. ny-1`` with both wall
rows included.  Arrays are indexed ``values[i, j]`` (x first).

Ghost policy
------------
* ``x``: periodic wrap.
* ``y``: even mirror about each wall row (``u[-1] := u[1]``,
  ``u[ny] := u[ny-2]``), which is the discrete form of ``du/dy = 0``.
  Vector fields that arise as gradients of mirrored scalars have an odd
  normal component; :func:`divergence` uses that parity by default.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal

import numpy as np

Wall = Literal[0, 1]


@dataclass(frozen=True)
class GridSpec:
    """Node layout of the strip ``[0, period_x) x [0, height_y]``."""

    period_x: float = 1.0
    height_y: float = 1.0
    nx: int = 256
    ny: int = 257

    def __post_init__(self):
        problems = []
        if not (self.period_x > 0 and np.isfinite(self.period_x)):
            problems.append(f"period_x must be > 0 (got {self.period_x})")
        if not (self.height_y > 0 and np.isfinite(self.height_y)):
            problems.append(f"height_y must be > 0 (got {self.height_y})")
        if int(self.nx) != self.nx or self.nx < 8:
            problems.append(f"nx must be an integer >= 8 (got {self.nx})")
        if int(self.ny) != self.ny or self.ny < 8:
            problems.append(f"ny must be an integer >= 8 (got {self.ny})")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def hx(self) -> float:
        return self.period_x / self.nx

    @property
    def hy(self) -> float:
        return self.height_y / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.hx

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.ny) * self.hy

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as two ``(nx, ny)`` arrays."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    def points(self) -> np.ndarray:
        """Node coordinates as an ``(nx*ny, 2)`` array in ``values.ravel()`` order."""
        X, Y = self.mesh()
        return np.stack([X.ravel(), Y.ravel()], axis=-1)

    def quadrature_weights(self) -> np.ndarray:
        """Rectangle rule in ``x`` times trapezoid rule in ``y``."""
        wy = np.full(self.ny, self.hy)
        wy[0] = wy[-1] = 0.5 * self.hy
        return np.broadcast_to(self.hx * wy, self.shape)

    def sample(self, func: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> ScalarField:
        X, Y = self.mesh()
        return ScalarField(self, np.broadcast_to(func(X, Y), self.shape).astype(float))

    def refined(self, factor: int = 2) -> GridSpec:
        return GridSpec(self.period_x, self.height_y, self.nx * factor, (self.ny - 1) * factor + 1)


def _check_finite(values: np.ndarray, what: str):
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class ScalarField:
    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            raise ValueError(f"values have shape {values.shape}, grid expects {self.grid.shape}")
        _check_finite(values, "ScalarField")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> ScalarField:
        return ScalarField(self.grid, values)

    def __add__(self, other):
        other = other.values if isinstance(other, ScalarField) else other
        return self.with_values(self.values + other)

    def __sub__(self, other):
        other = other.values if isinstance(other, ScalarField) else other
        return self.with_values(self.values - other)

    def __mul__(self, other):
        other = other.values if isinstance(other, ScalarField) else other
        return self.with_values(self.values * other)

    __rmul__ = __mul__
    __radd__ = __add__


@dataclass(frozen=True)
class VectorField2:
    grid: GridSpec
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("x", "y"):
            comp = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if comp.shape != self.grid.shape:
                raise ValueError(f"component {name} has shape {comp.shape}")
            _check_finite(comp, f"VectorField2.{name}")
            comp.setflags(write=False)
            object.__setattr__(self, name, comp)

    def norm(self) -> np.ndarray:
        return np.hypot(self.x, self.y)

    def dot(self, other: VectorField2) -> np.ndarray:
        return self.x * other.x + self.y * other.y


@dataclass(frozen=True)
class Hessian2:
    grid: GridSpec
    xx: np.ndarray = field(repr=False)
    xy: np.ndarray = field(repr=False)
    yy: np.ndarray = field(repr=False)

    @property
    def yx(self) -> np.ndarray:
        return self.xy


# -- array-level stencils -----------------------------------------------------

def ddx(a: np.ndarray, hx: float) -> np.ndarray:
    return (np.roll(a, -1, axis=0) - np.roll(a, 1, axis=0)) / (2.0 * hx)


def ddy_even(a: np.ndarray, hy: float) -> np.ndarray:
    """Central y-difference with the mirror ghost; exactly zero on wall rows."""
    out = np.zeros_like(a)
    out[:, 1:-1] = (a[:, 2:] - a[:, :-2]) / (2.0 * hy)
    return out


def ddy_odd(a: np.ndarray, hy: float) -> np.ndarray:
    """Central y-difference for a component that is odd about both walls."""
    out = np.empty_like(a)
    out[:, 1:-1] = (a[:, 2:] - a[:, :-2]) / (2.0 * hy)
    out[:, 0] = (a[:, 1] + a[:, 1]) / (2.0 * hy)
    out[:, -1] = -(a[:, -2] + a[:, -2]) / (2.0 * hy)
    return out


def ddy_onesided(a: np.ndarray, hy: float) -> np.ndarray:
    """Central y-difference with second-order one-sided closures on the walls."""
    out = np.empty_like(a)
    out[:, 1:-1] = (a[:, 2:] - a[:, :-2]) / (2.0 * hy)
    out[:, 0] = (-3.0 * a[:, 0] + 4.0 * a[:, 1] - a[:, 2]) / (2.0 * hy)
    out[:, -1] = (3.0 * a[:, -1] - 4.0 * a[:, -2] + a[:, -3]) / (2.0 * hy)
    return out


def d2dx2(a: np.ndarray, hx: float) -> np.ndarray:
    return (np.roll(a, -1, axis=0) - 2.0 * a + np.roll(a, 1, axis=0)) / (hx * hx)


def d2dy2_even(a: np.ndarray, hy: float) -> np.ndarray:
    out = np.empty_like(a)
    out[:, 1:-1] = (a[:, 2:] - 2.0 * a[:, 1:-1] + a[:, :-2]) / (hy * hy)
    out[:, 0] = 2.0 * (a[:, 1] - a[:, 0]) / (hy * hy)
    out[:, -1] = 2.0 * (a[:, -2] - a[:, -1]) / (hy * hy)
    return out


# -- public operators ---------------------------------------------------------

def gradient(f: ScalarField) -> VectorField2:
    g = f.grid
    return VectorField2(g, ddx(f.values, g.hx), ddy_even(f.values, g.hy))


def hessian(f: ScalarField) -> Hessian2:
    g = f.grid
    u = f.values
    return Hessian2(
        g,
        d2dx2(u, g.hx),
        ddx(ddy_even(u, g.hy), g.hx),
        d2dy2_even(u, g.hy),
    )


def divergence(v: VectorField2, wall_policy: Literal["odd", "onesided"] = "odd") -> ScalarField:
    """Discrete divergence.

    ``"odd"`` treats ``v.y`` as odd about the walls (the parity of
    ``grad u`` for a mirrored ``u``); ``"onesided"`` makes no parity
    assumption and closes the stencil with one-sided differences.
    """
    g = v.grid
    dy = ddy_odd if wall_policy == "odd" else ddy_onesided
    return ScalarField(g, ddx(v.x, g.hx) + dy(v.y, g.hy))


def integrate(f: ScalarField | np.ndarray, grid: GridSpec | None = None) -> float:
    if isinstance(f, ScalarField):
        grid, values = f.grid, f.values
    else:
        values = np.asarray(f)
    w = grid.quadrature_weights()
    return float(np.sum(w * values))


def _wall_index(which) -> int:
    if which in (0, "bottom", "Gamma0"):
        return 0
    if which in (1, "top", "Gamma1"):
        return -1
    raise ValueError(f"unknown boundary component {which!r}; use 0 (y=0) or 1 (y=L_y)")


def boundary_integrate(f: ScalarField | np.ndarray, which: Wall | str, grid: GridSpec | None = None) -> float:
    if isinstance(f, ScalarField):
        grid, values = f.grid, f.values
    else:
        values = np.asarray(f)
    return float(grid.hx * np.sum(values[:, _wall_index(which)]))


def wall_normal(which: Wall | str) -> tuple[float, float]:
    return (0.0, -1.0) if _wall_index(which) == 0 else (0.0, 1.0)


def sup_norm(f: ScalarField) -> float:
    return float(np.max(np.abs(f.values)))


def sup_grad(f: ScalarField) -> float:
    return float(np.max(gradient(f).norm()))


# -- analytic test vector fields ----------------------------------------------

class TestVectorField:
    """Analytic vector field with its Jacobian.

    ``value(x, y)`` returns ``(X1, X2)``; ``jacobian(x, y)`` returns the
    array ``J[..., i, j] = dX_i/dx_j``.  Fields are expected to be periodic
    in ``x`` when they are integrated over the strip.
    """

    __test__ = False  # not a pytest class

    def __init__(self, name, value, jacobian, tangential_on_boundary=False, sup=None):
        self.name = name
        self._value = value
        self._jacobian = jacobian
        self.tangential_on_boundary = tangential_on_boundary
        self.sup = sup

    def value(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        X1, X2 = self._value(x, y)
        return np.broadcast_to(X1, x.shape).astype(float), np.broadcast_to(X2, x.shape).astype(float)

    def jacobian(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        J = np.asarray(self._jacobian(x, y), dtype=float)
        return np.broadcast_to(J, x.shape + (2, 2))

    def divergence(self, x, y):
        J = self.jacobian(x, y)
        return J[..., 0, 0] + J[..., 1, 1]

    def __add__(self, other: TestVectorField) -> TestVectorField:
        return self.combine(1.0, other, 1.0)

    def combine(self, a: float, other: TestVectorField, b: float) -> TestVectorField:
        def value(x, y):
            p1, p2 = self.value(x, y)
            q1, q2 = other.value(x, y)
            return a * p1 + b * q1, a * p2 + b * q2

        def jac(x, y):
            return a * self.jacobian(x, y) + b * other.jacobian(x, y)

        both = self.tangential_on_boundary and other.tangential_on_boundary
        return TestVectorField(f"{a}*{self.name}+{b}*{other.name}", value, jac, both)

    def sample(self, grid: GridSpec) -> VectorField2:
        X, Y = grid.mesh()
        v1, v2 = self.value(X, Y)
        return VectorField2(grid, v1, v2)

    def sup_norm(self, grid: GridSpec) -> float:
        if self.sup is not None:
            return float(self.sup)
        X, Y = grid.mesh()
        v1, v2 = self.value(X, Y)
        return float(np.max(np.hypot(v1, v2)))

    def __repr__(self):
        return f"TestVectorField({self.name!r}, tangential={self.tangential_on_boundary})"


def _stack_jac(a, b, c, d):
    return np.stack([np.stack([a, b], -1), np.stack([c, d], -1)], -2)


def constant_field(cx: float, cy: float) -> TestVectorField:
    z = lambda x, y: np.zeros_like(x)
    return TestVectorField(
        f"const({cx},{cy})",
        lambda x, y: (np.full_like(x, cx), np.full_like(x, cy)),
        lambda x, y: _stack_jac(z(x, y), z(x, y), z(x, y), z(x, y)),
        tangential_on_boundary=(cy == 0.0),
        sup=float(np.hypot(cx, cy)),
    )


def position_field(cx: float = 0.0, cy: float = 0.0) -> TestVectorField:
    """``X(p) = p - c``; not periodic, meant for curve-level first variations."""
    o, z = (lambda x: np.ones_like(x)), (lambda x: np.zeros_like(x))
    return TestVectorField(
        f"position({cx},{cy})",
        lambda x, y: (x - cx, y - cy),
        lambda x, y: _stack_jac(o(x), z(x), z(x), o(x)),
    )


def sine_x_field(lx: float, k: int = 1) -> TestVectorField:
    w = 2.0 * np.pi * k / lx
    z = np.zeros_like
    return TestVectorField(
        f"sin_x(k={k})",
        lambda x, y: (np.sin(w * x), z(x)),
        lambda x, y: _stack_jac(w * np.cos(w * x), z(x), z(x), z(x)),
        tangential_on_boundary=True,
        sup=1.0,
    )


def wall_bubble_field(ly: float) -> TestVectorField:
    """``(0, y (L_y - y))``, tangential on both walls."""
    z = np.zeros_like
    return TestVectorField(
        "wall_bubble",
        lambda x, y: (z(x), y * (ly - y)),
        lambda x, y: _stack_jac(z(x), z(x), z(x), ly - 2.0 * y),
        tangential_on_boundary=True,
        sup=ly * ly / 4.0,
    )


def normal_extension_field(ly: float) -> TestVectorField:
    """``(0, 2y/L_y - 1)``: equals the outer wall normal on both walls."""
    z = np.zeros_like
    return TestVectorField(
        "normal_extension",
        lambda x, y: (z(x), 2.0 * y / ly - 1.0),
        lambda x, y: _stack_jac(z(x), z(x), z(x), np.full_like(x, 2.0 / ly)),
        sup=1.0,
    )


def wave_field(lx: float, ly: float) -> TestVectorField:
    """``(cos(wx) y, sin(wx) (1 + y))``: normal component on both walls."""
    w = 2.0 * np.pi / lx

    def value(x, y):
        return np.cos(w * x) * y, np.sin(w * x) * (1.0 + y)

    def jac(x, y):
        return _stack_jac(-w * np.sin(w * x) * y, np.cos(w * x), w * np.cos(w * x) * (1.0 + y), np.sin(w * x))

    return TestVectorField("wave", value, jac, sup=float(np.hypot(ly, 1.0 + ly)))


def localized_radial_field(cx: float, cy: float, width: float, lx: float) -> TestVectorField:
    """``(p - c) * exp(-|p - c|^2 / width^2)`` using the nearest periodic image.

    Valid as a periodic smooth field when ``width`` is small against ``lx``
    (the Gaussian is below 1e-16 at half a period for ``width <= lx / 12``).
    """
    if width > lx / 12:
        raise ValueError("width too large for a periodic localized field")
    s2 = width * width

    def rel(x, y):
        dx = (x - cx + 0.5 * lx) % lx - 0.5 * lx
        return dx, y - cy

    def value(x, y):
        dx, dy = rel(x, y)
        b = np.exp(-(dx * dx + dy * dy) / s2)
        return dx * b, dy * b

    def jac(x, y):
        dx, dy = rel(x, y)
        b = np.exp(-(dx * dx + dy * dy) / s2)
        return _stack_jac(
            b * (1.0 - 2.0 * dx * dx / s2),
            -2.0 * b * dx * dy / s2,
            -2.0 * b * dx * dy / s2,
            b * (1.0 - 2.0 * dy * dy / s2),
        )

    return TestVectorField(
        f"radial_local({cx},{cy})", value, jac,
        tangential_on_boundary=(cy == 0.0),
        sup=float(width / np.sqrt(2.0) * np.exp(-0.5)),
    )


def default_field_library(grid: GridSpec, center=(0.5, 0.0)) -> list[TestVectorField]:
    """Mix of wall-tangential and wall-crossing fields exercising the boundary term."""
    lx, ly = grid.period_x, grid.height_y
    return [
        sine_x_field(lx, 1),
        sine_x_field(lx, 2),
        wall_bubble_field(ly),
        normal_extension_field(ly),
        constant_field(0.0, 1.0),
        wave_field(lx, ly),
        localized_radial_field(center[0], center[1] + 0.25 * ly, 0.08 * lx, lx),
    ]


# -- snapshot files -----------------------------------------------------------

SNAPSHOT_MAGIC = "neumann-mcf-snapshot 1"
_HEADER_END = "end_header"


def write_snapshot(path: str | Path, u: ScalarField, epsilon: float, time: float, **extra) -> Path:
    """Text header of ``key=value`` lines, then y-major little-endian float64 data."""
    path = Path(path)
    g = u.grid
    header = {
        "nx": g.nx,
        "ny": g.ny,
        "period_x": repr(float(g.period_x)),
        "height_y": repr(float(g.height_y)),
        "epsilon": repr(float(epsilon)),
        "time": repr(float(time)),
    }
    for key, val in extra.items():
        if any(c in str(val) for c in "\n="):
            raise ValueError(f"header value for {key!r} must not contain '=' or newlines")
        header[key] = val
    lines = [SNAPSHOT_MAGIC] + [f"{k}={v}" for k, v in header.items()] + [_HEADER_END]
    data = np.ascontiguousarray(u.values.T, dtype="<f8")  # y-major: row j holds all x at y_j
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(data.tobytes())
    return path


def read_snapshot(path: str | Path) -> tuple[ScalarField, dict]:
    path = Path(path)
    raw = path.read_bytes()
    meta: dict = {}
    pos = 0
    first = True
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise ValueError(f"{path}: truncated header")
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        if first:
            if line != SNAPSHOT_MAGIC:
                raise ValueError(f"{path}: not a snapshot file")
            first = False
            continue
        if line == _HEADER_END:
            break
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: malformed header line {line!r}")
        meta[key] = val
    try:
        nx, ny = int(meta["nx"]), int(meta["ny"])
        grid = GridSpec(float(meta["period_x"]), float(meta["height_y"]), nx, ny)
        meta["epsilon"] = float(meta["epsilon"])
        meta["time"] = float(meta["time"])
    except KeyError as exc:
        raise ValueError(f"{path}: header misses {exc}") from None
    payload = raw[pos:]
    if len(payload) != 8 * nx * ny:
        raise ValueError(f"{path}: expected {8 * nx * ny} data bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f8").reshape(ny, nx).T
    return ScalarField(grid, values.astype(np.float64)), meta
