import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neumann_mcf import initial_data as I
from neumann_mcf.grid import GridSpec, ScalarField


@pytest.fixture(scope="module")
def parts(semicircle128):
    res = semicircle128
    X = res.datum.g0.f.X
    return res, X, res.datum.g0.f


def _near_wall_points(res, n=200, seed=0):
    r = np.random.default_rng(seed)
    th = r.uniform(0.05, np.pi - 0.05, n)
    rr = res.disk.radius + r.uniform(-res.cut.r, res.cut.r, n)
    c = np.asarray(res.disk.center)
    p = c + rr[:, None] * np.stack([np.cos(th), np.sin(th)], 1)
    return p[p[:, 1] < 1.2 * res.cut.R]


# ---------------------------------------------------------------- building blocks

def test_signed_distance_derivatives():
    d = I.SignedDistanceDisk(I.DiskSet((0.5, 0.0), 0.25), 1.0)
    p = np.random.default_rng(1).uniform(0.1, 0.9, (30, 2))
    np.testing.assert_allclose(d.gradient(p), I.fd_gradient(d.value, p), atol=1e-8)
    h = 1e-5
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        np.testing.assert_allclose(d.hessian(p)[:, :, k], (d.gradient(p + e) - d.gradient(p - e)) / (2 * h), atol=1e-6)
        np.testing.assert_allclose(d.third(p)[..., k], (d.hessian(p + e) - d.hessian(p - e)) / (2 * h), atol=1e-4)
    with pytest.raises(ValueError, match="singular"):
        d.value([[0.5, 0.0]])
    # periodic image: a point just across the seam is near the disk
    d2 = I.SignedDistanceDisk(I.DiskSet((0.05, 0.0), 0.2), 1.0)
    assert d2.value([[0.95, 0.0]])[0] == pytest.approx(0.1 - 0.2)


def test_cutoff_shape_and_derivatives():
    c = I.Cutoff(0.1)
    s = np.linspace(-0.2, 0.2, 401)
    v, d1, d2 = c.derivs(s)
    assert np.all(v[np.abs(s) <= 0.1] == 1) and np.all(v[np.abs(s) >= 0.15] == 0)
    assert np.all((v >= 0) & (v <= 1))
    h = 1e-7
    mid = (np.abs(s) > 0.101) & (np.abs(s) < 0.149)
    np.testing.assert_allclose(d1[mid], ((c(s + h) - c(s - h)) / (2 * h))[mid], rtol=1e-5, atol=1e-6)
    h = 1e-5
    np.testing.assert_allclose(d2[mid], ((c.derivs(s + h)[1] - c.derivs(s - h)[1]) / (2 * h))[mid], rtol=1e-4,
                               atol=1e-3)


def test_odd_profile():
    phi = I.profile_phi(0.04)
    s = np.linspace(-0.06, 0.06, 1201)
    v = phi(s)
    np.testing.assert_allclose(v, -phi(-s), atol=1e-15)
    assert phi(0.0) == 0 and phi(0.04) == 1 and phi(-0.05) == -1
    assert np.all(np.diff(v) >= 0) and np.all(phi.d1(s) >= 0)
    h = 1e-7
    inner = np.abs(s) < 0.039
    np.testing.assert_allclose(phi.d1(s)[inner], ((phi(s + h) - phi(s - h)) / (2 * h))[inner], atol=1e-5 * phi.d1(0))
    np.testing.assert_allclose(phi.d2(s)[inner], ((phi.d1(s + h) - phi.d1(s - h)) / (2 * h))[inner],
                               atol=1e-4 * np.abs(phi.d2(s)).max())
    # integral of phi' over the support is the jump 2
    assert np.trapezoid(phi.d1(s), s) == pytest.approx(2.0, rel=1e-9)
    with pytest.raises(ValueError):
        I.profile_phi(0.0)


def test_cutoff_profile_hypotheses():
    with pytest.raises(ValueError, match="2 r < R"):
        I.CutoffProfile(R=0.1, r=0.06, delta=0.01)
    with pytest.raises(ValueError):
        I.CutoffProfile(R=0.1, r=0.01, delta=0.0)
    g = GridSpec(1.0, 1.0, 64, 65)
    with pytest.raises(ValueError, match="L_y/4"):
        I.CutoffProfile(R=0.3, r=0.1, delta=0.05).validate(g, I.DiskSet((0.5, 0.0), 0.4))
    with pytest.raises(ValueError, match="singular"):
        I.CutoffProfile(R=0.2, r=0.05, delta=0.05).validate(g, I.DiskSet((0.5, 0.0), 0.3))


def test_appendix_config_validation():
    cut = I.CutoffProfile(0.12, 0.045, 0.04)
    cfg = I.AppendixConfig().resolved(cut)
    assert cfg.s0 == cut.R and cfg.ode_step == cut.R / 64
    with pytest.raises(ValueError, match="ode_step"):
        I.AppendixConfig(ode_step=0.1, s0=0.12).resolved(cut)
    with pytest.raises(ValueError, match="root_tol"):
        I.AppendixConfig(root_tol=1e-6).resolved(cut)


# ---------------------------------------------------------------- flow and implicit time

def test_field_tangential_on_walls(parts):
    res, X, _ = parts
    x = np.linspace(0, 1, 513)
    for y in (0.0, 1.0):
        v = X(np.stack([x, np.full_like(x, y)], 1))
        assert np.max(np.abs(v[:, 1])) == 0.0
    assert np.max(np.abs(X(np.stack([x, np.zeros_like(x)], 1))[:, 0])) > 0.1


def test_field_equals_normal_on_circle_at_wall(parts):
    res, X, _ = parts
    c = np.asarray(res.disk.center)
    p = c[None] + res.disk.radius * np.array([[1.0, 0.0], [-1.0, 0.0]])
    np.testing.assert_allclose(X(p), [[1.0, 0.0], [-1.0, 0.0]], atol=1e-14)


def test_field_preserves_orthogonal_contact(parts):
    # (D^2 d_Omega) X - (DX) grad d_Omega = 0 on the walls, DX[i, j] = d_j X_i: the transported
    # level-curve normal keeps zero wall-normal component along the flow
    res, X, _ = parts
    x = np.linspace(res.disk.center[0] - 1.2 * res.cut.R, res.disk.center[0] + 1.2 * res.cut.R, 401)
    for y in (0.0, 1.0):
        p = np.stack([x, np.full_like(x, y)], 1)
        n, B = X.dOmega.gradient(p), X.dOmega.hessian(p)
        r = np.einsum("nij,nj->ni", B, X(p)) - np.einsum("nij,nj->ni", X.jacobian(p), n)
        assert np.max(np.abs(r)) <= 1e-12


def test_field_jacobian_matches_differences(parts):
    res, X, _ = parts
    p = _near_wall_points(res, 100, seed=2)
    h = 1e-6
    J = X.jacobian(p)
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        np.testing.assert_allclose(J[:, :, k], (X(p + e) - X(p - e)) / (2 * h), atol=1e-6)


@settings(max_examples=20)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.integers(0, 1000))
def test_flow_group_property(a, b, seed):
    res = _SEMI
    X, cfg = res.datum.g0.f.X, res.cfg
    s, t = a * cfg.s0, b * cfg.s0
    p = _near_wall_points(res, 200, seed)[:8]
    two = I.flow(X, I.flow(X, p, s, cfg), t, cfg)
    one = I.flow(X, p, s + t, cfg)
    assert np.max(np.abs(two - one)) <= 1e-7


def test_flow_stays_in_strip_and_limits(parts):
    res, X, _ = parts
    x = np.linspace(0.2, 0.8, 61)
    p = np.stack([x, np.zeros_like(x)], 1)
    q = I.flow(X, p, res.cfg.s0, res.cfg)
    assert np.all(q[:, 1] == 0.0)
    with pytest.raises(I.FlowError):
        I.flow(X, p, 2 * res.cfg.s0, res.cfg)
    assert np.array_equal(I.flow(X, p, 0.0, res.cfg), p)


def test_implicit_time_root_and_gradient(parts):
    res, X, f = parts
    p = _near_wall_points(res, 60, seed=4)
    dU = res.datum.g0.dU
    p = p[np.abs(dU.value(p)) < res.cut.r]
    vals, grads = f.evaluate(p)
    for q, v in zip(p, vals):
        assert abs(dU.value(I.flow(X, q[None], -v, res.cfg))[0]) <= 1e-10
    np.testing.assert_allclose(grads, I.fd_gradient(f.value, p, 1e-6), atol=1e-6)
    # sign agrees with the distance, zero on the circle
    assert np.all(np.sign(vals) == np.sign(dU.value(p)))
    c = np.asarray(res.disk.center)
    on = c[None] + res.disk.radius * np.stack([np.cos([0.2, 2.9]), np.sin([0.2, 2.9])], 1)
    assert np.max(np.abs(f.value(on))) <= 1e-10


def test_eval_f_scalar_and_vector(parts):
    _, _, f = parts
    p = np.array([0.78, 0.01])
    assert isinstance(I.eval_f(f, p), float)
    assert I.eval_f(f, p[None]).shape == (1,)


# ---------------------------------------------------------------- the datum

def test_datum_levels_and_signs(semicircle128):
    g = semicircle128.field.values
    d = I.SignedDistanceDisk(semicircle128.disk, 1.0).value_everywhere(semicircle128.field.grid.points())
    d = d.reshape(g.shape)
    assert np.all(np.abs(g) <= 1.0)
    assert np.all(g[d > semicircle128.cut.r] == 1) and np.all(g[d < -semicircle128.cut.r] == -1)
    assert np.all(np.sign(g[np.abs(d) > 1e-3]) == np.sign(d[np.abs(d) > 1e-3]))
    assert semicircle128.c0 > 0 and semicircle128.c1 >= semicircle128.c0
    assert semicircle128.halvings == 0


def test_datum_zero_set_and_neumann(semicircle128):
    assert I.boundary_zero_residual(semicircle128) <= 1e-10
    wn = I.wall_normal_derivative(semicircle128)
    assert wn["discrete"] == 0.0 and wn["analytic"] <= 1e-8


def test_datum_reflection_symmetry(semicircle128, rng):
    res = semicircle128
    p = _near_wall_points(res, 300, seed=int(rng.integers(1 << 30)))
    assert np.max(np.abs(res.datum.value(p) - res.datum.value(p * [1.0, -1.0]))) <= 1e-8


def test_datum_gradient_matches_differences(semicircle128):
    res = semicircle128
    p = _near_wall_points(res, 80, seed=7)
    np.testing.assert_allclose(res.datum.gradient(p), I.fd_gradient(res.datum.value, p, 1e-6),
                               atol=1e-5 * np.abs(res.datum.gradient(p)).max())


def test_datum_sampling_matches_evaluator(semicircle128):
    res = semicircle128
    v = res.datum.value(res.field.grid.points()).reshape(res.field.grid.shape)
    np.testing.assert_allclose(res.field.values, v, atol=1e-13)


def test_curvature_l1_bounded(semicircle128):
    rep = I.verify_initial_datum(semicircle128.field)
    assert rep.passed, rep.lines()
    assert all(v > 0 for v in rep.l1)


def test_constant_datum_has_zero_curvature(grid64):
    rep = I.verify_initial_datum(I.constant_field(grid64, 1.0))
    assert rep.l1 == [0.0] * 5 and rep.passed
    with pytest.raises(ValueError, match="decreasing"):
        I.verify_initial_datum(I.constant_field(grid64, 1.0), (1e-3, 1e-2))


def test_naive_datum_is_reported(semicircle128):
    nv = I.naive_datum(semicircle128.disk, semicircle128.field.grid, semicircle128.delta)
    rep = I.verify_initial_datum(nv)
    assert len(rep.lines()) == 6 and np.all(np.isfinite(rep.l1))


def test_build_rejects_interior_disk_touching_wall():
    g = GridSpec(1.0, 1.0, 32, 33)
    with pytest.raises(I.ConstructionError, match="boundary-anchored"):
        I.build_g(I.DiskSet((0.5, 0.2), 0.25), g)


def test_build_interior_disk_far_from_walls():
    g = GridSpec(1.0, 1.0, 32, 33)
    res = I.build_g(I.DiskSet((0.5, 0.5), 0.2), g)
    d = np.hypot(*(np.stack(g.mesh()) - np.array([0.5, 0.5])[:, None, None]))
    assert np.all(res.field.values[d < 0.1] == -1) and np.all(res.field.values[d > 0.3] == 1)


def test_build_halves_oversized_delta():
    g = GridSpec(1.0, 1.0, 64, 65)
    cut = I.CutoffProfile(R=0.12, r=0.045, delta=0.2)
    res = I.build_g(I.DiskSet((0.5, 0.0), 0.25), g, cut)
    assert res.halvings > 0 and res.delta < 0.045
    with pytest.raises(I.ConstructionError):
        I.build_g(I.DiskSet((0.5, 0.0), 0.25), g, cut, max_halvings=0)


def test_disk_validation():
    with pytest.raises(ValueError):
        I.DiskSet((0.5, 0.0), 0.0)
    assert I.DiskSet((0.5, 1.0), 0.2).boundary_anchored(GridSpec(1.0, 1.0, 16, 17))


_SEMI = I.build_g(I.DiskSet((0.5, 0.0), 0.25), GridSpec(1.0, 1.0, 16, 17))
