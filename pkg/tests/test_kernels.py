import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from neumann_mcf import backend

BACKENDS = backend.available()
needs_compiled = pytest.mark.skipif("compiled" not in BACKENDS, reason="compiled extension not built")


def _field(seed, shape=(24, 25)):
    r = np.random.default_rng(seed)
    x = np.linspace(0, 1, shape[0], endpoint=False)[:, None]
    y = np.linspace(0, 1, shape[1])[None, :]
    return np.tanh((np.hypot(x - 0.5, y) - 0.3) / 0.05) + 0.01 * r.normal(size=shape)


@needs_compiled
@pytest.mark.parametrize("scheme", ["flux", "sigma"])
def test_backends_agree_rhs(scheme):
    c, p = BACKENDS["compiled"], BACKENDS["python"]
    u = _field(1)
    a = c.rhs(u, 1 / 24, 1 / 24, 1e-2, scheme)
    b = p.rhs(u, 1 / 24, 1 / 24, 1e-2, scheme)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12 * np.abs(b).max())


@needs_compiled
def test_backends_agree_advance_and_diagnostics():
    c, p = BACKENDS["compiled"], BACKENDS["python"]
    u = _field(2)
    dt = 0.1 * (1 / 24) ** 2 * 1e-2
    a = c.advance(u, 1 / 24, 1 / 24, 1e-2, dt, 20)
    b = p.advance(u, 1 / 24, 1 / 24, 1e-2, dt, 20)
    np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(c.diagnostics(a, 1 / 24, 1 / 24, 1e-2), p.diagnostics(a, 1 / 24, 1 / 24, 1e-2),
                               rtol=1e-12)


@needs_compiled
@given(st.integers(0, 10_000), st.floats(1e-3, 1.0))
def test_backends_agree_property(seed, eps):
    c, p = BACKENDS["compiled"], BACKENDS["python"]
    u = np.random.default_rng(seed).normal(size=(12, 9))
    np.testing.assert_allclose(c.rhs_flux(u, 0.1, 0.2, eps), p.rhs_flux(u, 0.1, 0.2, eps), rtol=1e-10, atol=1e-9)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_advance_does_not_mutate_input(name):
    k = BACKENDS[name]
    u = _field(3)
    before = u.copy()
    k.advance(u, 1 / 24, 1 / 24, 1e-2, 1e-7, 3)
    assert np.array_equal(u, before)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_unknown_scheme_rejected(name):
    with pytest.raises(ValueError):
        BACKENDS[name].rhs(_field(4), 0.1, 0.1, 0.1, "upwind")


def _backend_in_subprocess(value):
    env = dict(os.environ, NEUMANN_MCF_BACKEND=value)
    code = "from neumann_mcf import backend; print(backend.kernels.__name__)"
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)


def test_env_forces_python_backend():
    out = _backend_in_subprocess("python")
    assert out.returncode == 0 and out.stdout.strip().endswith("_kernels_py")


@needs_compiled
def test_env_selects_compiled_backend():
    out = _backend_in_subprocess("compiled")
    assert out.returncode == 0 and out.stdout.strip().endswith("._kernels")
    auto = _backend_in_subprocess("auto")
    assert auto.stdout.strip().endswith("._kernels")
