import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from mlvms import _kernels_py, kernels


def _sympy_spline():
    z = sp.Symbol("z", nonnegative=True)
    inner = sp.Rational(2, 3) - 4 * z**2 + 4 * z**3
    outer = sp.Rational(4, 3) * (1 - z) ** 3
    return z, inner, outer


def test_spline_matches_symbolic():
    z, inner, outer = _sympy_spline()
    zs = np.linspace(0, 1.3, 131)
    want = np.array([float(inner.subs(z, v)) if v <= 0.5 else float(outer.subs(z, v)) if v <= 1 else 0.0 for v in zs])
    dwant = np.array([float(sp.diff(inner, z).subs(z, v)) if v <= 0.5 else float(sp.diff(outer, z).subs(z, v)) if v <= 1 else 0.0
                      for v in zs])
    for mod in (_kernels_py, kernels):
        np.testing.assert_allclose(mod.cubic_spline(zs), want, atol=1e-15)
        np.testing.assert_allclose(mod.cubic_spline_deriv(zs), dwant, atol=1e-14)


def test_spline_c1_and_second_derivative_jump():
    z, inner, outer = _sympy_spline()
    half = sp.Rational(1, 2)
    assert inner.subs(z, half) == outer.subs(z, half)
    assert sp.diff(inner, z).subs(z, half) == sp.diff(outer, z).subs(z, half)
    assert outer.subs(z, 1) == 0 and sp.diff(outer, z).subs(z, 1) == 0
    # unit integral of the 1D kernel over [-1, 1]
    assert 2 * (sp.integrate(inner, (z, 0, half)) + sp.integrate(outer, (z, half, 1))) == sp.Rational(1, 2)


@pytest.mark.parametrize("fn", ["cubic_spline", "cubic_spline_deriv"])
def test_negative_distance_rejected(fn):
    for mod in (_kernels_py, kernels):
        with pytest.raises(ValueError):
            getattr(mod, fn)(np.array([0.1, -0.2]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 2, allow_nan=False), min_size=1, max_size=40))
def test_backends_agree(vals):
    z = np.array(vals)
    np.testing.assert_allclose(kernels.cubic_spline(z), _kernels_py.cubic_spline(z), atol=1e-15)
    np.testing.assert_allclose(kernels.cubic_spline_deriv(z), _kernels_py.cubic_spline_deriv(z), atol=1e-14)


def test_fd_derivative():
    z = np.linspace(0.01, 0.99, 50)
    eps = 1e-6
    fd = (kernels.cubic_spline(z + eps) - kernels.cubic_spline(z - eps)) / (2 * eps)
    np.testing.assert_allclose(kernels.cubic_spline_deriv(z), fd, atol=1e-8)


def test_shifted_kernel_is_cubic_on_inner_branch():
    z = np.linspace(0, 0.5, 11)
    psi, dpsi = kernels.shifted_kernel(z, 2)
    np.testing.assert_allclose(psi, 4 * z**3, atol=1e-15)
    np.testing.assert_allclose(dpsi, 12 * z**2, atol=1e-14)
    psi1, _ = kernels.shifted_kernel(z, 1)
    np.testing.assert_allclose(psi1, -4 * z**2 + 4 * z**3, atol=1e-15)
    psi0, _ = kernels.shifted_kernel(z, 0)
    np.testing.assert_allclose(psi0, kernels.cubic_spline(z))


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")


def test_branches_meet_at_one_sixth():
    for mod in (_kernels_py, kernels):
        assert abs(mod.cubic_spline(np.array([0.5]))[0] - 1 / 6) < 1e-15
        assert mod.cubic_spline(np.array([1.0]))[0] == 0.0
        assert abs(mod.cubic_spline(np.array([0.0]))[0] - 2 / 3) < 1e-15
