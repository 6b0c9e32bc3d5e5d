import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlvms.chidenn import (Basis1D, PatchTable, TensorBasis, build_patch_basis, eval_shape, interpolate, kernel_shift,
                           moment_solve, tensor_exponents)
from mlvms.errors import MeshError, SingularSystemError
from mlvms.mesh import HyperParams, build_tensor_mesh

VALID = [(s, p) for p in (1, 2, 3, 4, 5) for s in (1, 2, 3) if 2 * s >= p]


def _basis(s, p, a=8.0, n=20):
    mesh = build_tensor_mesh(((0.0, 1.0),), (1.0 / n,))
    return Basis1D(mesh.axes[0], HyperParams(a, s, p))


@pytest.mark.parametrize("s,p", VALID)
def test_1d_delta_unity_reproduction(s, p, rng):
    b = _basis(s, p)
    np.testing.assert_allclose(b.eval(b.nodes).toarray(), np.eye(b.n), atol=1e-9)
    x = rng.uniform(0, 1, 200)
    N = b.eval(x).toarray()
    np.testing.assert_allclose(N.sum(axis=1), 1.0, atol=1e-12)
    for k in range(p + 1):
        np.testing.assert_allclose(N @ b.nodes**k, x**k, atol=1e-9)
    D = b.eval(x, 1).toarray()
    np.testing.assert_allclose(D.sum(axis=1), 0.0, atol=1e-8)
    if p >= 1:
        np.testing.assert_allclose(D @ b.nodes, 1.0, atol=1e-8)


@pytest.mark.parametrize("s,p", [(1, 1), (2, 3), (3, 5)])
def test_1d_gradient_matches_finite_difference(s, p, rng):
    b = _basis(s, p)
    u = rng.normal(size=b.n)
    # stay away from element edges where the derivative jumps
    x = (rng.integers(0, 20, 30) + rng.uniform(0.2, 0.8, 30)) / 20
    eps = 1e-6
    fd = (b.interpolate(u, x + eps) - b.interpolate(u, x - eps)) / (2 * eps)
    np.testing.assert_allclose(b.interpolate(u, x, 1), fd, rtol=1e-6, atol=1e-6)


def test_lagrange_when_patch_equals_monomials():
    mesh = build_tensor_mesh(((0.0, 1.0),), (0.125,))
    pb = build_patch_basis(mesh, 4, HyperParams(s=1, p=2))
    assert np.max(np.abs(pb.A)) == 0.0
    x = np.linspace(pb.coords.min(), pb.coords.max(), 9)[:, None]
    W, _ = pb(x)
    xs = pb.coords[:, 0]
    L = np.stack([np.prod([(x[:, 0] - xs[k]) / (xs[j] - xs[k]) for k in range(3) if k != j], axis=0) for j in range(3)], axis=1)
    np.testing.assert_allclose(W, L, atol=1e-13)


def test_moment_solve_rejects_short_patch():
    with pytest.raises(SingularSystemError):
        moment_solve(np.eye(2), np.ones((2, 3)))
    with pytest.raises(SingularSystemError):
        moment_solve(np.eye(3), np.ones((3, 2)))


def test_basis_is_dilation_invariant_on_inner_branch(rng):
    x = rng.uniform(0, 1, 50)
    a = _basis(3, 3, a=8.0).eval(x).toarray()
    b = _basis(3, 3, a=20.0).eval(x).toarray()
    np.testing.assert_allclose(a, b, atol=1e-11)


def test_small_dilation_still_reproduces(rng):
    # a = 1: distances reach the outer spline branch and beyond the support
    b = _basis(2, 2, a=1.0)
    x = rng.uniform(0, 1, 100)
    N = b.eval(x).toarray()
    for k in range(3):
        np.testing.assert_allclose(N @ b.nodes**k, x**k, atol=1e-10)


@pytest.mark.parametrize("p", [1, 2, 3, 5])
def test_interpolation_order(p):
    s = max(1, (p + 1) // 2)
    errs = []
    ns = (16, 32, 64)
    for n in ns:
        b = _basis(s, p, n=n)
        x = np.linspace(0, 1, 1001)
        f = lambda t: np.sin(3 * t)
        errs.append(np.max(np.abs(b.interpolate(f(b.nodes), x) - f(x))))
    slope = np.polyfit(np.log(1.0 / np.array(ns)), np.log(errs), 1)[0]
    assert slope > p + 0.6


def test_linear_fe_special_case(rng):
    b = _basis(0, 1, n=10)
    x = rng.uniform(0, 1, 40)
    u = rng.normal(size=b.n)
    np.testing.assert_allclose(b.interpolate(u, x), np.interp(x, b.nodes, u), atol=1e-14)
    assert kernel_shift(HyperParams(s=0, p=1)) == 0
    assert kernel_shift(HyperParams(s=1, p=1)) == 1
    assert kernel_shift(HyperParams(s=2, p=3)) == 2


def test_tensor_exponents():
    e = tensor_exponents(2, 2)
    assert e.shape == (9, 2)
    assert e[0].tolist() == [0, 0] and e[-1].tolist() == [2, 2]


@settings(max_examples=20, deadline=None)
@given(sp_=st.sampled_from([(1, 1), (1, 2), (2, 3), (2, 4)]), seed=st.integers(0, 2**16))
def test_2d_radial_unity_and_reproduction(sp_, seed):
    s, p = sp_
    rng = np.random.default_rng(seed)
    mesh = build_tensor_mesh(((0.0, 1.0), (0.0, 1.0)), (1 / 6, 1 / 6))
    table = PatchTable(mesh, HyperParams(s=s, p=p))
    coords = mesh.node_coords()
    x = rng.uniform(0, 1, (1, 2))
    se = eval_shape(mesh, mesh.locate(x[0]), x, table)
    assert abs(se.values.sum() - 1) < 1e-11
    np.testing.assert_allclose(se.grads.sum(axis=1), 0.0, atol=1e-8)
    u = coords[se.nodes, 0] ** p * coords[se.nodes, 1]
    assert abs(se.values[0] @ u - x[0, 0] ** p * x[0, 1]) < 1e-8


def test_tensor_matches_radial_in_1d(rng):
    mesh = build_tensor_mesh(((0.0, 1.0),), (0.1,))
    hyper = HyperParams(s=2, p=3)
    u = rng.normal(size=mesh.n_nodes)
    x = rng.uniform(0, 1, (25, 1))
    np.testing.assert_allclose(interpolate(u, mesh, hyper, x, "tensor"), interpolate(u, mesh, hyper, x, "radial"), atol=1e-10)


def test_tensor_shape_on_element_matches_point_eval(rng):
    mesh = build_tensor_mesh(((0.0, 1.0), (0.0, 2.0)), (0.125, 0.25))
    tb = TensorBasis(mesh, HyperParams(s=2, p=3))
    u = rng.normal(size=mesh.n_nodes)
    x = np.array([[0.31, 1.07]])
    se = eval_shape(mesh, mesh.locate(x[0]), x, tb)
    np.testing.assert_allclose(se.values[0] @ u[se.nodes], tb.point_eval(u, x)[0], atol=1e-12)
    np.testing.assert_allclose(se.grads[0, :, 1] @ u[se.nodes], tb.point_eval(u, x, deriv_axis=1)[0], atol=1e-10)


def test_grid_eval_matches_point_eval(rng):
    mesh = build_tensor_mesh(((0.0, 1.0), (0.0, 1.0)), 0.125)
    tb = TensorBasis(mesh, HyperParams(s=2, p=3))
    u = rng.normal(size=mesh.shape)
    xs, ys = rng.uniform(0, 1, 4), rng.uniform(0, 1, 3)
    G = tb.grid_eval(u, [xs, ys], [1, 0])
    X = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    np.testing.assert_allclose(G.ravel(), tb.point_eval(u, X, deriv_axis=0), atol=1e-10)


def test_errors():
    b = _basis(1, 1)
    with pytest.raises(MeshError):
        b.eval([1.5])
    mesh = build_tensor_mesh(((0.0, 1.0),), (0.5,))
    with pytest.raises(MeshError):
        Basis1D(mesh.axes[0], HyperParams(s=2, p=3))
    with pytest.raises(MeshError):
        interpolate(np.zeros(2), mesh, HyperParams(s=0, p=1), [[0.2]])
    with pytest.raises(ValueError):
        interpolate(np.zeros(3), mesh, HyperParams(s=0, p=1), [[0.2]], kind="spline")


@pytest.mark.parametrize("s,p", [(1, 2), (2, 3), (3, 5)])
def test_fd_gradient_relative_error(s, p, rng):
    mesh = build_tensor_mesh(((0.0, 1.0),), (1 / 20,))
    b = Basis1D(mesh.axes[0], HyperParams(s=s, p=p))
    u = np.sin(4 * b.nodes)
    x = (rng.integers(0, 20, 50) + rng.uniform(0.1, 0.9, 50)) / 20
    step = 1e-6 * b.h
    fd = (b.interpolate(u, x + step) - b.interpolate(u, x - step)) / (2 * step)
    g = b.interpolate(u, x, 1)
    assert np.max(np.abs(g - fd) / np.maximum(np.abs(g), 1e-3)) < 1e-5


@pytest.mark.parametrize("p", [1, 2, 3])
def test_first_unreproduced_monomial_rate(p):
    s = max(1, (p + 1) // 2)
    errs = []
    for n in (16, 32, 64):
        b = _basis(s, p, n=n)
        x = np.linspace(0, 1, 2001)
        errs.append(np.max(np.abs(b.interpolate(b.nodes ** (p + 1), x) - x ** (p + 1))))
    assert min(errs) > 0
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - (p + 1)) < 0.3)


def test_constant_field_is_reproduced_everywhere(rng):
    mesh = build_tensor_mesh(((0.0, 1.0), (0.0, 1.0)), 0.125)
    for kind in ("tensor", "radial"):
        got = interpolate(np.ones(mesh.n_nodes), mesh, HyperParams(s=2, p=3), rng.uniform(0, 1, (20, 2)), kind)
        np.testing.assert_allclose(got, 1.0, atol=1e-12)
