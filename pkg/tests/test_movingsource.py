import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlvms.assembly import elliptic_form, spacetime_form
from mlvms.chidenn import TensorBasis
from mlvms.errors import ConfigError, MeshError
from mlvms.mesh import HyperParams, build_tensor_mesh
from mlvms.movingsource import AxisWindow, CoordinateMap, inverse_map, jacobian, map_point, static_map, track_map, transformed_form

BOX = ((-6.0, 6.0), (-6.0, 6.0))


def _track(v=0.5):
    return track_map(BOX, -4.0, v, 1.0, (0.0, 12.0))


def test_identity_map():
    cmap = static_map(BOX, (-1.0, 1.0), (-1.0, 1.0))
    assert cmap.is_identity
    xi = np.random.default_rng(0).uniform(-6, 6, (30, 2))
    np.testing.assert_allclose(map_point(cmap, xi, 0.0), xi, atol=1e-14)
    jac = jacobian(cmap, xi, 0.0)
    np.testing.assert_allclose(jac.A, 1.0)
    np.testing.assert_allclose(jac.detJ, 1.0)
    assert not _track().is_identity


def test_centre_branch_is_a_translation():
    cmap = _track(0.5)
    xi = np.array([[-0.5, 1.0], [0.0, -2.0], [0.9, 0.0]])
    for t in (0.0, 3.0, 11.0):
        x = map_point(cmap, xi, t)
        np.testing.assert_allclose(x[:, 0], xi[:, 0] - 4.0 + 0.5 * t, atol=1e-13)
        np.testing.assert_allclose(x[:, 1], xi[:, 1])
        jac = jacobian(cmap, xi, t)
        np.testing.assert_allclose(jac.A, 1.0, atol=1e-14)
        np.testing.assert_allclose(jac.C, -0.5, atol=1e-14)
        np.testing.assert_allclose(jac.B, 1.0)


@pytest.mark.parametrize("edge", [-1.0, 1.0])
def test_map_is_continuous_across_branches(edge):
    cmap = _track()
    eps = 1e-9
    for t in (0.0, 5.0, 12.0):
        left = map_point(cmap, [[edge - eps, 0.0]], t)[0, 0]
        right = map_point(cmap, [[edge + eps, 0.0]], t)[0, 0]
        assert abs(left - right) < 1e-7


@settings(max_examples=40, deadline=None)
@given(xi=st.floats(-5.9, 5.9), t=st.floats(0.1, 11.9))
def test_jacobian_matches_finite_differences(xi, t):
    cmap = _track()
    if min(abs(xi - 1.0), abs(xi + 1.0)) < 1e-3:
        return
    x = map_point(cmap, [[xi, 0.0]], t)[0, 0]
    eps = 1e-6
    dxi_dx = (inverse_map(cmap, [[x + eps, 0.0]], t)[0, 0] - inverse_map(cmap, [[x - eps, 0.0]], t)[0, 0]) / (2 * eps)
    dxi_dt = (inverse_map(cmap, [[x, 0.0]], t + eps)[0, 0] - inverse_map(cmap, [[x, 0.0]], t - eps)[0, 0]) / (2 * eps)
    jac = jacobian(cmap, [[xi, 0.0]], t)
    assert abs(jac.A[0] - dxi_dx) < 1e-6
    assert abs(jac.C[0] - dxi_dt) < 1e-6
    assert abs(jac.detJ[0] * jac.A[0] - 1.0) < 1e-12


@settings(max_examples=40, deadline=None)
@given(xi=st.floats(-6.0, 6.0), t=st.floats(0.0, 12.0))
def test_round_trip(xi, t):
    cmap = _track()
    x = map_point(cmap, [[xi, 0.3]], t)
    assert np.all(np.abs(inverse_map(cmap, x, t) - [[xi, 0.3]]) < 1e-12)
    assert -6.0 - 1e-12 <= x[0, 0] <= 6.0 + 1e-12


def test_window_leaving_domain():
    with pytest.raises(MeshError):
        track_map(BOX, -4.0, 1.0, 1.0, (0.0, 12.0))
    cmap = _track()
    with pytest.raises(MeshError):
        map_point(cmap, [[0.0, 0.0]], 30.0)
    with pytest.raises(MeshError):
        AxisWindow(0, (-1.0, 1.0), (-2.0, 0.5), (-0.5, 0.5))
    with pytest.raises(MeshError):
        AxisWindow(0, (-1.0, 1.0), (-0.5, 0.5), (0.5, 0.5))
    w = AxisWindow(0, (-1.0, 1.0), (-0.5, 0.5), (-0.5, 0.5))
    with pytest.raises(ConfigError):
        CoordinateMap([w, w], 2, (0.0, 1.0))
    with pytest.raises(ConfigError):
        CoordinateMap([AxisWindow(2, (-1.0, 1.0), (-0.5, 0.5), (-0.5, 0.5))], 3, (0.0, 1.0))


def test_static_identity_form_equals_plain_form():
    mesh = build_tensor_mesh(((-2.0, 2.0), (0.0, 1.0)), 0.25)
    tb = TensorBasis(mesh, HyperParams(s=1, p=2))
    cmap = static_map(((-2.0, 2.0),), (-1.0, 1.0), (-1.0, 1.0))
    a = transformed_form(cmap, 1).matrix(tb, tb)
    b = spacetime_form(1).matrix(tb, tb)
    assert abs(a - b).max() < 1e-12
    s = build_tensor_mesh(((-2.0, 2.0),), 0.25)
    sb = TensorBasis(s, HyperParams(s=1, p=2))
    assert abs(transformed_form(cmap, 1, time=False).matrix(sb, sb) - elliptic_form(1).matrix(sb, sb)).max() < 1e-12


def test_transformed_form_guards():
    with pytest.raises(ConfigError):
        transformed_form(_track(), 1)
    with pytest.raises(ConfigError):
        transformed_form(_track(), 2, time=False)
