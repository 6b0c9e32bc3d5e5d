import numpy as np
import pytest

from mlvms.errors import ConfigError, MeshError
from mlvms.mesh import HyperParams, LevelSpec, build_hierarchy, build_tensor_mesh
from mlvms.multilevel import MultilevelSystem, coarse_projection, composite_eval, solve_m_level, solve_single, solve_two_level
from mlvms.problems import ManufacturedProblem, poisson2d_gaussians

ALL_FACES = ((0, 0), (0, 1), (1, 0), (1, 1))
H3 = HyperParams(s=2, p=3)


def _ones(x):
    return np.ones_like(np.asarray(x, dtype=float))


def quadratic():
    """u = x^2 + x y on [0, 4]^2, -lap u = -2."""
    return ManufacturedProblem(
        "quad", ((0.0, 4.0), (0.0, 4.0)), False, lambda x, y: -2.0 * _ones(x * y), ((-2.0, (_ones, _ones)),), ALL_FACES,
        exact=lambda x, y: x * x + x * y,
    )


def zero_problem():
    return ManufacturedProblem("zero", ((0.0, 4.0), (0.0, 4.0)), False, lambda x, y: 0 * x, ((0.0, (_ones, _ones)),), ALL_FACES)


def _hier(m=2):
    specs = [LevelSpec(((0, 4), (0, 4)), 0.5, H3), LevelSpec(((1, 3), (1, 3)), 0.25, H3), LevelSpec(((1.5, 2.5), (1.5, 3)), 0.125, H3)]
    return build_hierarchy(specs[:m])


def test_zero_data_gives_zero():
    states, rep = solve_two_level(zero_problem(), _hier())
    assert rep.converged and rep.iterations == 1
    assert all(np.all(s.U == 0) for s in states)


@pytest.mark.parametrize("m", [2, 3])
def test_reproduces_polynomial_solution(m):
    P = quadratic()
    states, rep = solve_m_level(P, _hier(m), tol=1e-12, max_iter=60)
    assert rep.converged
    for st in states:
        X = st.mesh.node_coords()
        np.testing.assert_allclose(st.u, P.exact(X[:, 0], X[:, 1]), atol=1e-9)
    pts = np.random.default_rng(0).uniform(0, 4, (50, 2))
    np.testing.assert_allclose(composite_eval(states, pts), P.exact(pts[:, 0], pts[:, 1]), atol=1e-9)


def test_converged_state_is_a_fixed_point():
    P = poisson2d_gaussians()
    H = build_hierarchy([LevelSpec(P.box, 1.0, H3), LevelSpec(((7, 11), (7, 11)), 0.5, H3)])
    states, rep = solve_two_level(P, H, tol=1e-11, max_iter=80)
    assert rep.converged
    again, rep2 = solve_two_level(P, H, tol=1e-9, init=[s.U for s in states])
    assert rep2.iterations == 1
    assert max(np.max(np.abs(a.U - b.U)) for a, b in zip(states, again)) < 1e-9
    # history is non-increasing once the sweeps contract
    h = rep.history
    assert h[-1] < h[1]


def test_interface_data_comes_from_coarse_level():
    P = poisson2d_gaussians()
    H = build_hierarchy([LevelSpec(P.box, 1.0, H3), LevelSpec(((7, 11), (7, 11)), 0.5, H3)])
    system = MultilevelSystem(P, H)
    states, _ = solve_two_level(P, H, tol=1e-10, system=system)
    iface = H.interface_nodes(1)
    X = H.meshes[1].node_coords(iface)
    np.testing.assert_allclose(states[1].u[iface], states[0].eval(X), atol=1e-12)
    sel, vals = coarse_projection(states[1], H.meshes[0])
    Xc = np.stack(np.meshgrid(*[H.meshes[0].axes[d].nodes[sel[d]] for d in range(2)], indexing="ij"), axis=-1).reshape(-1, 2)
    np.testing.assert_allclose(vals.ravel(), states[1].eval(Xc), atol=1e-12)


def test_iteration_cap_reports_not_converged():
    P = poisson2d_gaussians()
    H = build_hierarchy([LevelSpec(P.box, 1.0, H3), LevelSpec(((7, 11), (7, 11)), 0.5, H3)])
    _, rep = solve_two_level(P, H, tol=1e-14, max_iter=2)
    assert rep.iterations == 2 and not rep.converged


def test_single_level_matches_one_level_system():
    P = quadratic()
    mesh = build_tensor_mesh(P.box, 0.5)
    st = solve_single(P, mesh, H3)
    X = mesh.node_coords()
    np.testing.assert_allclose(st.u, P.exact(X[:, 0], X[:, 1]), atol=1e-10)


def test_spacetime_two_level_reproduces_polynomial():
    # u = x t + x^2, u_t - u_xx = x - 2
    P = ManufacturedProblem(
        "st", ((0.0, 4.0), (0.0, 2.0)), True, lambda x, t: x - 2.0, ((1.0, (lambda x: x, _ones)), (-2.0, (_ones, _ones))),
        ((0, 0), (0, 1), (1, 0)), exact=lambda x, t: x * t + x * x,
    )
    hyp = HyperParams(s=1, p=2)
    H = build_hierarchy([LevelSpec(((0, 4),), 0.5, hyp, dt=0.5, t_span=(0, 2)), LevelSpec(((1, 3),), 0.25, hyp, dt=0.25, t_span=(0, 2))])
    states, rep = solve_two_level(P, H, tol=1e-12, max_iter=60)
    assert rep.converged
    for st in states:
        X = st.mesh.node_coords()
        np.testing.assert_allclose(st.u, P.exact(X[:, 0], X[:, 1]), atol=1e-9)


def test_guards():
    P = quadratic()
    with pytest.raises(ConfigError):
        solve_two_level(P, _hier(3))
    with pytest.raises(ConfigError):
        solve_m_level(P, _hier(1))
    with pytest.raises(ConfigError):
        solve_m_level(P, _hier(2), tol=0.0)
    with pytest.raises(ConfigError):
        MultilevelSystem(P, build_hierarchy([LevelSpec(((0, 4),), 0.5, H3)]))
    states, _ = solve_two_level(P, _hier(2))
    with pytest.raises(MeshError):
        composite_eval(states, [[5.0, 1.0]])


def _state(mesh, U, hyper=H3):
    from mlvms.chidenn import TensorBasis
    from mlvms.multilevel import LevelState

    return LevelState(1, U.reshape(mesh.shape), mesh, hyper, TensorBasis(mesh, hyper))


def test_coarse_projection_examples():
    coarse = build_tensor_mesh(((0, 4), (0, 4)), 0.5)
    fine = build_tensor_mesh(((1, 3), (1, 3)), 0.125)
    X = fine.node_coords()
    sel, vals = coarse_projection(_state(fine, np.full(fine.n_nodes, 5.0)), coarse)
    assert np.all(vals == 5.0) and vals.shape == (5, 5)
    sel, vals = coarse_projection(_state(fine, 2 * X[:, 0] - X[:, 1]), coarse)
    xc = coarse.axes[0].nodes[sel[0]]
    yc = coarse.axes[1].nodes[sel[1]]
    np.testing.assert_allclose(vals, 2 * xc[:, None] - yc[None, :], atol=1e-13)
    # x^5 on a p=5 fine level: extraction exact, coarse p=3 reconstruction is not
    hf = HyperParams(s=3, p=5)
    fs = _state(fine, X[:, 0] ** 5, hf)
    sel, vals = coarse_projection(fs, coarse)
    np.testing.assert_allclose(vals, np.broadcast_to((xc**5)[:, None], vals.shape), rtol=1e-12)
    from mlvms.chidenn import TensorBasis

    cb = TensorBasis(coarse, H3)
    Uc = np.zeros(coarse.shape)
    Xc = coarse.node_coords()
    Uc[:] = (Xc[:, 0] ** 5).reshape(coarse.shape)
    q = np.random.default_rng(0).uniform(1, 3, (50, 2))
    gap = np.abs(cb.point_eval(Uc, q) - fs.eval(q))
    assert gap.max() > 1e-3
    with pytest.raises(MeshError):
        coarse_projection(_state(build_tensor_mesh(((0, 4), (0, 4)), 0.125), np.zeros(33 * 33)), build_tensor_mesh(((5, 9), (5, 9)), 0.5))


def test_three_levels_with_constant_boundary_stay_constant():
    P = ManufacturedProblem("one", ((0.0, 4.0), (0.0, 4.0)), False, lambda x, y: 0 * x, ((0.0, (_ones, _ones)),), ALL_FACES,
                            exact=lambda x, y: _ones(x * y))
    states, rep = solve_m_level(P, _hier(3), tol=1e-12)
    assert rep.converged
    for st in states:
        np.testing.assert_allclose(st.u, 1.0, atol=1e-11)


def test_three_level_moving_source_converges():
    from mlvms.movingsource import track_map
    from mlvms.problems import moving1d
    from mlvms.studies import error_norms

    P = moving1d()
    cmap = track_map(P.box[:1], P.params["x0"], P.params["v"], P.params["k_s"], P.box[1])
    hier = build_hierarchy([LevelSpec(((-6, 6),), 0.5, H3, dt=0.5, t_span=(0, 16)), LevelSpec(((-2, 2),), 0.25, H3, dt=0.25, t_span=(0, 16)),
                            LevelSpec(((-1, 1),), 0.125, H3, dt=0.125, t_span=(0, 16))])
    states, rep = solve_m_level(P, hier, tol=1e-8, max_iter=20, cmap=cmap)
    assert rep.converged and rep.iterations <= 20
    assert error_norms([(s.basis, s.U) for s in states], P, cmap=cmap)["l2_rel"] < 2e-2


def test_interface_points_between_nodes():
    P = poisson2d_gaussians()
    H = build_hierarchy([LevelSpec(P.box, 1.0, H3), LevelSpec(((7, 11), (7, 11)), 0.5, H3)])
    states, _ = solve_two_level(P, H, tol=1e-10)
    y = np.random.default_rng(3).uniform(7, 11, 100)
    X = np.column_stack([np.full(100, 7.0), y])
    gap = np.max(np.abs(states[0].eval(X) - states[1].eval(X)))
    # bounded by the coarse interpolation scale, not zero between nodes
    assert gap < 0.05 * np.max(np.abs(states[0].U))
