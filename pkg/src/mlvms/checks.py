"""Quick invariant suite behind ``mlvms verify``.

Each check returns a :class:`Check`; none of them needs more than a second.
The full test-suite in ``tests/`` covers the same ground in more depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chidenn import Basis1D, PatchTable, TensorBasis, build_patch_basis, eval_shape
from .errors import MeshError
from .mesh import HyperParams, build_tensor_mesh


@dataclass
class Check:
    name: str
    value: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.value) and self.value < self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}: {self.value:.2e} (tol {self.tol:.0e})"


def _valid(s, p):
    try:
        return HyperParams(s=s, p=p)
    except MeshError:
        return None


def basis_1d(ps=(1, 2, 3, 5), ss=(1, 2, 3), seed: int = 0) -> list:
    """Kronecker delta, partition of unity and monomial reproduction on 1D meshes."""
    rng = np.random.default_rng(seed)
    out = []
    for p in ps:
        for s in ss:
            hyper = _valid(s, p)
            if hyper is None:
                continue
            mesh = build_tensor_mesh(((0.0, 1.0),), (1.0 / 16,))
            b = Basis1D(mesh.axes[0], hyper)
            x = rng.uniform(0.0, 1.0, 100)
            N = b.eval(x).toarray()
            delta = np.max(np.abs(b.eval(b.nodes).toarray() - np.eye(b.n)))
            pu = np.max(np.abs(N.sum(axis=1) - 1.0))
            rep = max(np.max(np.abs(N @ b.nodes**k - x**k)) for k in range(p + 1))
            tag = f"1D p={p} s={s}"
            out += [Check(f"{tag} delta", delta, 1e-9), Check(f"{tag} unity", pu, 1e-12), Check(f"{tag} reproduction", rep, 1e-8)]
    return out


def basis_2d(ps=(1, 2, 3, 5), ss=(1, 2, 3), seed: int = 0) -> list:
    """The same properties for the radial 2D construction on a small mesh."""
    rng = np.random.default_rng(seed)
    out = []
    for p in ps:
        for s in ss:
            hyper = _valid(s, p)
            if hyper is None:
                continue
            mesh = build_tensor_mesh(((0.0, 1.0), (0.0, 1.0)), (1.0 / 6, 1.0 / 6))
            table = PatchTable(mesh, hyper)
            coords = mesh.node_coords()
            pu = gsum = rep = 0.0
            for _ in range(12):
                x = rng.uniform(0.0, 1.0, (1, 2))
                se = eval_shape(mesh, mesh.locate(x[0]), x, table)
                pu = max(pu, abs(se.values.sum() - 1.0))
                gsum = max(gsum, float(np.max(np.abs(se.grads.sum(axis=1) * mesh.h))))
                for i in range(p + 1):
                    for j in range(p + 1):
                        u = coords[se.nodes, 0] ** i * coords[se.nodes, 1] ** j
                        rep = max(rep, abs(float(se.values[0] @ u) - x[0, 0] ** i * x[0, 1] ** j))
            pb = build_patch_basis(mesh, mesh.n_nodes // 2, hyper)
            W, _ = pb(coords[pb.nodes])
            delta = float(np.max(np.abs(W - np.eye(pb.nodes.size))))
            tag = f"2D p={p} s={s}"
            out += [Check(f"{tag} delta", delta, 1e-9), Check(f"{tag} unity", pu, 1e-12), Check(f"{tag} gradient sum * h", gsum, 1e-10),
                    Check(f"{tag} reproduction", rep, 1e-8)]
    return out


def tensor_vs_radial(seed: int = 0) -> list:
    """In 1D both constructions give the same shape functions."""
    rng = np.random.default_rng(seed)
    mesh = build_tensor_mesh(((0.0, 1.0),), (0.1,))
    hyper = HyperParams(s=2, p=3)
    u = rng.normal(size=mesh.n_nodes)
    x = rng.uniform(0.0, 1.0, (30, 1))
    a = TensorBasis(mesh, hyper).point_eval(u, x)
    table = PatchTable(mesh, hyper)
    b = np.array([eval_shape(mesh, mesh.locate(xi), xi, table).values[0] @ u[eval_shape(mesh, mesh.locate(xi), xi, table).nodes] for xi in x])
    return [Check("1D tensor == radial", float(np.max(np.abs(a - b))), 1e-10)]


def problems_residual() -> list:
    from .problems import heat1d, moving1d, moving3d, poisson2d_gaussians, separable_sine

    out = []
    for make in (poisson2d_gaussians, heat1d, moving1d, moving3d, separable_sine):
        prob = make()
        out.append(Check(f"{prob.name} manufactured residual", prob.self_check(n=200), 1e-8))
    return out


def map_round_trip(seed: int = 0) -> list:
    from .movingsource import inverse_map, jacobian, map_point, track_map

    rng = np.random.default_rng(seed)
    cmap = track_map(((-6.0, 6.0), (-6.0, 6.0), (-6.0, 0.0)), -5.0, 0.5, 0.8, (0.0, 16.0))
    xi = rng.uniform(-6.0, 6.0, (200, 3))
    xi[:, 2] = rng.uniform(-6.0, 0.0, 200)
    t = rng.uniform(0.0, 16.0, 200)
    back = inverse_map(cmap, map_point(cmap, xi, t), t)
    jac = jacobian(cmap, xi, t)
    return [
        Check("map round trip", float(np.max(np.abs(back - xi))), 1e-12),
        Check("detJ = 1/(AB)", float(np.max(np.abs(jac.detJ * jac.A * jac.B - 1.0))), 1e-13),
    ]


def backend_agreement(seed: int = 0) -> list:
    from . import _kernels_py, kernels

    z = np.random.default_rng(seed).uniform(0.0, 1.5, 500)
    diff = max(float(np.max(np.abs(kernels.cubic_spline(z) - _kernels_py.cubic_spline(z)))),
               float(np.max(np.abs(kernels.cubic_spline_deriv(z) - _kernels_py.cubic_spline_deriv(z)))))
    return [Check(f"kernel backend ({kernels.BACKEND}) vs numpy", diff, 1e-14)]


SUITES = {
    "basis-1d": basis_1d,
    "basis-2d": basis_2d,
    "tensor-radial": tensor_vs_radial,
    "problems": problems_residual,
    "coordinate-map": map_round_trip,
    "backends": backend_agreement,
}


def run_all(seed: int = 0) -> list:
    out = []
    for name, fn in SUITES.items():
        try:
            out += fn(seed=seed) if "seed" in fn.__code__.co_varnames else fn()
        except Exception as exc:  # report, do not abort the suite
            out.append(Check(f"{name} raised {type(exc).__name__}: {exc}", float("inf"), 0.0))
    return out
