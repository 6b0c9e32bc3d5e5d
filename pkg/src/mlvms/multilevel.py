"""Alternating-level solution of the multilevel VMS system.

Each level ``l`` carries its own C-HiDeNN field ``u_l`` on the box
``Omega_l``. Level ``l`` solves

    a(w, u_l)_{Omega_l} + sum_{k>l} a(w, u_k)_{Omega_k \\ Omega_{k+1}}
        - a(w, I_l u~_l)_{Omega_{l+1}} = b(w)_{Omega_l}

with Dirichlet data from ``u_{l-1}`` on its interface faces. ``u~_l`` is
``u_l`` with its nodal values inside ``Omega_{l+1}`` replaced by the finer
field, so the last two terms cancel the doubly counted overlap once the
sweeps converge. All coupling terms are integrated on the finer level's
cells, where both bases are smooth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import LevelOperator, elliptic_form, expand_separated, load_vector, separated_load, spacetime_form
from .chidenn import TensorBasis, apply_axes
from .errors import ConfigError, MeshError
from .mesh import MultilevelMesh

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50
EPS = 1e-14


@dataclass
class LevelState:
    level: int
    U: np.ndarray
    mesh: object
    hyper: object
    basis: TensorBasis
    interface_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def u(self) -> np.ndarray:
        return self.U.ravel()

    def eval(self, X, deriv_axis=None) -> np.ndarray:
        return self.basis.point_eval(self.U, X, deriv_axis)


@dataclass
class AlternationReport:
    iterations: int = 0
    changes: list = field(default_factory=list)
    converged: bool = False

    @property
    def history(self) -> list:
        return [max(c) for c in self.changes]


def _level_form(problem, dim, cmap=None):
    if cmap is not None:
        from .movingsource import transformed_form

        if problem.has_time:
            return transformed_form(cmap, dim - 1, problem.rho_cp, problem.k)
        return transformed_form(cmap, dim, k=problem.k, time=False)
    if problem.has_time:
        return spacetime_form(dim - 1, problem.rho_cp, problem.k)
    return elliptic_form(dim, problem.k)


class _Lazy:
    def __init__(self, cache, n, make):
        self._cache, self._n, self._make = cache, n, make

    def __len__(self):
        return self._n

    def __getitem__(self, l):
        if not 0 <= l < self._n:
            raise IndexError(l)
        if l not in self._cache:
            self._cache[l] = self._make(l)
        return self._cache[l]

    def __iter__(self):
        return (self[l] for l in range(self._n))


def _node_mask(coarse_nodes, lo, hi, h):
    tol = 1e-9 * h
    return (coarse_nodes >= lo - tol) & (coarse_nodes <= hi + tol)


class MultilevelSystem:
    """Per-level operators, loads and coupling matrices for one hierarchy.

    Parameters
    ----------
    problem : ManufacturedProblem
    hierarchy : MultilevelMesh
    cmap : CoordinateMap, optional
        Solve in the reference frame of this map.
    nq : int, optional
        Gauss points per cell (default ``p + 2`` of the finer basis).
    """

    def __init__(self, problem, hierarchy: MultilevelMesh, cmap=None, nq=None):
        if hierarchy.dim != problem.dim:
            raise ConfigError("hierarchy and problem differ in dimension")
        self.problem = problem
        self.h = hierarchy
        self.cmap = cmap
        self.nq = nq
        self.m = hierarchy.n_levels
        self.bases = [TensorBasis(mesh, spec.hyper) for mesh, spec in zip(hierarchy.meshes, hierarchy.specs)]
        self.form = _level_form(problem, hierarchy.dim, cmap)
        self._mixed = {}
        self.faces = [self._dirichlet_faces(l) for l in range(self.m)]
        self._ops = {}
        self._loads = {}
        # nodal overlap maps: level-l nodes inside the box of level l+1
        self.overlap = []
        for l in range(self.m - 1):
            fine = hierarchy.meshes[l + 1]
            sel, idx = [], []
            for d, (cax, fax) in enumerate(zip(hierarchy.meshes[l].axes, fine.axes)):
                nodes = cax.nodes
                mask = _node_mask(nodes, fax.lo, fax.hi, cax.h)
                sel.append(np.flatnonzero(mask))
                idx.append(fax.node_index(nodes[mask]))
            self.overlap.append((sel, idx))
        # interpolation of level l-1 onto level-l nodes
        self.prolong = [None] + [
            [cb.eval(fb.nodes) for cb, fb in zip(self.bases[l - 1].bases, self.bases[l].bases)] for l in range(1, self.m)
        ]

    def _dirichlet_faces(self, l):
        faces = list(self.h.interface_faces(l))
        for d, (lo_kind, hi_kind) in enumerate(self.h.face_kind[l]):
            for side, kind in ((0, lo_kind), (1, hi_kind)):
                if kind == "outer" and (d, side) in self.problem.dirichlet_faces:
                    faces.append((d, side))
        return sorted(set(faces))

    @property
    def ops(self):
        # built on first use: TD solves never need the full operators
        return _Lazy(self._ops, self.m, lambda l: LevelOperator(self.mixed(l, l, l), self.h.meshes[l].shape, self.faces[l]))

    @property
    def loads(self):
        return _Lazy(self._loads, self.m, self._load)

    def mixed(self, l, k, box_level):
        """``a(w_l, u_k)`` restricted to the box of ``box_level`` as separated terms."""
        key = (l, k, box_level)
        if key not in self._mixed:
            box = self.h.box(box_level)
            self._mixed[key] = self.form.axis_matrices(self.bases[l], self.bases[k], box=box, nq=self.nq)
        return self._mixed[key]

    def _load(self, l):
        tb = self.bases[l]
        moving_modes = self.problem.params.get("frame") == "moving"
        if self.cmap is None and moving_modes:
            return load_vector(tb, self.problem.source, nq=self.nq).reshape(tb.shape)
        if self.cmap is not None and not moving_modes:
            return load_vector(tb, self._pulled_source, nq=self.nq).reshape(tb.shape)
        return expand_separated(separated_load(tb, self.problem.source_modes, nq=self.nq)).reshape(tb.shape)

    def _pulled_source(self, *xi):
        # physical source at mapped points, times detJ
        from .movingsource import jacobian, map_point

        sd = self.problem.space_dim
        shape = np.shape(xi[0])
        pts = np.stack([np.ravel(c) for c in xi[:sd]], axis=1)
        t = np.ravel(xi[-1]) if self.problem.has_time else np.zeros(pts.shape[0])
        x = map_point(self.cmap, pts, t)
        args = [x[:, d] for d in range(sd)] + ([t] if self.problem.has_time else [])
        val = np.asarray(self.problem.source(*args), dtype=float) * jacobian(self.cmap, pts, t).detJ
        return val.reshape(shape)

    def apply(self, terms, U):
        out = None
        for c, mats in terms:
            v = c * apply_axes(U, mats)
            out = v if out is None else out + v
        return out

    def outer_values(self, l) -> np.ndarray:
        """Problem boundary data sampled at every node of level ``l``."""
        mesh = self.h.meshes[l]
        if self.problem.exact is None:
            return np.zeros(mesh.shape)
        grids = np.meshgrid(*[ax.nodes for ax in mesh.axes], indexing="ij")
        if self.cmap is not None:
            from .movingsource import map_point

            sd = self.problem.space_dim
            xi = np.stack([g.ravel() for g in grids[:sd]], axis=1)
            t = grids[-1].ravel() if self.problem.has_time else np.zeros(xi.shape[0])
            x = map_point(self.cmap, xi, t)
            grids = [x[:, d].reshape(mesh.shape) for d in range(sd)] + list(grids[sd:])
        return np.asarray(self.problem.boundary(*grids), dtype=float) * np.ones(mesh.shape)

    def interpolate_down(self, l, U_coarse) -> np.ndarray:
        """Level ``l-1`` field evaluated at all level-``l`` nodes."""
        return apply_axes(U_coarse, self.prolong[l])

    def ghost(self, l, U_l, U_next) -> np.ndarray:
        """``u~_l``: level-``l`` nodes inside the next box take the finer values."""
        sel, idx = self.overlap[l]
        out = U_l.copy()
        out[np.ix_(*sel)] = U_next[np.ix_(*idx)]
        return out


def coarse_projection(fine: LevelState, coarse_mesh) -> tuple:
    """Fine-field values at the coarse nodes lying in the fine box.

    Returns ``(selectors, values)`` where ``selectors`` are per-axis coarse
    node indices. Nested nodes coincide, so this is value extraction.
    """
    sel, idx = [], []
    for cax, fax in zip(coarse_mesh.axes, fine.mesh.axes):
        mask = _node_mask(cax.nodes, fax.lo, fax.hi, cax.h)
        if not mask.any():
            raise MeshError("no coarse node inside the fine box")
        sel.append(np.flatnonzero(mask))
        idx.append(fax.node_index(cax.nodes[mask]))
    return sel, fine.U[np.ix_(*idx)]


def _sweep_core(system: MultilevelSystem, tol, max_iter, init=None, g_outer=None):
    m = system.m
    U = [np.zeros(mesh.shape) for mesh in system.h.meshes] if init is None else [np.array(u, dtype=float, copy=True) for u in init]
    G_outer = g_outer if g_outer is not None else [system.outer_values(l) for l in range(m)]
    report = AlternationReport()
    iface = [np.zeros(0)] * m
    for it in range(1, max_iter + 1):
        changes = []
        for l in range(m):
            rhs = system.loads[l].copy()
            for k in range(l + 1, m):
                corr = system.apply(system.mixed(l, k, k), U[k])
                if k + 1 < m:
                    corr = corr - system.apply(system.mixed(l, k, k + 1), U[k])
                rhs -= corr
            if l + 1 < m:
                rhs += system.apply(system.mixed(l, l, l + 1), system.ghost(l, U[l], U[l + 1]))
            G = G_outer[l].copy()
            if l > 0:
                down = system.interpolate_down(l, U[l - 1])
                mask = system.h.meshes[l].boundary_mask(system.h.interface_faces(l)).reshape(G.shape)
                outer = system.h.meshes[l].boundary_mask([f for f in system.faces[l] if f not in system.h.interface_faces(l)]).reshape(G.shape)
                pick = mask & ~outer
                G[pick] = down[pick]
                iface[l] = down[pick]
            new = system.ops[l].solve(rhs, G)
            denom = np.max(np.abs(new)) + EPS
            changes.append(float(np.max(np.abs(new - U[l])) / denom))
            U[l] = new
        report.changes.append(changes)
        report.iterations = it
        if max(changes) < tol:
            report.converged = True
            break
    states = [LevelState(l, U[l], system.h.meshes[l], system.h.specs[l].hyper, system.bases[l], iface[l]) for l in range(m)]
    return states, report


def solve_m_level(problem, hierarchy: MultilevelMesh, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, cmap=None, nq=None, system=None, init=None):
    """Alternating sweeps over all levels, coarse to fine.

    Returns ``(states, report)``; ``report.converged`` is False when
    ``max_iter`` was hit, and the last iterate is returned.
    """
    if hierarchy.n_levels < 2:
        raise ConfigError("multilevel solve needs at least two levels")
    if not tol > 0:
        raise ConfigError("tolerance must be positive")
    system = system or MultilevelSystem(problem, hierarchy, cmap, nq)
    return _sweep_core(system, tol, max_iter, init)


def solve_two_level(problem, hierarchy: MultilevelMesh, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, cmap=None, nq=None, system=None, init=None):
    """Coarse solve with the overlap correction, then fine solve with interface data."""
    if hierarchy.n_levels != 2:
        raise ConfigError("two-level solve needs exactly two levels")
    return solve_m_level(problem, hierarchy, tol, max_iter, cmap, nq, system, init)


def solve_single(problem, mesh, hyper, cmap=None, nq=None):
    """One-level solve on ``mesh`` (convenience wrapper)."""
    from .mesh import LevelSpec, build_hierarchy

    spec_h = tuple(ax.h for ax in mesh.axes)
    if problem.has_time:
        spec = LevelSpec(mesh.box[:-1], spec_h[:-1], hyper, dt=spec_h[-1], t_span=mesh.box[-1])
    else:
        spec = LevelSpec(mesh.box, spec_h, hyper)
    hier = build_hierarchy([spec])
    system = MultilevelSystem(problem, hier, cmap, nq)
    U = system.ops[0].solve(system.loads[0], system.outer_values(0))
    return LevelState(0, U, hier.meshes[0], hyper, system.bases[0])


def composite_eval(states, X, deriv_axis=None) -> np.ndarray:
    """Value at points ``X`` from the finest level whose box contains each point."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.full(X.shape[0], np.nan)
    done = np.zeros(X.shape[0], dtype=bool)
    for st in reversed(states):
        box = st.mesh.box
        tol = 1e-12 * max(1.0, float(np.max(np.abs(box))))
        inside = np.all([(X[:, d] >= lo - tol) & (X[:, d] <= hi + tol) for d, (lo, hi) in enumerate(box)], axis=0) & ~done
        if inside.any():
            out[inside] = st.eval(X[inside], deriv_axis)
            done |= inside
    if not done.all():
        raise MeshError("point outside the global domain")
    return out
