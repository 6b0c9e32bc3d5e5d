"""Quadrature, weak-form assembly, constraints and linear solves.

Operators on tensor-product bases are written as *separated forms*: a sum
of terms, each the product of one 1D integral per axis. The full matrix is
then ``sum_t c_t kron(A_0^t, ..., A_{d-1}^t)``, and the same per-axis
matrices feed the tensor-decomposition solver unchanged.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chidenn import (
    PatchTable,
    TensorBasis,
    apply_axes,
    axis_load,
    axis_operator,
    eval_shape,
    gauss_cells,
)
from .errors import ConfigError, MeshError, SingularSystemError
from .mesh import HyperParams, TensorMesh

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class QuadRule:
    """Tensor Gauss-Legendre rule on the reference cell ``[-1, 1]^d``."""

    order: int
    dim: int = 1

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("quadrature order must be positive")

    @property
    def points_1d(self) -> np.ndarray:
        return np.polynomial.legendre.leggauss(self.order)[0]

    @property
    def weights_1d(self) -> np.ndarray:
        return np.polynomial.legendre.leggauss(self.order)[1]

    @property
    def points(self) -> np.ndarray:
        g = self.points_1d
        return np.array(list(itertools.product(g, repeat=self.dim))).reshape(-1, self.dim)

    @property
    def weights(self) -> np.ndarray:
        w = self.weights_1d
        return np.array([np.prod(c) for c in itertools.product(w, repeat=self.dim)])


def check_quad_order(nq, hyper: HyperParams) -> int:
    """Default ``p+2`` points per axis; fewer than ``p+1`` is under-integration."""
    if nq is None:
        return hyper.p + 2
    if nq < hyper.p + 1:
        raise ConfigError(f"quadrature order {nq} is below p+1={hyper.p + 1}")
    return int(nq)


# ---------------------------------------------------------------------------
# separated forms


@dataclass(frozen=True)
class AxisFactor:
    """One axis of a separated term: derivative orders, optional weight and span.

    ``span`` limits the 1D integral to ``[lo, hi]`` (piecewise coefficients).
    """

    dtest: int = 0
    dtrial: int = 0
    weight: Callable | None = None
    span: tuple | None = None


@dataclass(frozen=True)
class FormTerm:
    coef: float
    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))


class SeparatedForm:
    """Bilinear form ``a(w, u) = sum_t coef_t prod_d int g_d w^(a) u^(b)``."""

    def __init__(self, terms: Sequence[FormTerm]):
        self.terms = list(terms)
        if not self.terms:
            raise ValueError("empty form")
        dims = {len(t.factors) for t in self.terms}
        if len(dims) != 1:
            raise ValueError("terms disagree on the number of axes")
        self.dim = dims.pop()

    def __add__(self, other):
        return SeparatedForm(self.terms + other.terms)

    def scaled(self, c: float) -> "SeparatedForm":
        return SeparatedForm([replace(t, coef=c * t.coef) for t in self.terms])

    @property
    def symmetric(self) -> bool:
        for t in self.terms:
            for f in t.factors:
                if f.dtest != f.dtrial:
                    return False
        return True

    def axis_matrices(self, test: TensorBasis, trial: TensorBasis, box=None, nq=None):
        """Per-term lists of 1D matrices, ``[(coef, [A_0, ..., A_{d-1}]), ...]``."""
        if test.dim != self.dim or trial.dim != self.dim:
            raise ValueError("basis dimension does not match the form")
        cache = {}
        out = []
        for t in self.terms:
            mats = []
            for d, f in enumerate(t.factors):
                lo, hi = (None, None) if box is None else box[d]
                if f.span is not None:
                    lo = f.span[0] if lo is None else max(lo, f.span[0])
                    hi = f.span[1] if hi is None else min(hi, f.span[1])
                key = (d, f.dtest, f.dtrial, id(f.weight) if f.weight is not None else None, lo, hi)
                M = cache.get(key)
                tb, rb = test.bases[d], trial.bases[d]
                if M is None and not min(tb.hi, rb.hi, hi if hi is not None else np.inf) - max(tb.lo, rb.lo, lo if lo is not None else -np.inf) > 1e-9 * min(tb.h, rb.h):
                    M = sp.csr_matrix((tb.n, rb.n))
                    cache[key] = M
                if M is None:
                    M = axis_operator(test.bases[d], trial.bases[d], f.dtest, f.dtrial, f.weight, lo, hi, nq)
                    cache[key] = M
                mats.append(M)
            if all(M.nnz for M in mats):
                out.append((t.coef, mats))
        return out

    def matrix(self, test: TensorBasis, trial: TensorBasis, box=None, nq=None) -> sp.csr_matrix:
        return kron_sum(self.axis_matrices(test, trial, box, nq))


def kron_sum(terms) -> sp.csr_matrix:
    total = None
    for coef, mats in terms:
        M = mats[0]
        for A in mats[1:]:
            M = sp.kron(M, A, format="csr")
        M = coef * M
        total = M if total is None else total + M
    return total.tocsr()


def apply_separated(terms, factors):
    """Action of a separated operator on a separated field.

    ``factors`` is a list over modes of per-axis vectors. Returns a list of
    ``(coef, [vectors per axis])`` load terms.
    """
    out = []
    for coef, mats in terms:
        for mode in factors:
            out.append((coef, [A @ v for A, v in zip(mats, mode)]))
    return out


def elliptic_form(dim: int, k: float = 1.0) -> SeparatedForm:
    """``int k grad w . grad u`` on a ``dim``-dimensional box."""
    terms = []
    for d in range(dim):
        terms.append(FormTerm(k, [AxisFactor(1, 1) if j == d else AxisFactor() for j in range(dim)]))
    return SeparatedForm(terms)


def mass_form(dim: int, c: float = 1.0) -> SeparatedForm:
    return SeparatedForm([FormTerm(c, [AxisFactor() for _ in range(dim)])])


def spacetime_form(space_dim: int, rho_cp: float = 1.0, k: float = 1.0) -> SeparatedForm:
    """``int int rho_cp w u_t + k grad w . grad u`` with time as the last axis."""
    dim = space_dim + 1
    terms = [FormTerm(rho_cp, [AxisFactor() for _ in range(space_dim)] + [AxisFactor(0, 1)])]
    for d in range(space_dim):
        terms.append(FormTerm(k, [AxisFactor(1, 1) if j == d else AxisFactor() for j in range(dim)]))
    return SeparatedForm(terms)


# ---------------------------------------------------------------------------
# load vectors


def quadrature_grid(tb: TensorBasis, box=None, nq=None):
    """Tensor Gauss grid of a basis (optionally restricted to ``box``)."""
    nq = nq or tb.hyper.p + 2
    pts, wts = [], []
    for d, b in enumerate(tb.bases):
        lo, hi = (b.lo, b.hi) if box is None else (max(b.lo, box[d][0]), min(b.hi, box[d][1]))
        x, w = gauss_cells(lo, hi, b.h, nq)
        pts.append(x)
        wts.append(w)
    return pts, wts


def load_vector(tb: TensorBasis, f, box=None, nq=None) -> np.ndarray:
    """``int f N~_I`` for a function ``f(*coords)`` evaluated on the quadrature grid."""
    pts, wts = quadrature_grid(tb, box, nq)
    grids = np.meshgrid(*pts, indexing="ij")
    W = wts[0]
    for w in wts[1:]:
        W = np.multiply.outer(W, w)
    F = np.broadcast_to(np.asarray(f(*grids), dtype=float), W.shape) * W
    return apply_axes(F, [b.eval(p).T for b, p in zip(tb.bases, pts)]).ravel()


def separated_load(tb: TensorBasis, modes, box=None, nq=None):
    """Per-axis load vectors of a separated source ``sum_q c_q prod_d f_d^q``."""
    out = []
    for coef, funcs in modes:
        vecs = []
        for d, (b, fd) in enumerate(zip(tb.bases, funcs)):
            lo, hi = (None, None) if box is None else box[d]
            vecs.append(axis_load(b, fd, lo, hi, nq))
        out.append((coef, vecs))
    return out


def expand_separated(vec_terms) -> np.ndarray:
    """Full nodal vector of a list of separated load terms."""
    total = None
    for coef, vecs in vec_terms:
        v = vecs[0]
        for w in vecs[1:]:
            v = np.multiply.outer(v, w)
        v = coef * v
        total = v if total is None else total + v
    return total.ravel()


# ---------------------------------------------------------------------------
# systems and constraints


@dataclass
class SparseSystem:
    """Assembled linear system on the lexicographic node numbering of a mesh."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    shape: tuple
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def _radial_system(mesh, hyper, coeffs, f, nq, time_axis):
    """Element-loop assembly with radial d-D patches (small meshes)."""
    table = PatchTable(mesh, hyper)
    rule = QuadRule(nq, mesh.dim)
    ref = rule.points
    rw = rule.weights
    rows, cols, vals = [], [], []
    F = np.zeros(mesh.n_nodes)
    vol = np.prod(mesh.h)
    for e in range(mesh.n_elements):
        emulti = np.unravel_index(e, mesh.elem_shape)
        lo = np.array([ax.lo + ax.h * emulti[d] for d, ax in enumerate(mesh.axes)])
        x = lo + 0.5 * mesh.h * (ref + 1.0)
        w = rw * vol / 2**mesh.dim
        se = eval_shape(mesh, e, x, table)
        Ke = np.zeros((se.nodes.size, se.nodes.size))
        for d in range(mesh.dim):
            G = se.grads[:, :, d]
            if time_axis and d == mesh.dim - 1:
                Ke += coeffs[0] * np.einsum("q,qi,qj->ij", w, se.values, G)
            else:
                Ke += coeffs[1] * np.einsum("q,qi,qj->ij", w, G, G)
        fx = np.asarray(f(*x.T), dtype=float) * np.ones(x.shape[0])
        F[se.nodes] += se.values.T @ (w * fx)
        r, c = np.meshgrid(se.nodes, se.nodes, indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(Ke.ravel())
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_nodes, mesh.n_nodes),
    )
    A.sum_duplicates()
    return A, F


def assemble_elliptic(mesh: TensorMesh, hyper: HyperParams, k: float, f, quad_order=None, kind: str = "tensor", basis=None) -> SparseSystem:
    """Stiffness ``int grad N~_I . k grad N~_J`` and load ``int N~_I f``.

    ``f`` is a callable ``f(*coords)`` or a separated mode list
    ``[(coef, [f_0, f_1, ...]), ...]``.
    """
    nq = check_quad_order(quad_order, hyper)
    if kind == "radial":
        A, F = _radial_system(mesh, hyper, (0.0, k), f, nq, time_axis=False)
        return SparseSystem(A, F, mesh.shape)
    if kind != "tensor":
        raise ValueError(f"unknown basis kind {kind!r}")
    tb = basis or TensorBasis(mesh, hyper)
    A = elliptic_form(mesh.dim, k).matrix(tb, tb, nq=nq)
    F = _load(tb, f, nq)
    return SparseSystem(A, F, mesh.shape)


def _load(tb, f, nq, box=None):
    if f is None:
        return np.zeros(int(np.prod(tb.shape)))
    if callable(f):
        return load_vector(tb, f, box, nq)
    return expand_separated(separated_load(tb, f, box, nq))


def assemble_spacetime(mesh: TensorMesh, hyper: HyperParams, rho_cp: float, k: float, f, initial=None, coordinate_map=None, quad_order=None, kind: str = "tensor", basis=None) -> SparseSystem:
    """Monolithic space-time system ``int int rho_cp w u_t + k grad w . grad u``.

    The last mesh axis is time. ``initial`` (a constant or a callable of the
    spatial coordinates) is imposed on the ``t = t0`` slab. With a
    ``coordinate_map`` the transformed reference-frame form is used (1D map
    acting on the first axis).
    """
    if initial is None:
        raise ConfigError("space-time assembly needs an initial condition")
    if mesh.dim < 2:
        raise MeshError("space-time mesh needs at least one space axis and a time axis")
    nq = check_quad_order(quad_order, hyper)
    if kind == "radial":
        if coordinate_map is not None:
            raise ValueError("the radial path does not support coordinate maps")
        A, F = _radial_system(mesh, hyper, (rho_cp, k), f, nq, time_axis=True)
        system = SparseSystem(A, F, mesh.shape)
    else:
        tb = basis or TensorBasis(mesh, hyper)
        if coordinate_map is None:
            form = spacetime_form(mesh.dim - 1, rho_cp, k)
        else:
            from .movingsource import transformed_form

            form = transformed_form(coordinate_map, mesh.dim - 1, rho_cp, k)
        system = SparseSystem(form.matrix(tb, tb, nq=nq), _load(tb, f, nq), mesh.shape)
    ic_nodes = np.flatnonzero(mesh.boundary_mask([(mesh.dim - 1, 0)]))
    X = mesh.node_coords(ic_nodes)
    if callable(initial):
        g = np.asarray(initial(*X[:, :-1].T), dtype=float) * np.ones(len(ic_nodes))
    else:
        g = np.full(len(ic_nodes), float(initial))
    return apply_dirichlet(system, ic_nodes, g)


def apply_dirichlet(system: SparseSystem, nodes, values) -> SparseSystem:
    """Impose ``u = g`` on ``nodes`` by column elimination.

    Constrained rows and columns become identity, known values move to the
    right-hand side, so a symmetric matrix stays symmetric. ``values`` may
    be an array or a callable of the node index.
    """
    nodes = np.asarray(nodes, dtype=np.int64).ravel()
    if callable(values):
        values = values(nodes)
    values = np.broadcast_to(np.asarray(values, dtype=float), nodes.shape).copy()
    if nodes.size and (nodes.min() < 0 or nodes.max() >= system.n):
        raise MeshError("constrained node outside the system")
    all_nodes = np.concatenate([system.constrained, nodes])
    all_vals = np.concatenate([system.values, values])
    order = np.argsort(all_nodes, kind="stable")
    all_nodes, all_vals = all_nodes[order], all_vals[order]
    dup = np.flatnonzero(np.diff(all_nodes) == 0)
    if dup.size:
        scale = np.maximum(1.0, np.abs(all_vals[dup]))
        if np.any(np.abs(all_vals[dup] - all_vals[dup + 1]) > 1e-12 * scale):
            raise ValueError("node constrained twice with conflicting values")
        keep = np.ones(all_nodes.size, dtype=bool)
        keep[dup + 1] = False
        all_nodes, all_vals = all_nodes[keep], all_vals[keep]
    n = system.n
    g = np.zeros(n)
    g[nodes] = values
    free = np.ones(n)
    free[all_nodes] = 0.0
    D = sp.diags(free)
    A = system.matrix
    rhs = free * (system.rhs - A @ g)
    fixed = np.zeros(n)
    fixed[all_nodes] = 1.0
    gfull = np.zeros(n)
    gfull[all_nodes] = all_vals
    rhs += gfull
    A = (D @ A @ D + sp.diags(fixed)).tocsr()
    A.eliminate_zeros()
    return SparseSystem(A, rhs, system.shape, all_nodes, all_vals)


# ---------------------------------------------------------------------------
# linear solves


def _cond_estimate(A) -> float:
    n = A.shape[0]
    if n <= 3000:
        return float(np.linalg.cond(A.toarray() if sp.issparse(A) else A))
    try:
        lu = spla.splu(sp.csc_matrix(A))
        inv = spla.LinearOperator(A.shape, matvec=lu.solve, rmatvec=lambda b: lu.solve(b, trans="T"))
        return float(spla.norm(A, 1) * spla.onenormest(inv))
    except RuntimeError:
        return float("inf")


class LinearSolver:
    """Factor once, solve many right-hand sides with a residual check.

    Small or nearly dense matrices use dense LU; everything else SuperLU.
    """

    def __init__(self, A, dense_limit: int = 2500, ordering: str = "MMD_AT_PLUS_A"):
        self.A = sp.csr_matrix(A)
        self.ordering = ordering
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("matrix must be square")
        self.dense = n <= dense_limit or self.A.nnz > 0.25 * n * n
        try:
            if self.dense:
                M = self.A.toarray()
                with np.errstate(all="ignore"), warnings.catch_warnings():
                    warnings.simplefilter("ignore", sla.LinAlgWarning)  # singularity is reported below
                    self._lu = sla.lu_factor(M, check_finite=True)
                if np.any(np.abs(np.diag(self._lu[0])) <= 1e-300):
                    raise RuntimeError("exactly singular")
            else:
                self._lu = spla.splu(sp.csc_matrix(self.A), permc_spec=self.ordering)
        except (RuntimeError, sla.LinAlgError, ValueError) as exc:
            raise SingularSystemError(f"singular system ({exc})", condition=float("inf")) from exc

    def _solve(self, b):
        if self.dense:
            return sla.lu_solve(self._lu, b)
        return self._lu.solve(b)

    def solve(self, b, tol: float = RESIDUAL_TOL) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        nb = np.linalg.norm(b)
        if nb == 0.0:
            return np.zeros_like(b)
        x = self._solve(b)
        for _ in range(3):
            r = b - self.A @ x
            rel = np.linalg.norm(r) / nb
            if not np.isfinite(rel):
                break
            if rel < tol:
                return x
            x = x + self._solve(r)
        r = b - self.A @ x
        rel = np.linalg.norm(r) / nb
        if not rel < tol:
            raise SingularSystemError(
                f"linear solve residual {rel:.2e} exceeds {tol:.0e}",
                condition=_cond_estimate(self.A),
            )
        return x


def solve_linear(system, tol: float = RESIDUAL_TOL) -> np.ndarray:
    """Direct solve of a constrained :class:`SparseSystem` (or ``(A, b)`` pair)."""
    if isinstance(system, SparseSystem):
        A, b = system.matrix, system.rhs
    else:
        A, b = system
    return LinearSolver(A).solve(b, tol)


class NotSeparableError(ValueError):
    """Raised when a separated operator has more than one non-diagonalizable axis."""


def _restrict(M, keep):
    M = sp.csr_matrix(M)
    return M[keep][:, keep]


def _is_symmetric(M, tol=1e-12):
    D = M - M.T
    return D.nnz == 0 or abs(D).max() <= tol * max(abs(M).max(), 1e-300)


class TensorSolver:
    """Exact direct solver for ``sum_t c_t kron(A_0^t, ..., A_{d-1}^t)``.

    Unknowns are restricted to a tensor product of per-axis free index sets
    (Dirichlet data on whole faces). Axes whose matrices form a symmetric
    pair with one positive definite member are diagonalized by a
    generalized eigendecomposition; at most one remaining axis is solved
    densely for every eigenvalue combination. Cost is a handful of
    ``O(n_d^3)`` factorizations instead of a sparse LU with heavy fill.

    Raises
    ------
    NotSeparableError
        If two or more axes cannot be diagonalized.
    """

    def __init__(self, terms, free):
        self.terms = [(float(c), list(m)) for c, m in terms]
        self.dim = len(self.terms[0][1])
        self.free = [np.asarray(f, dtype=bool) for f in free]
        self.fidx = [np.flatnonzero(f) for f in self.free]
        self.shape_free = tuple(len(i) for i in self.fidx)
        if min(self.shape_free) == 0:
            raise ValueError("an axis has no free nodes")
        restricted = [[_restrict(m[d], self.fidx[d]) for d in range(self.dim)] for _, m in self.terms]
        self._R = restricted
        plans = []
        for d in range(self.dim):
            plans.append(self._diag_plan([restricted[t][d] for t in range(len(self.terms))]))
        bad = [d for d in range(self.dim) if plans[d] is None]
        if len(bad) > 1:
            raise NotSeparableError(f"axes {bad} are not simultaneously diagonalizable")
        self.special = bad[0] if bad else None
        self.V = [None if p is None else p[0] for p in plans]
        self.diags = [None if p is None else p[1] for p in plans]
        self._prepare()

    @staticmethod
    def _diag_plan(mats):
        distinct = []
        which = []
        for M in mats:
            for k, D in enumerate(distinct):
                if M is D or (M.shape == D.shape and (M != D).nnz == 0):
                    which.append(k)
                    break
            else:
                distinct.append(M)
                which.append(len(distinct) - 1)
        if len(distinct) > 2 or not all(_is_symmetric(M) for M in distinct):
            return None
        dense = [M.toarray() for M in distinct]
        if len(dense) == 1:
            lam, V = sla.eigh(dense[0])
            vals = [lam]
        else:
            for pd in (0, 1):
                try:
                    lam, V = sla.eigh(dense[1 - pd], dense[pd])
                except sla.LinAlgError:
                    continue
                vals = [None, None]
                vals[pd] = np.ones_like(lam)
                vals[1 - pd] = lam
                break
            else:
                return None
        return V, [vals[k] for k in which]

    def _prepare(self):
        dims = [d for d in range(self.dim) if d != self.special]
        self._weights = []
        for t, (c, _) in enumerate(self.terms):
            w = np.array(c)
            for d in dims:
                w = np.multiply.outer(w, self.diags[d][t])
            self._weights.append(w)
        if self.special is None:
            self._lam = sum(self._weights)
            if np.any(np.abs(self._lam) <= 1e-14 * np.abs(self._lam).max()):
                raise SingularSystemError("separable operator has a zero eigenvalue", condition=float("inf"))
            return
        s = self.special
        mats = [self._R[t][s].toarray() for t in range(len(self.terms))]
        shp = tuple(self.shape_free[d] for d in dims)
        ns = self.shape_free[s]
        W = np.stack([w.reshape(-1) if w.ndim else np.full(int(np.prod(shp)), float(w)) for w in self._weights])
        S = np.einsum("tk,tij->kij", W, np.stack(mats))
        self._lu_batch = []
        for k in range(S.shape[0]):
            lu, piv = sla.lu_factor(S[k], check_finite=False)
            if np.any(np.abs(np.diag(lu)) <= 1e-14 * np.abs(lu).max()):
                raise SingularSystemError("singular special-axis system", condition=float("inf"))
            self._lu_batch.append((lu, piv))
        self._ns = ns
        self._shp = shp

    def apply(self, U):
        """Restricted operator times a free-node tensor."""
        U = np.asarray(U).reshape(self.shape_free)
        out = np.zeros(self.shape_free)
        for (c, _), mats in zip(self.terms, self._R):
            out += c * apply_axes(U, mats)
        return out

    def solve(self, rhs, tol: float = RESIDUAL_TOL) -> np.ndarray:
        """Solve for the free-node tensor given the restricted right-hand side."""
        B = np.asarray(rhs, dtype=float).reshape(self.shape_free)
        nb = np.linalg.norm(B)
        if nb == 0.0:
            return np.zeros(self.shape_free)
        U = self._solve_once(B)
        for _ in range(3):
            rel = np.linalg.norm(B - self.apply(U)) / nb
            if rel < tol:
                return U
            U = U + self._solve_once(B - self.apply(U))
        rel = np.linalg.norm(B - self.apply(U)) / nb
        if not rel < tol:
            raise SingularSystemError(f"tensor solve residual {rel:.2e} exceeds {tol:.0e}")
        return U

    def _solve_once(self, B):
        Bh = apply_axes(B, [None if d == self.special else self.V[d].T for d in range(self.dim)])
        if self.special is None:
            Uh = Bh / self._lam
        else:
            s = self.special
            Bm = np.moveaxis(Bh, s, -1).reshape(-1, self._ns)
            Um = np.empty_like(Bm)
            for k, (lu, piv) in enumerate(self._lu_batch):
                Um[k] = sla.lu_solve((lu, piv), Bm[k], check_finite=False)
            Uh = np.moveaxis(Um.reshape(self._shp + (self._ns,)), -1, s)
        return apply_axes(Uh, [None if d == self.special else self.V[d] for d in range(self.dim)])


def free_masks(shape, faces):
    """Per-axis free-node masks for Dirichlet data on whole faces ``(axis, side)``."""
    masks = [np.ones(n, dtype=bool) for n in shape]
    for d, side in faces:
        masks[d][0 if side == 0 else -1] = False
    return masks


class LevelOperator:
    """Separated operator on one level with face-wise Dirichlet constraints.

    Wraps the per-axis matrices, picks :class:`TensorSolver` when the form
    allows it and falls back to a sparse LU of the restricted Kronecker sum.
    """

    def __init__(self, terms, shape, dirichlet_faces):
        self.terms = terms
        self.shape = tuple(shape)
        self.faces = list(dirichlet_faces)
        self.free = free_masks(self.shape, self.faces)
        try:
            self._ts = TensorSolver(terms, self.free)
            self._lu = None
        except NotSeparableError:
            self._ts = None
            mask = self.free[0]
            for f in self.free[1:]:
                mask = np.multiply.outer(mask, f)
            self._mask = mask.ravel()
            A = kron_sum(terms)
            keep = np.flatnonzero(self._mask)
            self._lu = LinearSolver(A[keep][:, keep])

    @property
    def backend(self) -> str:
        return "tensor" if self._ts is not None else "sparse-lu"

    def apply(self, U):
        """Unconstrained operator times a full nodal tensor."""
        U = np.asarray(U).reshape(self.shape)
        out = np.zeros(self.shape)
        for c, mats in self.terms:
            out += c * apply_axes(U, mats)
        return out

    def solve(self, rhs, g=None) -> np.ndarray:
        """Nodal solution with ``u = g`` on the constrained faces.

        ``rhs`` is the unconstrained load (full nodal tensor); ``g`` a full
        nodal tensor whose constrained entries carry the Dirichlet data.
        """
        R = np.asarray(rhs, dtype=float).reshape(self.shape)
        G = np.zeros(self.shape) if g is None else np.asarray(g, dtype=float).reshape(self.shape).copy()
        fixed = ~self._free_tensor()
        G[~fixed] = 0.0
        R = R - self.apply(G)
        ix = np.ix_(*[np.flatnonzero(f) for f in self.free])
        U = G.copy()
        if self._ts is not None:
            U[ix] = self._ts.solve(R[ix])
        else:
            sub = self._lu.solve(R.ravel()[self._mask])
            U.ravel()[self._mask] = sub
        return U

    def _free_tensor(self):
        mask = self.free[0]
        for f in self.free[1:]:
            mask = np.multiply.outer(mask, f)
        return mask
