"""Convolution-patch (C-HiDeNN) shape functions.

Each node ``I`` owns a patch of ``(2s+1)**d`` nodes and a set of patch
functions ``W^I(x) = Psi(x) A + P(x) K`` built from a radial cubic-spline
kernel ``Psi`` and a tensor monomial basis ``P``. They interpolate the patch
nodes and reproduce every polynomial in ``P``. Shape functions blend the
patch functions of an element's corners with multilinear FE weights::

    N~_J(x) = sum_I N_I(x) W^I_J(x)

Two d-dimensional constructions are provided:

``radial``
    One d-D patch per node with Euclidean distances (:class:`PatchTable`).
``tensor``
    Products of 1D patch bases along every axis (:class:`TensorBasis`).
    This is the one the solvers use; it makes every operator a sum of
    Kronecker products and is what separated (TD) solutions live in.

In 1D the two coincide.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import MeshError, SingularSystemError
from .mesh import Axis, HyperParams, TensorMesh, nodal_patch

cubic_spline = kernels.cubic_spline
cubic_spline_deriv = kernels.cubic_spline_deriv

_COND_LIMIT = 1e14


def tensor_exponents(p: int, d: int) -> np.ndarray:
    """Exponents of the tensor monomial basis, ``(p+1)**d`` rows, lexicographic."""
    return np.array(list(itertools.product(range(p + 1), repeat=d)), dtype=np.int64).reshape(-1, d)


def _monomials(zeta, exps):
    P = np.ones((zeta.shape[0], exps.shape[0]))
    for k in range(zeta.shape[1]):
        P *= zeta[:, k : k + 1] ** exps[None, :, k]
    return P


def moment_solve(R, Q):
    """Combination matrices ``A`` and ``K`` from the moment matrices.

    ``K = (Q^T R^-1 Q)^-1 Q^T R^-1`` and ``A = R^-1 (I - Q K)``. When the
    patch has exactly as many nodes as monomials the patch functions are the
    Lagrange polynomials: ``A = 0``, ``K = Q^-1``.
    """
    ns, m = Q.shape
    if ns < m:
        raise SingularSystemError(f"patch has {ns} nodes but {m} monomials")
    if ns == m:
        cq = np.linalg.cond(Q)
        if not np.isfinite(cq) or cq > _COND_LIMIT:
            raise SingularSystemError("singular polynomial moment matrix", condition=cq)
        return np.zeros((ns, ns)), np.linalg.inv(Q)
    # null-space form of the saddle-point system [[R, Q], [Q^T, 0]]: the
    # polynomial part of R drops out of Z^T R Z, which keeps large dilations stable
    Qq, Qr = np.linalg.qr(Q, mode="complete")
    cq = np.linalg.cond(Qr[:m])
    if not np.isfinite(cq) or cq > _COND_LIMIT:
        raise SingularSystemError("singular polynomial moment matrix", condition=cq)
    Y, Z = Qq[:, :m], Qq[:, m:]
    S = Z.T @ R @ Z
    cs = np.linalg.cond(S)
    if not np.isfinite(cs) or cs > _COND_LIMIT:
        raise SingularSystemError("singular kernel moment matrix R on the polynomial null space", condition=cs)
    A = Z @ np.linalg.solve(S, Z.T)
    K = np.linalg.solve(Qr[:m], Y.T @ (np.eye(ns) - R @ A))
    return A, K


@dataclass(frozen=True)
class PatchBasis:
    """Patch functions of one node.

    Attributes
    ----------
    center : int
        Owning node.
    nodes : ndarray
        Flat ids of the patch nodes (lexicographic).
    coords : (ns, d) ndarray
    A : (ns, ns) ndarray
    K : (m, ns) ndarray
    origin, scale : (d,) ndarray
        Local polynomial frame.
    hvec : (d,) ndarray
        Element sizes used to normalize distances.
    radius : float
        Kernel support in element units (``a*s``).
    exps : (m, d) ndarray
    """

    center: int
    nodes: np.ndarray
    coords: np.ndarray
    A: np.ndarray
    K: np.ndarray
    origin: np.ndarray
    scale: np.ndarray
    hvec: np.ndarray
    radius: float
    exps: np.ndarray
    shift: int = 0

    def __call__(self, x):
        """Patch function values ``(npts, ns)`` and gradients ``(npts, ns, d)``."""
        return kernels.eval_patch_nd(
            np.atleast_2d(np.asarray(x, dtype=float)),
            self.coords,
            self.origin,
            self.scale,
            self.hvec,
            self.radius,
            self.A,
            self.K,
            self.exps,
            self.shift,
        )


def kernel_shift(hyper: HyperParams) -> int:
    """How much of the kernel's polynomial part the patch polynomials absorb (see ``shifted_kernel``)."""
    if hyper.s == 0:
        return 0
    return 2 if hyper.p >= 2 else 1


def build_patch_basis(mesh: TensorMesh, node: int, hyper: HyperParams) -> PatchBasis:
    """Build the radial patch functions of ``node``.

    Distances are measured in element units per axis so anisotropic meshes
    (e.g. space-time) get a sensible kernel; on an isotropic mesh this is
    ``|x - x_J| / (a s h)``.
    """
    d = mesh.dim
    hvec = mesh.h
    if hyper.s == 0:
        coords = mesh.node_coords([node])
        return PatchBasis(
            int(node),
            np.array([node]),
            coords,
            np.zeros((1, 1)),
            np.ones((1, 1)),
            coords[0].copy(),
            hvec.copy(),
            hvec.copy(),
            1.0,
            np.zeros((1, d), dtype=np.int64),
        )
    nodes = nodal_patch(mesh, node, hyper.s)
    coords = mesh.node_coords(nodes)
    origin = 0.5 * (coords.min(axis=0) + coords.max(axis=0))
    scale = hyper.s * hvec
    radius = hyper.a * hyper.s
    shift = kernel_shift(hyper)
    diff = (coords[:, None, :] - coords[None, :, :]) / hvec
    R, _ = kernels.shifted_kernel(np.sqrt(np.sum(diff**2, axis=2)) / radius, shift)
    exps = tensor_exponents(hyper.p, d)
    Q = _monomials((coords - origin) / scale, exps)
    A, K = moment_solve(R, Q)
    return PatchBasis(int(node), nodes, coords, A, K, origin, scale, hvec.copy(), float(radius), exps, shift)


class PatchTable:
    """Lazily built radial patch bases for every node of a mesh."""

    def __init__(self, mesh: TensorMesh, hyper: HyperParams):
        self.mesh = mesh
        self.hyper = hyper
        self._cache = {}

    def __getitem__(self, node) -> PatchBasis:
        node = int(node)
        pb = self._cache.get(node)
        if pb is None:
            pb = build_patch_basis(self.mesh, node, self.hyper)
            self._cache[node] = pb
        return pb


@dataclass(frozen=True)
class ShapeEval:
    """Shape functions of the nodes supporting one element.

    ``values`` has shape ``(npts, n_support)`` and ``grads``
    ``(npts, n_support, d)``; ``nodes`` are sorted flat ids.
    """

    element: int
    nodes: np.ndarray
    values: np.ndarray
    grads: np.ndarray


def _multilinear(mesh, element, x):
    emulti = np.unravel_index(int(element), mesh.elem_shape)
    lo = np.array([ax.lo + ax.h * emulti[d] for d, ax in enumerate(mesh.axes)])
    t = (x - lo) / mesh.h
    corners = list(itertools.product((0, 1), repeat=mesh.dim))
    N = np.ones((x.shape[0], len(corners)))
    dN = np.ones((x.shape[0], len(corners), mesh.dim))
    for c, off in enumerate(corners):
        for d in range(mesh.dim):
            f = t[:, d] if off[d] else 1.0 - t[:, d]
            df = (1.0 if off[d] else -1.0) / mesh.h[d]
            N[:, c] *= f
            for k in range(mesh.dim):
                dN[:, c, k] *= df if k == d else f
    return N, dN


def eval_shape(mesh: TensorMesh, element: int, x, table) -> ShapeEval:
    """Evaluate every shape function that is non-zero on ``element`` at ``x``.

    ``table`` is a :class:`PatchTable` (radial construction) or a
    :class:`TensorBasis` (tensor construction).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if isinstance(table, TensorBasis):
        return table.shape_on_element(element, x)
    N, dN = _multilinear(mesh, element, x)
    corners = mesh.element_nodes(element)
    patches = [table[c] for c in corners]
    support = np.unique(np.concatenate([pb.nodes for pb in patches]))
    pos = {int(n): i for i, n in enumerate(support)}
    vals = np.zeros((x.shape[0], support.size))
    grads = np.zeros((x.shape[0], support.size, mesh.dim))
    for c, pb in enumerate(patches):
        W, dW = pb(x)
        cols = np.array([pos[int(n)] for n in pb.nodes])
        vals[:, cols] += N[:, c : c + 1] * W
        grads[:, cols, :] += dN[:, c : c + 1, :] * W[:, :, None] + N[:, c, None, None] * dW
    return ShapeEval(int(element), support, vals, grads)


class Basis1D:
    """Vectorized 1D patch basis on a uniform :class:`Axis`.

    On a uniform axis every patch has the same node layout relative to its
    centre, so ``A`` and ``K`` are computed once and shared.
    """

    def __init__(self, axis: Axis, hyper: HyperParams):
        self.axis = axis
        self.hyper = hyper
        n = axis.n_nodes
        s = hyper.s
        h = axis.h
        if s == 0:
            self.ns = 1
            self.deg = 0
            self.patch_start = np.arange(n, dtype=np.int64)
            self.centers = axis.nodes.copy()
            A1 = np.zeros((1, 1))
            K1 = np.ones((1, 1))
            self.radius = h
            self.scale = h
        else:
            if n < 2 * s + 1:
                raise MeshError(f"axis has {n} nodes, fewer than the patch width {2 * s + 1}")
            self.ns = 2 * s + 1
            self.deg = hyper.p
            self.patch_start = np.clip(np.arange(n) - s, 0, n - 1 - 2 * s).astype(np.int64)
            self.centers = axis.lo + h * (self.patch_start + s)
            self.radius = hyper.a * s * h
            self.scale = s * h
            rel = np.arange(-s, s + 1, dtype=float)
            R, _ = kernels.shifted_kernel(np.abs(rel[:, None] - rel[None, :]) / (hyper.a * s), kernel_shift(hyper))
            Q = (rel / s)[:, None] ** np.arange(hyper.p + 1)[None, :]
            A1, K1 = moment_solve(R, Q)
        self.A = np.ascontiguousarray(np.broadcast_to(A1, (n,) + A1.shape))
        self.K = np.ascontiguousarray(np.broadcast_to(K1, (n,) + K1.shape))

    @property
    def n(self) -> int:
        return self.axis.n_nodes

    @property
    def nodes(self) -> np.ndarray:
        return self.axis.nodes

    @property
    def lo(self) -> float:
        return self.axis.lo

    @property
    def hi(self) -> float:
        return self.axis.hi

    @property
    def h(self) -> float:
        return self.axis.h

    def _raw(self, x):
        x = np.ascontiguousarray(np.asarray(x, dtype=float).ravel())
        tol = 1e-9 * self.h
        if x.size and (x.min() < self.lo - tol or x.max() > self.hi + tol):
            raise MeshError(f"evaluation point outside [{self.lo:g}, {self.hi:g}]")
        return kernels.eval_basis_1d(
            x,
            self.lo,
            self.h,
            self.axis.n_elem,
            self.patch_start,
            self.centers,
            self.A,
            self.K,
            self.ns,
            self.radius,
            self.scale,
            self.deg,
            kernel_shift(self.hyper),
        )

    def eval(self, x, deriv: int = 0) -> sp.csr_matrix:
        """Sparse ``(npts, n)`` matrix of shape functions (or derivatives) at ``x``."""
        cols, vals, dvals = self._raw(x)
        data = dvals if deriv else vals
        npts = cols.shape[0]
        rows = np.repeat(np.arange(npts), cols.shape[1])
        M = sp.csr_matrix((data.ravel(), (rows, cols.ravel())), shape=(npts, self.n))
        M.sum_duplicates()
        return M

    def eval_both(self, x):
        cols, vals, dvals = self._raw(x)
        npts = cols.shape[0]
        rows = np.repeat(np.arange(npts), cols.shape[1])
        shape = (npts, self.n)
        B = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=shape)
        D = sp.csr_matrix((dvals.ravel(), (rows, cols.ravel())), shape=shape)
        B.sum_duplicates()
        D.sum_duplicates()
        return B, D

    def interpolate(self, u, x, deriv: int = 0) -> np.ndarray:
        return self.eval(x, deriv) @ np.asarray(u)


def gauss_cells(lo, hi, h, nq):
    """Gauss points and weights on the uniform cells of ``[lo, hi]``."""
    n = int(round((hi - lo) / h))
    if n < 1 or abs((hi - lo) / h - n) > 1e-8 * max(n, 1):
        raise MeshError(f"range [{lo:g}, {hi:g}] is not a whole number of cells of size {h:g}")
    g, w = np.polynomial.legendre.leggauss(nq)
    left = lo + h * np.arange(n)
    x = (left[:, None] + 0.5 * h * (g[None, :] + 1.0)).ravel()
    ww = np.tile(0.5 * h * w, n)
    return x, ww


def default_nq(*bases) -> int:
    return max(b.hyper.p for b in bases) + 2


def _range(test, trial, lo, hi):
    a = max(test.lo, trial.lo)
    b = min(test.hi, trial.hi)
    if lo is not None:
        a = max(a, lo)
    if hi is not None:
        b = min(b, hi)
    if not b > a:
        raise MeshError("empty integration range")
    return a, b


def axis_operator(test: Basis1D, trial: Basis1D, dtest: int = 0, dtrial: int = 0, weight=None, lo=None, hi=None, nq=None):
    """1D Galerkin matrix ``int g(x) d^a(test_i) d^b(trial_j) dx``.

    Integration runs over the cells of whichever basis is finer, restricted
    to ``[lo, hi]``; those cells never straddle an element of the coarser
    basis in a nested hierarchy.
    """
    a, b = _range(test, trial, lo, hi)
    h = min(test.h, trial.h)
    nq = nq or default_nq(test, trial)
    x, w = gauss_cells(a, b, h, nq)
    if weight is not None:
        w = w * np.broadcast_to(np.asarray(weight(x), dtype=float), x.shape)
    Bt = test.eval(x, dtest)
    Br = trial.eval(x, dtrial)
    return (Bt.T @ sp.diags(w) @ Br).tocsr()


def axis_load(test: Basis1D, func, lo=None, hi=None, nq=None, deriv: int = 0) -> np.ndarray:
    """1D load vector ``int f(x) test_i(x) dx``."""
    a, b = _range(test, test, lo, hi)
    nq = nq or default_nq(test)
    x, w = gauss_cells(a, b, test.h, nq)
    fx = np.broadcast_to(np.asarray(func(x), dtype=float), x.shape)
    return test.eval(x, deriv).T @ (w * fx)


def apply_axes(U, mats):
    """Apply one matrix per axis to a tensor: ``U <- U x_0 M_0 x_1 M_1 ...``.

    ``mats[d]`` maps axis ``d`` (length ``n_d``) to length ``m_d``; ``None``
    leaves the axis alone.
    """
    U = np.asarray(U)
    for d, M in enumerate(mats):
        if M is None:
            continue
        U = np.moveaxis(U, d, 0)
        shp = U.shape
        U = (M @ U.reshape(shp[0], -1)).reshape((M.shape[0],) + shp[1:])
        U = np.moveaxis(U, 0, d)
    return U


class TensorBasis:
    """Product of :class:`Basis1D` along every axis of a mesh."""

    def __init__(self, mesh: TensorMesh, hyper: HyperParams):
        self.mesh = mesh
        self.hyper = hyper
        self.bases = [Basis1D(ax, hyper) for ax in mesh.axes]

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def shape(self) -> tuple:
        return self.mesh.shape

    def grid_eval(self, U, points, derivs=None):
        """Field ``U`` (nodal, any shape reshaping to the mesh) on a tensor grid.

        ``points[d]`` are the coordinates along axis ``d``; ``derivs[d]``
        selects the derivative order per axis.
        """
        derivs = derivs or [0] * self.dim
        U = np.asarray(U).reshape(self.shape)
        mats = [b.eval(p, k) for b, p, k in zip(self.bases, points, derivs)]
        return apply_axes(U, mats)

    def point_eval(self, U, X, deriv_axis=None) -> np.ndarray:
        """Field (or one partial derivative) at scattered points ``X (npts, d)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.asarray(U).reshape(self.shape)
        npts = X.shape[0]
        width = []
        locals_ = []
        starts = []
        for d, b in enumerate(self.bases):
            cols, vals, dvals = b._raw(X[:, d])
            data = dvals if deriv_axis == d else vals
            st = cols.min(axis=1)
            wd = int((cols.max(axis=1) - st).max()) + 1
            loc = np.zeros((npts, wd))
            np.add.at(loc, (np.repeat(np.arange(npts), cols.shape[1]), (cols - st[:, None]).ravel()), data.ravel())
            width.append(wd)
            locals_.append(loc)
            starts.append(st)
        out = np.zeros(npts)
        for i in range(npts):
            block = U[tuple(slice(starts[d][i], starts[d][i] + width[d]) for d in range(self.dim))]
            for d in range(self.dim):
                block = np.tensordot(locals_[d][i, : block.shape[0]], block, axes=(0, 0))
            out[i] = block
        return out

    def shape_on_element(self, element, x) -> ShapeEval:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        emulti = np.unravel_index(int(element), self.mesh.elem_shape)
        per_axis = []
        for d, b in enumerate(self.bases):
            e = emulti[d]
            xd = np.clip(x[:, d], b.lo + e * b.h, b.lo + (e + 1) * b.h)
            B, D = b.eval_both(xd)
            lo_n = min(b.patch_start[e], b.patch_start[e + 1])
            hi_n = max(b.patch_start[e], b.patch_start[e + 1]) + b.ns
            idx = np.arange(lo_n, hi_n)
            per_axis.append((idx, B[:, idx].toarray(), D[:, idx].toarray()))
        grids = np.meshgrid(*[pa[0] for pa in per_axis], indexing="ij")
        nodes = np.ravel_multi_index(tuple(g.ravel() for g in grids), self.shape)
        npts = x.shape[0]
        vals = np.ones((npts,) + tuple(len(pa[0]) for pa in per_axis))
        grads = np.ones((npts,) + vals.shape[1:] + (self.dim,))
        for d, (idx, B, D) in enumerate(per_axis):
            shp = [npts] + [1] * self.dim
            shp[d + 1] = len(idx)
            vals = vals * B.reshape(shp)
            for k in range(self.dim):
                grads[..., k] = grads[..., k] * (D if k == d else B).reshape(shp)
        order = np.argsort(nodes)
        return ShapeEval(
            int(element),
            nodes[order],
            vals.reshape(npts, -1)[:, order],
            grads.reshape(npts, -1, self.dim)[:, order, :],
        )


def interpolate(field, mesh: TensorMesh, hyper: HyperParams, x, kind: str = "tensor") -> np.ndarray:
    """Interpolated value ``sum_J N~_J(x) u_J`` at points ``x (npts, d)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    field = np.asarray(field, dtype=float).ravel()
    if field.size != mesh.n_nodes:
        raise MeshError("field length does not match the mesh")
    if kind == "tensor":
        return TensorBasis(mesh, hyper).point_eval(field, x)
    if kind != "radial":
        raise ValueError(f"unknown basis kind {kind!r}")
    table = PatchTable(mesh, hyper)
    out = np.empty(x.shape[0])
    for i, xi in enumerate(x):
        se = eval_shape(mesh, mesh.locate(xi), xi, table)
        out[i] = se.values[0] @ field[se.nodes]
    return out
