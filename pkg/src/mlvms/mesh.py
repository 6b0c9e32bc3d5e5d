"""Uniform tensor-product meshes and nested level hierarchies.

Nodes are numbered lexicographically with the first axis slowest (C order),
so a nodal array reshaped to ``mesh.shape`` indexes as ``U[i0, i1, ...]``.
When a time axis is present it is always the last axis.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import MeshError

_ALIGN_TOL = 1e-9


def _as_count(length, h, what):
    n = length / h
    k = int(round(n))
    if k < 1 or abs(n - k) > _ALIGN_TOL * max(1.0, abs(n)):
        raise MeshError(f"{what}: extent {length!r} is not an integer multiple of h={h!r}")
    return k


@dataclass(frozen=True)
class Axis:
    """One uniform axis ``[lo, hi]`` split into ``n_elem`` elements."""

    lo: float
    hi: float
    n_elem: int

    def __post_init__(self):
        if not self.hi > self.lo:
            raise MeshError(f"empty axis [{self.lo}, {self.hi}]")
        if int(self.n_elem) != self.n_elem or self.n_elem < 1:
            raise MeshError(f"axis needs a positive element count, got {self.n_elem!r}")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / self.n_elem

    @property
    def n_nodes(self) -> int:
        return self.n_elem + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.lo + self.h * np.arange(self.n_nodes)

    def node_index(self, x) -> np.ndarray:
        """Index of the node at coordinate ``x``; raises if ``x`` is off-grid."""
        x = np.asarray(x, dtype=float)
        k = np.rint((x - self.lo) / self.h).astype(np.int64)
        if np.any(k < 0) or np.any(k > self.n_elem):
            raise MeshError("coordinate outside axis")
        if np.any(np.abs(self.lo + k * self.h - x) > _ALIGN_TOL * max(1.0, self.h)):
            raise MeshError("coordinate does not coincide with a node")
        return k

    def locate(self, x) -> np.ndarray:
        """Element index containing each coordinate (right end folds into the last element)."""
        x = np.asarray(x, dtype=float)
        e = np.floor((x - self.lo) / self.h).astype(np.int64)
        return np.clip(e, 0, self.n_elem - 1)


@dataclass(frozen=True)
class HyperParams:
    """Convolution-patch hyperparameters.

    ``s`` is the patch size in element layers, ``p`` the reproduced
    polynomial degree per axis and ``a`` the dilation of the radial kernel
    (support radius ``a*s*h``). ``s = 0`` with ``p = 1`` is plain linear FE.

    With ``a >= 8`` every in-patch distance falls on the inner branch of the
    cubic kernel for ``d <= 3``; the basis is then independent of ``a``.
    """

    a: float = 8.0
    s: int = 3
    p: int = 3

    def __post_init__(self):
        if self.p < 1 or int(self.p) != self.p:
            raise MeshError(f"p must be a positive integer, got {self.p!r}")
        if self.s < 0 or int(self.s) != self.s:
            raise MeshError(f"s must be a non-negative integer, got {self.s!r}")
        if not self.a > 0:
            raise MeshError(f"dilation a must be positive, got {self.a!r}")
        if self.s == 0:
            if self.p != 1:
                raise MeshError("s = 0 is only meaningful with p = 1 (linear FE)")
        elif 2 * self.s < self.p:
            raise MeshError(f"patch too small: s={self.s} cannot reproduce degree p={self.p} (need s >= p/2)")

    @property
    def patch_width(self) -> int:
        return 2 * self.s + 1

    @property
    def poly_degree(self) -> int:
        """Degree of the patch polynomial basis (0 for the linear-FE case)."""
        return 0 if self.s == 0 else self.p


class TensorMesh:
    """Uniform structured mesh on a box, one :class:`Axis` per dimension."""

    def __init__(self, axes):
        self.axes = tuple(axes)
        if not self.axes:
            raise MeshError("mesh needs at least one axis")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(ax.n_nodes for ax in self.axes)

    @property
    def elem_shape(self) -> tuple:
        return tuple(ax.n_elem for ax in self.axes)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.elem_shape))

    @property
    def h(self) -> np.ndarray:
        return np.array([ax.h for ax in self.axes])

    @property
    def box(self) -> tuple:
        return tuple((ax.lo, ax.hi) for ax in self.axes)

    def axis_nodes(self, d: int) -> np.ndarray:
        return self.axes[d].nodes

    def node_coords(self, nodes=None) -> np.ndarray:
        """Coordinates ``(n, dim)`` of the given flat node ids (all nodes by default)."""
        if nodes is None:
            grids = np.meshgrid(*[ax.nodes for ax in self.axes], indexing="ij")
            return np.stack([g.ravel() for g in grids], axis=1)
        multi = np.unravel_index(np.asarray(nodes), self.shape)
        return np.stack([self.axes[d].lo + self.axes[d].h * multi[d] for d in range(self.dim)], axis=-1)

    def flat_index(self, multi) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(m) for m in multi), self.shape)

    def multi_index(self, flat) -> tuple:
        return np.unravel_index(np.asarray(flat), self.shape)

    def element_nodes(self, element: int) -> np.ndarray:
        """Flat ids of the ``2**dim`` corner nodes of an element, lexicographic."""
        emulti = np.unravel_index(int(element), self.elem_shape)
        corners = [
            tuple(emulti[d] + off[d] for d in range(self.dim))
            for off in itertools.product((0, 1), repeat=self.dim)
        ]
        return np.array([np.ravel_multi_index(c, self.shape) for c in corners])

    def locate(self, x) -> int:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        for d, ax in enumerate(self.axes):
            if x[d] < ax.lo - _ALIGN_TOL * ax.h or x[d] > ax.hi + _ALIGN_TOL * ax.h:
                raise MeshError(f"point {x.tolist()} is outside the mesh")
        e = tuple(int(ax.locate(x[d])) for d, ax in enumerate(self.axes))
        return int(np.ravel_multi_index(e, self.elem_shape))

    def boundary_mask(self, faces=None) -> np.ndarray:
        """Boolean nodal mask of the selected faces.

        ``faces`` is an iterable of ``(axis, side)`` with side 0 (low) or
        1 (high); ``None`` selects every face.
        """
        if faces is None:
            faces = [(d, s) for d in range(self.dim) for s in (0, 1)]
        mask = np.zeros(self.shape, dtype=bool)
        for d, side in faces:
            idx = [slice(None)] * self.dim
            idx[d] = 0 if side == 0 else -1
            mask[tuple(idx)] = True
        return mask.ravel()

    def __repr__(self):
        dims = " x ".join(f"[{ax.lo:g},{ax.hi:g}]/{ax.n_elem}" for ax in self.axes)
        return f"TensorMesh({dims})"


def build_tensor_mesh(box, h) -> TensorMesh:
    """Build a uniform mesh on ``box`` with element sizes ``h`` (scalar or per axis)."""
    box = [tuple(map(float, b)) for b in box]
    h = np.broadcast_to(np.asarray(h, dtype=float), (len(box),))
    axes = []
    for d, ((lo, hi), hd) in enumerate(zip(box, h)):
        if not hd > 0:
            raise MeshError(f"axis {d}: element size must be positive")
        axes.append(Axis(lo, hi, _as_count(hi - lo, hd, f"axis {d}")))
    return TensorMesh(axes)


def nodal_patch(mesh: TensorMesh, node: int, s: int) -> np.ndarray:
    """Flat ids of the ``(2s+1)**d`` patch around ``node``, lexicographic.

    Near the boundary the block is shifted inward so that it always has the
    full width.
    """
    multi = np.unravel_index(int(node), mesh.shape)
    ranges = []
    for d, ax in enumerate(mesh.axes):
        if ax.n_nodes < 2 * s + 1:
            raise MeshError(f"axis {d} has {ax.n_nodes} nodes, fewer than the patch width {2 * s + 1}")
        start = min(max(multi[d] - s, 0), ax.n_nodes - 1 - 2 * s)
        ranges.append(np.arange(start, start + 2 * s + 1))
    grids = np.meshgrid(*ranges, indexing="ij")
    return np.ravel_multi_index(tuple(g.ravel() for g in grids), mesh.shape)


@dataclass(frozen=True)
class LevelSpec:
    """One refinement level.

    ``box`` and ``h`` cover the spatial axes. A time axis is appended when
    ``dt`` is given, spanning ``t_span``.
    """

    box: tuple
    h: tuple
    hyper: HyperParams = field(default_factory=HyperParams)
    dt: float | None = None
    t_span: tuple | None = None
    modes: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "box", tuple(tuple(map(float, b)) for b in self.box))
        hh = np.broadcast_to(np.asarray(self.h, dtype=float), (len(self.box),))
        object.__setattr__(self, "h", tuple(float(v) for v in hh))
        if self.dt is not None and self.t_span is None:
            raise MeshError("a level with dt needs t_span")
        if self.modes is not None and self.modes < 1:
            raise MeshError("mode count must be positive")

    @property
    def has_time(self) -> bool:
        return self.dt is not None

    @property
    def full_box(self) -> tuple:
        return self.box + ((tuple(map(float, self.t_span)),) if self.has_time else ())

    @property
    def full_h(self) -> tuple:
        return self.h + ((float(self.dt),) if self.has_time else ())

    def mesh(self) -> TensorMesh:
        return build_tensor_mesh(self.full_box, self.full_h)


class MultilevelMesh:
    """Validated stack of nested levels, coarsest first.

    Attributes
    ----------
    specs, meshes : list
    ratios : list of tuple
        ``ratios[l]`` is the per-axis refinement from level ``l-1`` to ``l``
        (``ratios[0]`` is all ones).
    face_kind : list
        ``face_kind[l][d] = (low, high)`` with entries ``"outer"`` when the
        face lies on the global boundary and ``"interface"`` otherwise.
    """

    def __init__(self, specs, meshes, ratios, face_kind):
        self.specs = list(specs)
        self.meshes = list(meshes)
        self.ratios = list(ratios)
        self.face_kind = list(face_kind)

    @property
    def n_levels(self) -> int:
        return len(self.meshes)

    @property
    def dim(self) -> int:
        return self.meshes[0].dim

    @property
    def has_time(self) -> bool:
        return self.specs[0].has_time

    def box(self, level: int) -> tuple:
        return self.meshes[level].box

    def interface_faces(self, level: int) -> list:
        return [
            (d, s)
            for d, kinds in enumerate(self.face_kind[level])
            for s in (0, 1)
            if kinds[s] == "interface"
        ]

    def interface_nodes(self, level: int) -> np.ndarray:
        """Flat ids of level nodes on interface faces (outer faces excluded)."""
        faces = self.interface_faces(level)
        if not faces:
            return np.zeros(0, dtype=np.int64)
        mesh = self.meshes[level]
        mask = mesh.boundary_mask(faces)
        outer = [(d, s) for d, k in enumerate(self.face_kind[level]) for s in (0, 1) if k[s] == "outer"]
        if outer:
            mask &= ~mesh.boundary_mask(outer)
        return np.flatnonzero(mask)


def build_hierarchy(levels) -> MultilevelMesh:
    """Check nesting/alignment of ``levels`` and build their meshes.

    Raises
    ------
    MeshError
        If a level is not contained in its parent, its faces are not on
        parent nodes, or the element size ratio is not an integer.
    """
    specs = list(levels)
    if not specs:
        raise MeshError("hierarchy needs at least one level")
    if len({s.has_time for s in specs}) != 1:
        raise MeshError("either all levels carry a time axis or none does")
    if len({len(s.box) for s in specs}) != 1:
        raise MeshError("levels differ in spatial dimension")
    meshes = [s.mesh() for s in specs]
    outer = meshes[0].box
    ratios = [tuple(1 for _ in outer)]
    face_kind = [tuple(("outer", "outer") for _ in outer)]
    for l in range(1, len(specs)):
        parent, child = meshes[l - 1], meshes[l]
        ratio = []
        kinds = []
        for d, (pax, cax) in enumerate(zip(parent.axes, child.axes)):
            tol = _ALIGN_TOL * max(1.0, pax.h)
            if cax.lo < pax.lo - tol or cax.hi > pax.hi + tol:
                raise MeshError(f"level {l + 1} axis {d} leaves its parent box")
            for x in (cax.lo, cax.hi):
                k = (x - pax.lo) / pax.h
                if abs(k - round(k)) > _ALIGN_TOL * max(1.0, abs(k)):
                    raise MeshError(f"level {l + 1} axis {d}: face {x:g} is not on a level-{l} node")
            r = pax.h / cax.h
            if abs(r - round(r)) > 1e-8 * r or round(r) < 1:
                raise MeshError(f"level {l + 1} axis {d}: h ratio {r:g} is not an integer")
            ratio.append(int(round(r)))
            glo, ghi = outer[d]
            kinds.append(
                (
                    "outer" if abs(cax.lo - glo) <= tol else "interface",
                    "outer" if abs(cax.hi - ghi) <= tol else "interface",
                )
            )
        if specs[l].has_time:
            t = len(outer) - 1
            if kinds[t] != ("outer", "outer"):
                raise MeshError("every level must span the full time interval")
        ratios.append(tuple(ratio))
        face_kind.append(tuple(kinds))
    return MultilevelMesh(specs, meshes, ratios, face_kind)
