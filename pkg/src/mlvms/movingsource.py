"""Reference frames that travel with a moving heat source.

Along each moving axis the physical interval is split by a window
``[x_m(t), x_M(t)]`` into three branches, each mapped linearly onto a fixed
reference branch. Inside the window the map is a rigid translation, so a
source that rides with the window is steady in reference coordinates.

The inverse Jacobian of the map has the structure

    d/dx = A(t) d/dxi,   d/dy = B(t) d/deta,   d/dt = C d/dxi + D d/deta + d/dtau

with ``detJ = 1/(A B)``; every coefficient in the transformed weak form is a
product of one function per axis inside a branch, which keeps the form
separated.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .assembly import AxisFactor, FormTerm, SeparatedForm
from .errors import ConfigError, MeshError


@dataclass(frozen=True)
class AxisWindow:
    """Moving window on one spatial axis.

    ``outer`` is the axis extent (same in both frames), ``ref`` the fixed
    reference window and ``start`` the physical window at ``t0``; the
    physical window moves at ``velocity``.
    """

    axis: int
    outer: tuple
    ref: tuple
    start: tuple
    velocity: float = 0.0
    t0: float = 0.0

    def __post_init__(self):
        lo, hi = self.outer
        if not (lo < self.ref[0] < self.ref[1] < hi):
            raise MeshError(f"reference window {self.ref} must lie strictly inside {self.outer}")
        if not self.start[1] > self.start[0]:
            raise MeshError("degenerate moving window (zero width)")

    def edges(self, t):
        """Physical window ``(x_m(t), x_M(t))``."""
        shift = self.velocity * (np.asarray(t, dtype=float) - self.t0)
        return self.start[0] + shift, self.start[1] + shift

    def ref_edges(self):
        return (self.outer[0], self.ref[0], self.ref[1], self.outer[1])

    def phys_edges(self, t):
        m, M = self.edges(t)
        t = np.asarray(t, dtype=float)
        return (np.full(t.shape, self.outer[0]), m, M, np.full(t.shape, self.outer[1]))

    def edge_speeds(self):
        return (0.0, self.velocity, self.velocity, 0.0)


@dataclass(frozen=True)
class MapJacobian:
    """Inverse-Jacobian coefficients at a set of points."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    detJ: np.ndarray


class CoordinateMap:
    """Branchwise-linear map from reference ``(xi, eta, z, tau)`` to physical ``(x, y, z, t)``.

    Parameters
    ----------
    windows : list of AxisWindow
        At most one per spatial axis; only axes 0 and 1 may move.
    space_dim : int
    t_span : tuple
        Interval over which the window must stay inside the outer box.
    margin : float
        Minimum gap kept between the moving window and the outer box.
    """

    def __init__(self, windows, space_dim: int, t_span, margin: float = 0.0):
        self.windows = {w.axis: w for w in windows}
        if len(self.windows) != len(list(windows)):
            raise ConfigError("one window per axis")
        if any(a not in (0, 1) or a >= space_dim for a in self.windows):
            raise ConfigError("windows may only move along the first two spatial axes")
        self.space_dim = int(space_dim)
        self.t_span = tuple(map(float, t_span))
        self.margin = float(margin)
        for w in self.windows.values():
            for t in self.t_span:
                self._check_inside(w, t)

    def _check_inside(self, w, t):
        m, M = w.edges(t)
        if np.any(m - self.margin < w.outer[0] - 1e-12) or np.any(M + self.margin > w.outer[1] + 1e-12):
            raise MeshError(f"moving window on axis {w.axis} leaves the domain at t={float(np.max(t)):g}")

    @property
    def is_identity(self) -> bool:
        return all(w.velocity == 0.0 and tuple(w.start) == tuple(w.ref) for w in self.windows.values())

    def _branch_ref(self, w, xi):
        e = w.ref_edges()
        return np.clip(np.searchsorted(np.asarray(e[1:3]), xi, side="right"), 0, 2)

    def _axis_forward(self, w, xi, t):
        xi = np.asarray(xi, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), xi.shape)
        self._check_inside(w, t)
        b = self._branch_ref(w, xi)
        re = np.asarray(w.ref_edges())
        pe = np.stack(np.broadcast_arrays(*w.phys_edges(t)))
        xa_ref, xb_ref = re[b], re[b + 1]
        xa = np.take_along_axis(pe, b[None], 0)[0]
        xb = np.take_along_axis(pe, (b + 1)[None], 0)[0]
        L = xb_ref - xa_ref
        return xb * (xi - xa_ref) / L + xa * (xb_ref - xi) / L

    def _axis_inverse(self, w, x, t):
        x = np.asarray(x, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
        self._check_inside(w, t)
        m, M = w.edges(t)
        b = np.where(x < m, 0, np.where(x < M, 1, 2))
        re = np.asarray(w.ref_edges())
        pe = np.stack(np.broadcast_arrays(*w.phys_edges(t)))
        xa = np.take_along_axis(pe, b[None], 0)[0]
        xb = np.take_along_axis(pe, (b + 1)[None], 0)[0]
        return re[b] + (x - xa) * (re[b + 1] - re[b]) / (xb - xa)

    def _axis_coeffs(self, w, xi, t):
        """``A`` and ``C`` of one moving axis."""
        xi = np.asarray(xi, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), xi.shape)
        b = self._branch_ref(w, xi)
        re = np.asarray(w.ref_edges())
        pe = np.stack(np.broadcast_arrays(*w.phys_edges(t)))
        sp_ = np.asarray(w.edge_speeds())
        xa = np.take_along_axis(pe, b[None], 0)[0]
        xb = np.take_along_axis(pe, (b + 1)[None], 0)[0]
        ra, rb = re[b], re[b + 1]
        va, vb = sp_[b], sp_[b + 1]
        width = xb - xa
        if np.any(width <= 0):
            raise MeshError("degenerate branch (zero physical width)")
        A = (rb - ra) / width
        C = -(vb * (xi - ra) + va * (rb - xi)) / width
        return A, C


def map_point(cmap: CoordinateMap, xi, t):
    """Physical coordinates of reference points ``xi`` (``(npts, space_dim)``) at times ``t``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    out = xi.copy()
    for a, w in cmap.windows.items():
        out[:, a] = cmap._axis_forward(w, xi[:, a], t)
    return out


def inverse_map(cmap: CoordinateMap, x, t):
    """Reference coordinates of physical points ``x`` at times ``t``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = x.copy()
    for a, w in cmap.windows.items():
        out[:, a] = cmap._axis_inverse(w, x[:, a], t)
    return out


def jacobian(cmap: CoordinateMap, xi, t) -> MapJacobian:
    """Inverse-Jacobian coefficients at reference points ``xi`` and times ``t``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    n = xi.shape[0]
    coeff = {}
    for a in (0, 1):
        if a in cmap.windows:
            coeff[a] = cmap._axis_coeffs(cmap.windows[a], xi[:, a], t)
        else:
            coeff[a] = (np.ones(n), np.zeros(n))
    A, C = coeff[0]
    B, D = coeff[1]
    return MapJacobian(A, B, C, D, 1.0 / (A * B))


# ---------------------------------------------------------------------------
# separated coefficients


@dataclass(frozen=True)
class Branch:
    """Per-axis data of one branch of a moving axis.

    ``inv_A(t) = (x_b - x_a)/(xi_b - xi_a)`` and ``c_detj(xi) = C/A``, the
    latter independent of time for constant window speed.
    """

    span: tuple
    width0: float
    dwidth: float
    ref_width: float
    va: float
    vb: float
    t0: float

    def inv_A(self, t):
        return (self.width0 + self.dwidth * (np.asarray(t, dtype=float) - self.t0)) / self.ref_width

    def A(self, t):
        return 1.0 / self.inv_A(t)

    def c_detj(self, xi):
        xi = np.asarray(xi, dtype=float)
        a, b = self.span
        return -(self.vb * (xi - a) + self.va * (b - xi)) / self.ref_width

    @property
    def steady(self) -> bool:
        return self.dwidth == 0.0


def transformed_coefficients(cmap: CoordinateMap):
    """Branch data per moving axis: ``{axis: [Branch, Branch, Branch]}``."""
    out = {}
    for a, w in cmap.windows.items():
        re = w.ref_edges()
        pe = w.phys_edges(w.t0)
        sp_ = w.edge_speeds()
        out[a] = [
            Branch((re[i], re[i + 1]), float(pe[i + 1] - pe[i]), sp_[i + 1] - sp_[i], re[i + 1] - re[i], sp_[i], sp_[i + 1], w.t0)
            for i in range(3)
        ]
    return out


def _product(funcs):
    funcs = [f for f in funcs if f is not None]
    if not funcs:
        return None

    def g(t):
        out = 1.0
        for f in funcs:
            out = out * f(t)
        return out

    return g


def transformed_form(cmap: CoordinateMap, space_dim: int, rho_cp: float = 1.0, k: float = 1.0, time: bool = True) -> SeparatedForm:
    """Space-time form ``rho_cp w u_t + k grad w . grad u`` pulled back to the reference frame.

    Time is the last axis. Branch-constant time factors are folded into the
    term coefficient so rigid-translation regions produce unweighted terms.
    With ``time=False`` only the diffusion part is returned (static maps).
    """
    if space_dim != cmap.space_dim:
        raise ConfigError("map and form disagree on the spatial dimension")
    coeffs = transformed_coefficients(cmap)
    if not time and not all(b.steady and b.va == 0.0 and b.vb == 0.0 for bs in coeffs.values() for b in bs):
        raise ConfigError("a steady form needs a static map")
    moving = sorted(coeffs)
    terms = []
    for combo in itertools.product(*[coeffs[a] for a in moving]):
        br = dict(zip(moving, combo))

        def time_factor(use_A=None, skip=None, br=br):
            """Constant part and time weight of ``A_use * prod_{b != use, skip} inv_A_b``."""
            const, funcs = 1.0, []
            for a, b in br.items():
                if a == skip:
                    continue
                f = b.A if a == use_A else b.inv_A
                if b.steady:
                    const *= float(f(b.t0))
                else:
                    funcs.append(f)
            return const, _product(funcs)

        def spatial(d_x=None, c_axis=None, br=br):
            facs = []
            for d in range(space_dim):
                span = br[d].span if d in br else None
                if d == c_axis:
                    facs.append(AxisFactor(0, 1, br[d].c_detj, span))
                elif d == d_x:
                    facs.append(AxisFactor(1, 1, None, span))
                else:
                    facs.append(AxisFactor(0, 0, None, span))
            return facs

        if time:
            c, g = time_factor()
            terms.append(FormTerm(rho_cp * c, spatial() + [AxisFactor(0, 1, g)]))
            for a, b in br.items():
                if b.va == 0.0 and b.vb == 0.0:
                    continue
                c, g = time_factor(skip=a)
                terms.append(FormTerm(rho_cp * c, spatial(c_axis=a) + [AxisFactor(0, 0, g)]))
        for d in range(space_dim):
            # A_d^2 detJ = A_d prod_{b != d} inv_A_b
            c, g = time_factor(use_A=d)
            terms.append(FormTerm(k * c, spatial(d_x=d) + ([AxisFactor(0, 0, g)] if time else [])))
    return SeparatedForm(terms)


def track_map(box, x0: float, velocity: float, half_width: float, t_span, axis: int = 0, margin: float = 0.0) -> CoordinateMap:
    """Three-branch map that pins a spot travelling from ``x0`` at ``xi = 0``.

    The window ``[x_c(t) - half_width, x_c(t) + half_width]`` maps to
    ``[-half_width, half_width]`` by a pure translation.
    """
    space_dim = len(box)
    w = AxisWindow(axis, tuple(box[axis]), (-half_width, half_width), (x0 - half_width, x0 + half_width), velocity, float(t_span[0]))
    return CoordinateMap([w], space_dim, t_span, margin)


def static_map(box, ref_window, phys_window, axis: int = 0) -> CoordinateMap:
    """Time-independent non-identity map (v = 0) for consistency checks."""
    w = AxisWindow(axis, tuple(box[axis]), tuple(ref_window), tuple(phys_window), 0.0, 0.0)
    return CoordinateMap([w], len(box), (0.0, 0.0))
