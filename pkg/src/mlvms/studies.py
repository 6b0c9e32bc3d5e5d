"""Error norms, convergence ladders and error-model fitting."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import nnls

from .assembly import quadrature_grid
from .errors import ConfigError


def _field_on_grid(basis, field, pts, derivs):
    from .td import TDSolution

    if isinstance(field, TDSolution):
        return field.grid_eval(basis, pts, derivs)
    return basis.grid_eval(np.asarray(field).reshape(basis.shape), pts, derivs)


def _inside(pts, box):
    masks = [(p > lo) & (p < hi) for p, (lo, hi) in zip(pts, box)]
    out = masks[0]
    for m in masks[1:]:
        out = np.multiply.outer(out, m)
    return out


def error_norms(levels, problem, nq=None, cmap=None, exact_zero: bool = False) -> dict:
    """Composite error norms of a multilevel (or single) field.

    ``levels`` is a list of ``(basis, field)`` pairs, coarsest first, where
    ``field`` is a nodal tensor or a :class:`TDSolution`. Each level is
    integrated over its own box minus the next finer box. With ``cmap`` the
    fields live in reference coordinates and are compared in the physical
    frame. Returns absolute and relative L2, H1-seminorm and energy norms
    (the energy norm uses ``k``; for space-time fields it is the spatial
    gradient part integrated over time).
    """
    space_dim = problem.space_dim
    acc = {"l2": 0.0, "h1": 0.0, "u_l2": 0.0, "u_h1": 0.0}
    per_level = []
    for i, (tb, field) in enumerate(levels):
        pts, wts = quadrature_grid(tb, nq=nq)
        W = wts[0]
        for w in wts[1:]:
            W = np.multiply.outer(W, w)
        if i + 1 < len(levels):
            W = W * ~_inside(pts, levels[i + 1][0].mesh.box)
        grids = np.meshgrid(*pts, indexing="ij")
        uh = _field_on_grid(tb, field, pts, None)
        duh = []
        for d in range(space_dim):
            der = [0] * tb.dim
            der[d] = 1
            duh.append(_field_on_grid(tb, field, pts, der))
        if cmap is not None:
            from .movingsource import jacobian, map_point

            sd = space_dim
            xi = np.stack([g.ravel() for g in grids[:sd]], axis=1)
            tt = grids[-1].ravel() if problem.has_time else np.zeros(xi.shape[0])
            x = map_point(cmap, xi, tt)
            jac = jacobian(cmap, xi, tt)
            W = W * jac.detJ.reshape(W.shape)
            scale = [jac.A.reshape(W.shape), jac.B.reshape(W.shape)] + [1.0] * max(0, sd - 2)
            duh = [d_ * s for d_, s in zip(duh, scale)]
            grids = [x[:, d].reshape(W.shape) for d in range(sd)] + list(grids[sd:])
        if exact_zero or problem.exact is None:
            u = np.zeros(W.shape)
            du = [np.zeros(W.shape)] * space_dim
        else:
            u = problem.exact(*grids)
            du = list(problem.grad(*grids))[:space_dim]
        l2 = float(np.sum(W * (uh - u) ** 2))
        h1 = float(sum(np.sum(W * (a - b) ** 2) for a, b in zip(duh, du)))
        acc["l2"] += l2
        acc["h1"] += h1
        acc["u_l2"] += float(np.sum(W * u**2))
        acc["u_h1"] += float(sum(np.sum(W * b**2) for b in du))
        per_level.append({"l2": math.sqrt(l2), "h1": math.sqrt(h1)})
    l2, h1 = math.sqrt(acc["l2"]), math.sqrt(acc["h1"])
    energy = math.sqrt(problem.k) * h1
    ul2, uh1 = math.sqrt(acc["u_l2"]), math.sqrt(acc["u_h1"])
    return {
        "l2": l2,
        "h1": h1,
        "energy": energy,
        "l2_rel": l2 / ul2 if ul2 > 0 else float("nan"),
        "energy_rel": h1 / uh1 if uh1 > 0 else float("nan"),
        "u_l2": ul2,
        "u_energy": math.sqrt(problem.k) * uh1,
        "per_level": per_level,
    }


def fit_slope(h, err, last: int | None = 3) -> float:
    """Least-squares slope of ``log err`` against ``log h`` over the last ``last`` points."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if last is not None:
        h, err = h[-last:], err[-last:]
    if h.size < 2:
        raise ConfigError("slope fit needs at least two points")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def plateau_flag(err, rel: float = 0.10) -> bool:
    """True when the last two errors differ by less than ``rel``."""
    if len(err) < 2:
        return False
    a, b = err[-2], err[-1]
    return abs(a - b) < rel * max(abs(a), abs(b))


@dataclass
class ConvergenceRow:
    h1: float
    h: tuple
    dofs: int
    err_l2: float
    err_energy: float
    time_s: float
    iters: int
    storage_bytes: int

    def as_dict(self) -> dict:
        return asdict(self)


CSV_COLUMNS = ("h1", "dofs", "err_l2", "err_energy", "time_s", "iters", "storage_bytes")


def converge(run, ladder, min_points: int = 3, norm: str = "energy", level: int = 0):
    """Run ``run(rung) -> ConvergenceRow`` over a refinement ladder.

    Returns ``(rows, slope)``. The slope is fitted over the last three rungs
    against ``row.h[level]`` using the energy or L2 column (``norm``);
    pick ``level`` as the level being refined when the others stay fixed.
    """
    if norm not in ("energy", "l2"):
        raise ConfigError(f"norm must be 'energy' or 'l2', got {norm!r}")
    ladder = list(ladder)
    if len(ladder) < min_points:
        raise ConfigError(f"a convergence ladder needs at least {min_points} rungs")
    rows = [run(r) for r in ladder]
    errs = [r.err_energy if norm == "energy" else r.err_l2 for r in rows]
    return rows, fit_slope([r.h[level] for r in rows], errs)


def estimate_optimal_ratio(C_c: float, C_f: float, p_c: int, p_f: int, h_c: float) -> int:
    """Coarse-to-fine size ratio balancing ``C_c h_c^p_c`` against ``C_f h_f^p_f``."""
    if min(C_c, C_f, p_c, p_f, h_c) <= 0:
        raise ConfigError("optimal-ratio inputs must be positive")
    n = (C_f / C_c) ** (1.0 / p_f) * h_c ** ((p_f - p_c) / p_f)
    # guard against round-off just above an integer
    return max(1, int(math.ceil(n - 1e-12 * max(1.0, n))))


@dataclass
class CoefficientFit:
    C_c: float
    C_f: float
    residual: float


def fit_error_coefficients(rows, p_c: int, p_f: int) -> CoefficientFit:
    """Non-negative least squares for ``err ~ C_c h_c^p_c + C_f h_f^p_f``.

    ``rows`` are ``(h_c, h_f, err)`` triples. Rows are weighted by ``1/err``
    so the fit is relative. Raises if all rows share one size ratio.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 4 or rows.shape[1] != 3:
        raise ConfigError("need at least four (h_c, h_f, err) rows")
    hc, hf, err = rows.T
    ratios = hc / hf
    if np.ptp(ratios) <= 1e-9 * np.max(ratios):
        raise ConfigError("all rows share one size ratio; the two coefficients are not identifiable")
    M = np.stack([hc**p_c, hf**p_f], axis=1)
    if np.linalg.matrix_rank(M / np.linalg.norm(M, axis=0), tol=1e-10) < 2:
        raise ConfigError("rows do not separate the coarse and fine terms (rank deficient)")
    w = 1.0 / err
    coef, res = nnls(M * w[:, None], err * w)
    return CoefficientFit(float(coef[0]), float(coef[1]), float(res))


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        return False
