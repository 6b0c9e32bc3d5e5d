"""Tensor-decomposition (CP) solutions over separated weak forms.

A level solution is ``u = sum_q prod_d N~_d u_d^(q)``. The factors are found
by block alternating least squares on the Galerkin system: for every axis,
all ``Q`` modes along that axis are solved together (a system of size
``n_d * Q``) with the other axes frozen. For a symmetric positive form each
block solve minimizes the energy functional, so sweeps never increase it.

Operators and loads arrive pre-separated as ``[(coef, [A_0, A_1, ...])]``
and ``[(coef, [b_0, b_1, ...])]``; see :mod:`mlvms.assembly`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import LevelOperator, free_masks, separated_load
from .chidenn import TensorBasis
from .errors import ConfigError, ConvergenceError, SingularSystemError, StagnationError

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 300
PLATEAU_SWEEPS = 5


@dataclass
class ModeReport:
    sweeps: int
    converged: bool
    history: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    shifted: int = 0


@dataclass
class TDSolution:
    """Separated field on one level.

    ``factors[d]`` has shape ``(n_d, Q)``. The first ``n_fixed`` columns are
    modes inherited from the coarser level (held fixed during the solve).
    """

    factors: list
    n_fixed: int = 0
    level: int = 0
    report: ModeReport | None = None

    @property
    def Q(self) -> int:
        return self.factors[0].shape[1]

    @property
    def dim(self) -> int:
        return len(self.factors)

    @property
    def shape(self) -> tuple:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def dofs(self) -> int:
        return self.Q * sum(self.shape)

    @property
    def storage_bytes(self) -> int:
        return int(sum(f.nbytes for f in self.factors))

    def modes(self):
        """Per-mode list of per-axis vectors."""
        return [[f[:, q] for f in self.factors] for q in range(self.Q)]

    def full(self) -> np.ndarray:
        """Dense nodal tensor (only for moderate sizes)."""
        return cp_full(self.factors)

    def grid_eval(self, tb: TensorBasis, points, derivs=None) -> np.ndarray:
        derivs = derivs or [0] * self.dim
        vals = [b.eval(p, k) @ f for b, p, k, f in zip(tb.bases, points, derivs, self.factors)]
        return cp_full(vals)


def cp_full(factors) -> np.ndarray:
    """``sum_q outer(f_0[:, q], f_1[:, q], ...)``."""
    letters = "abcdefghij"[: len(factors)]
    spec = ",".join(f"{c}z" for c in letters) + "->" + letters
    return np.einsum(spec, *factors, optimize=True)


def td_eval(solution: TDSolution, tb: TensorBasis, X) -> np.ndarray:
    """Value of a separated field at scattered points ``X (npts, d)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.ones((X.shape[0], solution.Q))
    for d, (b, f) in enumerate(zip(tb.bases, solution.factors)):
        out *= b.eval(X[:, d]) @ f
    return out.sum(axis=1)


def cp_inner(F, G, mats=None) -> float:
    """Inner product of two CP tensors, optionally weighted by per-axis matrices."""
    M = np.ones((F[0].shape[1], G[0].shape[1]))
    for d in range(len(F)):
        Gd = G[d] if mats is None or mats[d] is None else mats[d] @ G[d]
        M *= F[d].T @ Gd
    return float(M.sum())


def cp_norm(F, mats=None) -> float:
    return np.sqrt(max(cp_inner(F, F, mats), 0.0))


def cp_diff_norm(F, G, mats=None) -> float:
    both = [np.hstack([f, -g if d == 0 else g]) for d, (f, g) in enumerate(zip(F, G))]
    return cp_norm(both, mats)


def form_energy(terms, F) -> float:
    """``a(u, u)`` for a CP field ``F`` and separated operator ``terms``."""
    total = 0.0
    for c, mats in terms:
        M = np.ones((F[0].shape[1],) * 2)
        for d, A in enumerate(mats):
            M *= F[d].T @ (A @ F[d])
        total += c * M.sum()
    return float(total)


def load_value(loads, F) -> float:
    total = 0.0
    for c, vecs in loads:
        r = np.ones(F[0].shape[1])
        for d, b in enumerate(vecs):
            r *= F[d].T @ b
        total += c * r.sum()
    return float(total)


class _Loads:
    """Separated right-hand side stacked per axis for fast contractions."""

    def __init__(self, loads, dim):
        self.coef = np.array([c for c, _ in loads], dtype=float)
        self.B = [np.stack([np.asarray(v[d], dtype=float) for _, v in loads], axis=1) for d in range(dim)]


def _fixed_loads(terms, fixed):
    """``-a(., fixed)`` as separated load terms."""
    out = []
    if fixed is None or fixed[0].shape[1] == 0:
        return out
    for c, mats in terms:
        AF = [A @ f for A, f in zip(mats, fixed)]
        for q in range(fixed[0].shape[1]):
            out.append((-c, [af[:, q] for af in AF]))
    return out


def _axis_system(terms, U, d, Q):
    blocks = None
    for c, mats in terms:
        C = np.full((Q, Q), c)
        for e, A in enumerate(mats):
            if e != d:
                C = C * (U[e].T @ (A @ U[e]))
        blk = sp.kron(sp.csr_matrix(C), mats[d], format="csr")
        blocks = blk if blocks is None else blocks + blk
    return blocks.tocsc()


def _solve_block(S, rhs):
    """Solve an axis system, retrying with a Tikhonov shift if singular."""
    n = S.shape[0]
    dense = S.toarray()
    shifted = 0
    for attempt in range(2):
        try:
            with np.errstate(all="ignore"):
                lu, piv = sla.lu_factor(dense, check_finite=True)
            diag = np.abs(np.diag(lu))
            if diag.min() <= 1e-14 * max(diag.max(), 1e-300):
                raise sla.LinAlgError("singular")
            x = sla.lu_solve((lu, piv), rhs)
            if np.all(np.isfinite(x)):
                return x, shifted
        except (sla.LinAlgError, ValueError):
            pass
        shift = 1e-12 * abs(np.trace(dense)) / n
        if shift == 0.0:
            shift = 1e-12
        dense = dense + shift * np.eye(n)
        shifted = 1
    raise SingularSystemError("per-axis TD system is singular even after a Tikhonov shift")


def als_solve(terms, loads, shape, dirichlet_faces, Q, fixed=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, seed=0, init=None, stagnation="raise"):
    """Block-ALS for the free modes of a separated Galerkin problem.

    Parameters
    ----------
    terms : list
        Separated operator ``[(coef, [A_d])]`` (unconstrained matrices).
    loads : list
        Separated load ``[(coef, [b_d])]``.
    shape : tuple
        Nodes per axis.
    dirichlet_faces : list
        ``(axis, side)`` faces where free modes vanish.
    Q : int
        Total mode count including the fixed ones.
    fixed : list of arrays, optional
        Per-axis ``(n_d, Q0)`` modes held fixed (lift of boundary data).
    init : list of arrays, optional
        Initial free factors ``(n_d, Q - Q0)``; random otherwise.

    Returns
    -------
    TDSolution
    """
    dim = len(shape)
    Q0 = 0 if fixed is None else fixed[0].shape[1]
    Qf = Q - Q0
    if Qf < 1:
        raise ConfigError(f"mode count Q={Q} leaves no free modes after {Q0} inherited ones")
    free = free_masks(shape, dirichlet_faces)
    rng = np.random.default_rng(seed)
    if init is not None:
        U = [np.array(u, dtype=float, copy=True) for u in init]
        if any(u.shape != (n, Qf) for u, n in zip(U, shape)):
            raise ConfigError("initial factors do not match the mode count")
    else:
        U = [rng.uniform(-1.0, 1.0, size=(n, Qf)) for n in shape]
    for d in range(dim):
        U[d][~free[d], :] = 0.0
        nrm = np.linalg.norm(U[d], axis=0)
        nrm[nrm == 0] = 1.0
        U[d] /= nrm
    all_loads = list(loads) + _fixed_loads(terms, fixed)
    L = _Loads(all_loads, dim) if all_loads else None
    report = ModeReport(0, False)
    symmetric = _is_symmetric_form(terms)
    for sweep in range(1, max_iter + 1):
        old = [u.copy() for u in U]
        for d in range(dim):
            S = _axis_system(terms, U, d, Qf)
            if L is not None:
                H = np.ones((Qf, L.coef.size)) * L.coef[None, :]
                for e in range(dim):
                    if e != d:
                        H = H * (U[e].T @ L.B[e])
                rhs = (L.B[d] @ H.T).T.ravel()
            else:
                rhs = np.zeros(shape[d] * Qf)
            keep = np.tile(free[d], Qf)
            idx = np.flatnonzero(keep)
            x, shifted = _solve_block(S[idx][:, idx], rhs[idx])
            report.shifted += shifted
            full = np.zeros(shape[d] * Qf)
            full[idx] = x
            U[d] = full.reshape(Qf, shape[d]).T
            lam = np.linalg.norm(U[d], axis=0)
            nz = lam > 0
            U[d][:, nz] /= lam[nz]
            nxt = (d + 1) % dim
            U[nxt] = U[nxt] * np.where(nz, lam, 1.0)[None, :]
        scale = cp_norm(U)
        change = cp_diff_norm(U, old) / max(scale, 1e-300)
        report.history.append(change)
        if symmetric:
            report.energy.append(0.5 * form_energy(terms, U) - (load_value(all_loads, U) if all_loads else 0.0))
        report.sweeps = sweep
        if change < tol:
            report.converged = True
            break
        h = report.history
        if stagnation != "ignore" and len(h) > 2 * PLATEAU_SWEEPS and min(h[-PLATEAU_SWEEPS:]) >= 0.99 * min(h[:-PLATEAU_SWEEPS]):
            if stagnation == "raise":
                raise StagnationError(f"TD sweeps stalled at relative change {change:.2e}", history=h)
            break
    factors = U if fixed is None else [np.hstack([f, u]) for f, u in zip(fixed, U)]
    return TDSolution(factors, Q0, report=report)


def _is_symmetric_form(terms) -> bool:
    for _, mats in terms:
        for A in mats:
            D = A - A.T
            if D.nnz and abs(D).max() > 1e-12 * abs(A).max():
                return False
    return True


def pgd_solve(terms, loads, shape, dirichlet_faces, max_modes, fixed=None, mode_tol=1e-6, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, seed=0):
    """Greedy enrichment: add one rank-1 mode at a time with earlier modes frozen.

    Stops when the newest mode's norm relative to the first one drops below
    ``mode_tol`` or ``max_modes`` is reached. The report carries Euclidean
    ``mode_norms`` (used for stopping) and ``mode_energy``, the energy norm
    of every mode (NaN for non-symmetric forms).
    """
    Q0 = 0 if fixed is None else fixed[0].shape[1]
    acc = [np.zeros((n, 0)) for n in shape] if fixed is None else [f.copy() for f in fixed]
    symmetric = _is_symmetric_form(terms)
    norms, energies = [], []
    history = []
    sweeps = 0
    for k in range(max_modes):
        sol = als_solve(terms, loads, shape, dirichlet_faces, acc[0].shape[1] + 1, fixed=acc if acc[0].shape[1] else None, tol=tol, max_iter=max_iter, seed=seed + k, stagnation="ignore")
        new = [f[:, -1:] for f in sol.factors]
        sweeps += sol.report.sweeps
        nrm = float(np.prod([np.linalg.norm(v) for v in new]))
        norms.append(nrm)
        energies.append(float(np.sqrt(max(form_energy(terms, new), 0.0))) if symmetric else float("nan"))
        acc = [np.hstack([a, v]) for a, v in zip(acc, new)]
        history.extend(sol.report.history)
        if nrm / norms[0] < mode_tol:
            break
    report = ModeReport(sweeps, True, history)
    report.mode_norms = norms
    report.mode_energy = energies
    return TDSolution(acc, Q0, report=report)


def nest_boundary_modes(coarse: TDSolution, coarse_tb: TensorBasis, fine_tb: TensorBasis, Q_fine: int):
    """Coarse modes interpolated onto the fine level's nodes, mode by mode.

    They become the first ``Q_coarse`` fine modes and carry the interface
    values; the remaining ``Q_fine - Q_coarse`` modes must vanish on the
    interface.
    """
    if Q_fine <= coarse.Q:
        raise ConfigError(f"fine mode count {Q_fine} must exceed the coarse one {coarse.Q}")
    return [cb.eval(fb.nodes) @ f for cb, fb, f in zip(coarse_tb.bases, fine_tb.bases, coarse.factors)]


def full_solve(terms, loads, shape, dirichlet_faces, g=None) -> np.ndarray:
    """Reference full-tensor Galerkin solve of the same separated problem."""
    from .assembly import expand_separated

    op = LevelOperator(terms, shape, dirichlet_faces)
    rhs = expand_separated(loads).reshape(shape) if loads else np.zeros(shape)
    return op.solve(rhs, g)


def energy_norm(terms, U) -> float:
    """``sqrt(a(U, U))`` of a full nodal tensor for a symmetric operator."""
    out = np.zeros(np.shape(U))
    from .chidenn import apply_axes

    for c, mats in terms:
        out += c * apply_axes(U, mats)
    return float(np.sqrt(max(np.vdot(U, out), 0.0)))


# ---------------------------------------------------------------------------
# problem-level drivers


def _check_separable(problem, cmap):
    if problem.params.get("frame") == "moving" and cmap is None:
        raise ConfigError(f"{problem.name}: the source is only separated in the moving frame; pass a coordinate map")


def level_setup(problem, mesh, hyper, cmap=None, nq=None):
    """Basis, separated operator, separated load and Dirichlet faces of one level."""
    from .multilevel import _level_form

    _check_separable(problem, cmap)
    tb = TensorBasis(mesh, hyper)
    terms = _level_form(problem, mesh.dim, cmap).axis_matrices(tb, tb, nq=nq)
    loads = separated_load(tb, problem.source_modes, nq=nq)
    return tb, terms, loads, list(problem.dirichlet_faces)


def solve_td(problem, mesh, hyper, Q: int, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, seed: int = 0, cmap=None, nq=None, init=None) -> TDSolution:
    """Single-level TD solve of a problem with homogeneous Dirichlet data."""
    tb, terms, loads, faces = level_setup(problem, mesh, hyper, cmap, nq)
    sol = als_solve(terms, loads, mesh.shape, faces, Q, tol=tol, max_iter=max_iter, seed=seed, init=init)
    return sol


def solve_pgd(problem, mesh, hyper, mode_tol: float = 1e-6, max_modes: int = 20, seed: int = 0, cmap=None, nq=None, tol: float = DEFAULT_TOL):
    """Greedy enrichment on one level; returns ``(solution, report)``.

    Raises :class:`ConvergenceError` when ``max_modes`` is reached before
    the newest mode falls below ``mode_tol`` of the first one.
    """
    tb, terms, loads, faces = level_setup(problem, mesh, hyper, cmap, nq)
    sol = pgd_solve(terms, loads, mesh.shape, faces, max_modes, mode_tol=mode_tol, tol=tol, seed=seed)
    norms = sol.report.mode_norms
    if norms[-1] / norms[0] >= mode_tol:
        raise ConvergenceError(f"PGD did not reach mode_tol={mode_tol:g} within {max_modes} modes", history=norms)
    return sol, sol.report


def _deviation(terms, U_td, U_full):
    return energy_norm(terms, U_td - U_full)


def estimate_modes(problem, mesh, hyper, deviation_tol: float, max_modes: int = 12, seed: int = 0, nq=None, relative: bool = True, tol: float = DEFAULT_TOL):
    """Smallest ``Q`` whose TD field is within ``deviation_tol`` of the full solve.

    The deviation is the energy norm of ``u_TD - u_full`` (relative to the
    energy of ``u_full`` when ``relative``). Returns ``(Q, deviations)``.
    """
    tb, terms, loads, faces = level_setup(problem, mesh, hyper, None, nq)
    U = full_solve(terms, loads, mesh.shape, faces)
    scale = energy_norm(terms, U) if relative else 1.0
    devs = []
    for Q in range(1, max_modes + 1):
        sol = als_solve(terms, loads, mesh.shape, faces, Q, tol=tol, seed=seed, stagnation="warn")
        devs.append(_deviation(terms, sol.full(), U) / scale)
        if devs[-1] < deviation_tol:
            return Q, devs
    raise ConvergenceError(f"deviation {devs[-1]:.2e} still above {deviation_tol:g} at Q={max_modes}", history=devs)


@dataclass
class Decomposition:
    e_td: float
    e_full: float
    deviation: float
    residual: float
    td: TDSolution | None = None


def error_decomposition_check(problem, mesh, hyper, Q: int, seed: int = 0, nq=None, tol: float = DEFAULT_TOL, solution=None, U_full=None) -> Decomposition:
    """Energy errors of the TD and full solves, their deviation and the Pythagorean residual.

    ``residual = |e_td^2 - e_full^2 - dev^2| / e_td^2``. All three are
    relative to the exact solution's energy when it is known.
    """
    from .studies import error_norms

    tb, terms, loads, faces = level_setup(problem, mesh, hyper, None, nq)
    U = full_solve(terms, loads, mesh.shape, faces) if U_full is None else U_full
    sol = solution or als_solve(terms, loads, mesh.shape, faces, Q, tol=tol, seed=seed, stagnation="warn")
    en_full = error_norms([(tb, U)], problem, nq)
    en_td = error_norms([(tb, sol)], problem, nq)
    scale = en_full["u_energy"] if en_full["u_energy"] > 0 else 1.0
    e_full = en_full["energy"] / scale
    e_td = en_td["energy"] / scale
    dev = _deviation(terms, sol.full(), U) / scale
    res = abs(e_td**2 - e_full**2 - dev**2) / max(e_td**2, 1e-300)
    return Decomposition(e_td, e_full, dev, res, sol)


def _masked(vecs, masks):
    return [v * m for v, m in zip(vecs, masks)]


def solve_td_multilevel(problem, hierarchy, Q, tol: float = 1e-6, max_iter: int = 50, td_tol: float = DEFAULT_TOL, td_max_iter: int = DEFAULT_MAX_ITER,
                        seed: int = 0, cmap=None, nq=None, system=None, stagnation: str = "warn"):
    """Alternating-level solve with a separated field on every level.

    Level ``l`` holds ``Q[l]`` modes: the first ``Q[l-1]`` are the coarser
    field interpolated mode by mode (held fixed, so the interface data is
    met exactly at the nodes) and the rest vanish on its Dirichlet faces.
    Coupling terms are the same as in the full solver, written as separated
    loads. Returns ``(solutions, report)``.
    """
    from .multilevel import AlternationReport, MultilevelSystem

    _check_separable(problem, cmap)
    Q = [int(q) for q in Q]
    m = hierarchy.n_levels
    if len(Q) != m:
        raise ConfigError("one mode count per level")
    if any(b <= a for a, b in zip(Q, Q[1:])):
        raise ConfigError(f"mode counts must increase strictly from coarse to fine, got {Q}")
    system = system or MultilevelSystem(problem, hierarchy, cmap, nq)
    for l in range(m):
        G = system.outer_values(l)
        outer = [f for f in system.faces[l] if f not in hierarchy.interface_faces(l)]
        if outer:
            mask = hierarchy.meshes[l].boundary_mask(outer).reshape(G.shape)
            if np.max(np.abs(G[mask]), initial=0.0) > 1e-12 * max(1.0, float(np.max(np.abs(G)))):
                raise ConfigError("TD solves need homogeneous Dirichlet data on the outer boundary")
    loads = [separated_load(system.bases[l], problem.source_modes, nq=nq) for l in range(m)]
    shapes = [mesh.shape for mesh in hierarchy.meshes]
    masks, embeds = [], []
    for l in range(m - 1):
        sel, idx = system.overlap[l]
        masks.append([np.isin(np.arange(n), s).astype(float) for n, s in zip(shapes[l], sel)])
        embeds.append((sel, idx))
    sols = [None] * m
    report = AlternationReport()
    for it in range(1, max_iter + 1):
        changes = []
        for l in range(m):
            extra = []
            for k in range(l + 1, m):
                if sols[k] is None:
                    continue
                fk = sols[k].factors
                for c, mats in system.mixed(l, k, k):
                    for q in range(fk[0].shape[1]):
                        extra.append((-c, [M @ f[:, q] for M, f in zip(mats, fk)]))
                if k + 1 < m:
                    for c, mats in system.mixed(l, k, k + 1):
                        for q in range(fk[0].shape[1]):
                            extra.append((c, [M @ f[:, q] for M, f in zip(mats, fk)]))
            if l + 1 < m and sols[l] is not None and sols[l + 1] is not None:
                ghost = []
                fl = sols[l].factors
                for q in range(fl[0].shape[1]):
                    vecs = [f[:, q] for f in fl]
                    ghost.append((1.0, vecs))
                    ghost.append((-1.0, _masked(vecs, masks[l])))
                sel, idx = embeds[l]
                fn = sols[l + 1].factors
                for q in range(fn[0].shape[1]):
                    vecs = []
                    for n, s_, i_, f in zip(shapes[l], sel, idx, fn):
                        v = np.zeros(n)
                        v[s_] = f[i_, q]
                        vecs.append(v)
                    ghost.append((1.0, vecs))
                for c, mats in system.mixed(l, l, l + 1):
                    for cg, vecs in ghost:
                        extra.append((c * cg, [M @ v for M, v in zip(mats, vecs)]))
            fixed = None
            if l > 0:
                fixed = nest_boundary_modes(sols[l - 1], system.bases[l - 1], system.bases[l], Q[l])
            old = sols[l]
            init = None if old is None else [f[:, old.n_fixed:] for f in old.factors]
            new = als_solve(system.mixed(l, l, l), loads[l] + extra, shapes[l], system.faces[l], Q[l], fixed=fixed,
                            tol=td_tol, max_iter=td_max_iter, seed=seed + l, init=init, stagnation=stagnation)
            new.level = l
            if old is None:
                changes.append(1.0)
            else:
                changes.append(cp_diff_norm(new.factors, old.factors) / max(cp_norm(new.factors), 1e-300))
            sols[l] = new
        report.changes.append(changes)
        report.iterations = it
        if max(changes) < tol:
            report.converged = True
            break
    return sols, report


def td_dofs(solutions) -> int:
    """Unknown count ``sum_l Q_l sum_d n_d^(l)``."""
    return int(sum(s.dofs for s in solutions))


class TDLevel:
    """A TD field bound to its basis, usable with :func:`mlvms.multilevel.composite_eval`."""

    def __init__(self, solution: TDSolution, basis: TensorBasis):
        self.solution = solution
        self.basis = basis
        self.mesh = basis.mesh

    def eval(self, X, deriv_axis=None) -> np.ndarray:
        if deriv_axis is not None:
            raise ConfigError("TD point evaluation supports values only")
        return td_eval(self.solution, self.basis, X)
