"""Manufactured verification problems and the laser heat-source model.

Every problem carries its source twice: as a plain callable and as a
separated list ``[(coef, [f_0, f_1, ...])]`` that the tensor solvers
integrate axis by axis. Derivatives of the exact solutions are written out
by hand; :meth:`ManufacturedProblem.self_check` confirms they agree with the
source before a problem is handed out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class ManufacturedProblem:
    """``rho_cp u_t - k lap u = f`` (or ``-k lap u = f`` without time) on a box.

    ``box`` includes the time interval as its last entry when ``has_time``.
    ``grad`` returns derivatives along every axis (time last); ``second``
    returns the pure second derivatives along the spatial axes.
    """

    name: str
    box: tuple
    has_time: bool
    source: Callable
    source_modes: tuple
    dirichlet_faces: tuple
    neumann_faces: tuple = ()
    exact: Callable | None = None
    grad: Callable | None = None
    second: Callable | None = None
    k: float = 1.0
    rho_cp: float = 1.0
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.box)

    @property
    def space_dim(self) -> int:
        return self.dim - (1 if self.has_time else 0)

    def boundary(self, *x):
        if self.exact is None:
            return np.zeros(np.broadcast(*x).shape)
        return self.exact(*x)

    def pde_residual(self, *x):
        """``PDE(exact) - source`` from the hand-written derivatives."""
        lap = sum(self.second(*x))
        r = -self.k * lap - self.source(*x)
        if self.has_time:
            r = r + self.rho_cp * self.grad(*x)[-1]
        return r

    def separated_source(self, *x):
        """Evaluate ``source_modes``; moving-frame modes are shifted back to ``x``."""
        if self.params.get("frame") == "moving":
            x = (x[0] - self.params["track"](x[-1]),) + tuple(x[1:])
        total = 0.0
        for c, funcs in self.source_modes:
            term = c
            for f, xd in zip(funcs, x):
                term = term * f(xd)
            total = total + term
        return total

    def sample(self, n: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        return [rng.uniform(lo, hi, n) for lo, hi in self.box]

    def self_check(self, n: int = 1000, seed: int = 0, tol: float = 1e-8) -> float:
        """Largest scaled residual at random points; raises if above ``tol``."""
        if self.exact is None:
            return 0.0
        x = self.sample(n, seed)
        f = self.source(*x)
        scale = max(1.0, float(np.max(np.abs(f))))
        res = float(np.max(np.abs(self.pde_residual(*x)))) / scale
        sep = float(np.max(np.abs(self.separated_source(*x) - f))) / scale
        worst = max(res, sep)
        if not worst < tol:
            raise ConfigError(f"{self.name}: source inconsistent with the exact solution ({worst:.2e})")
        return worst


def _gauss(c, w):
    """``exp(-w (x - c)^2)`` with first and second derivatives."""

    def g(x):
        return np.exp(-w * (np.asarray(x, dtype=float) - c) ** 2)

    def g1(x):
        x = np.asarray(x, dtype=float)
        return -2.0 * w * (x - c) * g(x)

    def g2(x):
        x = np.asarray(x, dtype=float)
        return (4.0 * w * w * (x - c) ** 2 - 2.0 * w) * g(x)

    return g, g1, g2


def _ones(x):
    return np.ones_like(np.asarray(x, dtype=float))


def poisson2d_gaussians(k: float = 1.0) -> ManufacturedProblem:
    """Seven Gaussians along the diagonal of ``[0, 20]^2``; ``-k lap u = b``."""
    centers = [8.2 + 0.2 * i for i in range(1, 8)]
    gs = [_gauss(c, math.pi) for c in centers]

    def exact(x, y):
        return sum(g(x) * g(y) for g, _, _ in gs)

    def grad(x, y):
        return (sum(g1(x) * g(y) for g, g1, _ in gs), sum(g(x) * g1(y) for g, g1, _ in gs))

    def second(x, y):
        return (sum(g2(x) * g(y) for g, _, g2 in gs), sum(g(x) * g2(y) for g, _, g2 in gs))

    def source(x, y):
        return -k * sum(second(x, y))

    modes = []
    for g, _, g2 in gs:
        modes.append((-k, (g2, g)))
        modes.append((-k, (g, g2)))
    p = ManufacturedProblem(
        "poisson2d", ((0.0, 20.0), (0.0, 20.0)), False, source, tuple(modes),
        ((0, 0), (0, 1), (1, 0), (1, 1)), exact=exact, grad=grad, second=second, k=k,
        params={"centers": centers, "exact_modes": [(1.0, (g, g)) for g, _, _ in gs]},
    )
    p.self_check()
    return p


def heat1d() -> ManufacturedProblem:
    """``u = exp(-100 x^2)(1 - exp(-5 t))`` on ``[-1, 1] x [0, 4]``, ``u_t - u_xx = f``."""
    X, X1, X2 = _gauss(0.0, 100.0)

    def T(t):
        return 1.0 - np.exp(-5.0 * np.asarray(t, dtype=float))

    def T1(t):
        return 5.0 * np.exp(-5.0 * np.asarray(t, dtype=float))

    def exact(x, t):
        return X(x) * T(t)

    def grad(x, t):
        return (X1(x) * T(t), X(x) * T1(t))

    def second(x, t):
        return (X2(x) * T(t),)

    def source(x, t):
        return X(x) * T1(t) - X2(x) * T(t)

    p = ManufacturedProblem(
        "heat1d", ((-1.0, 1.0), (0.0, 4.0)), True, source, ((1.0, (X, T1)), (-1.0, (X2, T))),
        ((0, 0), (0, 1), (1, 0)), exact=exact, grad=grad, second=second,
    )
    p.self_check()
    return p


def _envelope(sign):
    """``1 - exp(sign * 5 t)`` and its derivative."""

    def E(t):
        return 1.0 - np.exp(sign * 5.0 * np.asarray(t, dtype=float))

    def E1(t):
        return -sign * 5.0 * np.exp(sign * 5.0 * np.asarray(t, dtype=float))

    return E, E1


def _check_track(x0, v, t_end, lo, hi, margin):
    ends = (x0, x0 + v * t_end)
    if min(ends) - margin < lo or max(ends) + margin > hi:
        raise ConfigError(f"source track {ends} leaves the domain [{lo}, {hi}] (margin {margin})")


def moving3d(v: float = 0.5, R: float = 0.11, D: float = 0.05, k_s: float = 0.8, t_end: float = 20.0, x0: float = -5.0,
             k: float = 2.2e-5, rho_cp: float = 3.181e-3, envelope_sign: float = 1.0, half: float = 6.0) -> ManufacturedProblem:
    """Gaussian spot travelling along ``x`` on the top face of ``[-6,6]^2 x [-6,0]``.

    Units are mm and ms. The track is ``x_c(t) = x0 + v t``. ``envelope_sign``
    selects the time envelope ``1 - exp(sign * 5 t)``.
    """
    _check_track(x0, v, t_end, -half, half, k_s)
    G, G1, G2 = _gauss(0.0, 3.0 / R**2)
    Y, Y1, Y2 = _gauss(0.0, 3.0 / R**2)
    Z, Z1, Z2 = _gauss(0.0, 3.0 / D**2)
    E, E1 = _envelope(envelope_sign)

    def xc(t):
        return x0 + v * np.asarray(t, dtype=float)

    def exact(x, y, z, t):
        return G(x - xc(t)) * Y(y) * Z(z) * E(t)

    def grad(x, y, z, t):
        X = x - xc(t)
        return (G1(X) * Y(y) * Z(z) * E(t), G(X) * Y1(y) * Z(z) * E(t), G(X) * Y(y) * Z1(z) * E(t),
                Y(y) * Z(z) * (G(X) * E1(t) - v * G1(X) * E(t)))

    def second(x, y, z, t):
        X = x - xc(t)
        return (G2(X) * Y(y) * Z(z) * E(t), G(X) * Y2(y) * Z(z) * E(t), G(X) * Y(y) * Z2(z) * E(t))

    def source(x, y, z, t):
        X = x - xc(t)
        base = Y(y) * Z(z)
        ut = base * (G(X) * E1(t) - v * G1(X) * E(t))
        lap = (G2(X) * Y(y) * Z(z) + G(X) * Y2(y) * Z(z) + G(X) * Y(y) * Z2(z)) * E(t)
        return rho_cp * ut - k * lap

    # separated in the frame that travels with the spot (xi = x - x_c)
    ref_modes = (
        (rho_cp, (G, Y, Z, E1)),
        (-rho_cp * v, (G1, Y, Z, E)),
        (-k, (G2, Y, Z, E)),
        (-k, (G, Y2, Z, E)),
        (-k, (G, Y, Z2, E)),
    )
    p = ManufacturedProblem(
        "moving3d", ((-half, half), (-half, half), (-half, 0.0), (0.0, t_end)), True, source, ref_modes,
        ((0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (3, 0)), neumann_faces=((2, 1),),
        exact=exact, grad=grad, second=second, k=k, rho_cp=rho_cp,
        params={"v": v, "R": R, "D": D, "k_s": k_s, "x0": x0, "track": xc, "frame": "moving", "envelope_sign": envelope_sign},
    )
    p.self_check(tol=1e-8)
    return p


def moving1d(v: float = 0.375, R: float = 0.5, k_s: float = 2.0, t_end: float = 16.0, x0: float = -3.0,
             k: float = 0.05, rho_cp: float = 1.0, half: float = 6.0, envelope_sign: float = -1.0) -> ManufacturedProblem:
    """1D analogue of :func:`moving3d` on ``[-half, half] x [0, t_end]``."""
    _check_track(x0, v, t_end, -half, half, k_s)
    G, G1, G2 = _gauss(0.0, 3.0 / R**2)
    E, E1 = _envelope(envelope_sign)

    def xc(t):
        return x0 + v * np.asarray(t, dtype=float)

    def exact(x, t):
        return G(x - xc(t)) * E(t)

    def grad(x, t):
        X = x - xc(t)
        return (G1(X) * E(t), G(X) * E1(t) - v * G1(X) * E(t))

    def second(x, t):
        return (G2(x - xc(t)) * E(t),)

    def source(x, t):
        X = x - xc(t)
        return rho_cp * (G(X) * E1(t) - v * G1(X) * E(t)) - k * G2(X) * E(t)

    ref_modes = ((rho_cp, (G, E1)), (-rho_cp * v, (G1, E)), (-k, (G2, E)))
    p = ManufacturedProblem(
        "moving1d", ((-half, half), (0.0, t_end)), True, source, ref_modes, ((0, 0), (0, 1), (1, 0)),
        exact=exact, grad=grad, second=second, k=k, rho_cp=rho_cp,
        params={"v": v, "R": R, "k_s": k_s, "x0": x0, "track": xc, "frame": "moving", "envelope_sign": envelope_sign},
    )
    p.self_check()
    return p


@dataclass(frozen=True)
class LaserParams:
    """Process and material data in catalogue units.

    k [W/(m K)], rho [g/cm^3], c_p [J/(kg K)], v [mm/s], R and D [um],
    P [W], eta [-], T_amb [K].
    """

    k: float = 22.0
    rho: float = 4.27
    c_p: float = 745.0
    v: float = 500.0
    R: float = 110.0
    D: float = 50.0
    P: float = 200.0
    eta: float = 0.25
    T_amb: float = 298.15

    def __post_init__(self):
        for name in ("k", "rho", "c_p", "v", "R", "D", "P", "eta", "T_amb"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"laser parameter {name} must be positive")

    @property
    def intensity(self) -> float:
        """Peak volumetric heat in W/um^3."""
        return 6.0 * math.sqrt(3.0) * self.P * self.eta / (math.pi**1.5 * self.R**2 * self.D)

    def internal(self) -> dict:
        """Same data in mm / ms / J / K."""
        R, D, P = self.R * 1e-3, self.D * 1e-3, self.P * 1e-3
        return {
            "k": self.k * 1e-6,
            "rho_cp": self.rho * self.c_p * 1e-6,
            "v": self.v * 1e-3,
            "R": R,
            "D": D,
            "A": 6.0 * math.sqrt(3.0) * P * self.eta / (math.pi**1.5 * R**2 * D),
            "T_amb": self.T_amb,
        }


def lpbf_source(params: LaserParams, x, t, x0: float = -5000.0, y_c: float = 0.0, z_c: float = 0.0):
    """Ellipsoidal Gaussian heat input in W/um^3 at ``x`` (um) and time ``t`` (s).

    The spot starts at ``x0`` and moves along ``+x`` at ``params.v``.
    """
    x = np.asarray(x, dtype=float)
    xc = x0 + params.v * 1e3 * np.asarray(t, dtype=float)
    r2 = ((x[..., 0] - xc) ** 2 + (x[..., 1] - y_c) ** 2) / params.R**2 + (x[..., 2] - z_c) ** 2 / params.D**2
    return params.intensity * np.exp(-3.0 * r2)


def lpbf_problem(params: LaserParams = LaserParams(), t_end: float = 16.0, x0: float = -5.0, k_s: float = 0.8, half: float = 6.0) -> ManufacturedProblem:
    """Temperature rise ``T - T_amb`` for a single track, in mm / ms / K."""
    c = params.internal()
    _check_track(x0, c["v"], t_end, -half, half, k_s)
    G, _, _ = _gauss(0.0, 3.0 / c["R"] ** 2)
    Z, _, _ = _gauss(0.0, 3.0 / c["D"] ** 2)

    def xc(t):
        return x0 + c["v"] * np.asarray(t, dtype=float)

    def source(x, y, z, t):
        return c["A"] * G(x - xc(t)) * G(y) * Z(z)

    return ManufacturedProblem(
        "lpbf", ((-half, half), (-half, half), (-half, 0.0), (0.0, t_end)), True, source,
        ((c["A"], (G, G, Z, _ones)),), ((0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (3, 0)),
        neumann_faces=((2, 1),), k=c["k"], rho_cp=c["rho_cp"],
        params={"track": xc, "x0": x0, "v": c["v"], "k_s": k_s, "frame": "moving", "T_amb": c["T_amb"], "A": c["A"]},
    )


def separable_sine(k: float = 1.0) -> ManufacturedProblem:
    """``u = sin(pi x) sin(pi y)`` on the unit square (exact rank one)."""
    pi = math.pi

    def S(x):
        return np.sin(pi * np.asarray(x, dtype=float))

    def S1(x):
        return pi * np.cos(pi * np.asarray(x, dtype=float))

    def S2(x):
        return -pi * pi * S(x)

    def exact(x, y):
        return S(x) * S(y)

    p = ManufacturedProblem(
        "sine2d", ((0.0, 1.0), (0.0, 1.0)), False, lambda x, y: 2 * k * pi * pi * S(x) * S(y),
        ((2 * k * pi * pi, (S, S)),), ((0, 0), (0, 1), (1, 0), (1, 1)), exact=exact,
        grad=lambda x, y: (S1(x) * S(y), S(x) * S1(y)), second=lambda x, y: (S2(x) * S(y), S(x) * S2(y)), k=k,
    )
    p.self_check()
    return p


PROBLEMS = {
    "poisson2d": poisson2d_gaussians,
    "heat1d": heat1d,
    "moving1d": moving1d,
    "moving3d": moving3d,
    "sine2d": separable_sine,
    "lpbf": lpbf_problem,
}


def get_problem(name: str, **kw) -> ManufacturedProblem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ConfigError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(**kw)
