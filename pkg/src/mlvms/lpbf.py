"""Single-track laser powder bed fusion on three levels that travel with the spot.

All levels live in the reference frame of a track map, so the laser is
steady at the origin and every level stays centred on it. Units are mm, ms,
J and K; fields are temperature rise over ambient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .mesh import HyperParams, LevelSpec, build_hierarchy, build_tensor_mesh
from .movingsource import track_map
from .multilevel import MultilevelSystem, composite_eval
from .problems import LaserParams, lpbf_problem
from .td import TDLevel, als_solve, energy_norm, full_solve, level_setup, solve_td_multilevel, td_dofs


@dataclass(frozen=True)
class LPBFSetup:
    """Level sizes of a run. Level 2 spans ``[-k_s, k_s]^2 x [-k_s, 0]``, level 3 a quarter of that."""

    scale: str
    k_s: float
    h: tuple
    dt: tuple
    Q: tuple = (2, 9, 15)
    p: tuple = (5, 5, 5)
    s: tuple = (3, 3, 3)
    a: float = 8.0
    t_end: float = 16.0
    x0: float = -5.0
    half: float = 6.0

    def __post_init__(self):
        if not (len(self.h) == len(self.dt) == len(self.Q) == len(self.p) == len(self.s) == 3):
            raise ConfigError("an LPBF setup has exactly three levels")

    @property
    def boxes(self) -> list:
        k, H = self.k_s, self.half
        return [
            ((-H, H), (-H, H), (-H, 0.0)),
            ((-k, k), (-k, k), (-k, 0.0)),
            ((-k / 4, k / 4), (-k / 4, k / 4), (-k / 4, 0.0)),
        ]

    @property
    def ratios(self) -> tuple:
        return (self.h[0] / self.h[1], self.h[1] / self.h[2])


def desk_setup(**kw) -> LPBFSetup:
    """48 x 48 x 24 coarse elements; runs in about a minute on one core."""
    base = dict(scale="desk", k_s=1.0, h=(0.25, 0.0625, 0.03125), dt=(1.0, 0.25, 0.125))
    base.update(kw)
    return LPBFSetup(**base)


def full_setup(**kw) -> LPBFSetup:
    """480 x 480 x 240 coarse elements, 25 um; not validated here."""
    base = dict(scale="full", k_s=0.8, h=(0.025, 0.00625, 0.003125), dt=(0.5, 0.125, 0.0625))
    base.update(kw)
    return LPBFSetup(**base)


SETUPS = {"desk": desk_setup, "full": full_setup}


def hierarchy(setup: LPBFSetup):
    t = (0.0, setup.t_end)
    specs = [
        LevelSpec(box, h, HyperParams(setup.a, s, p), dt=dt, t_span=t, modes=q)
        for box, h, dt, s, p, q in zip(setup.boxes, setup.h, setup.dt, setup.s, setup.p, setup.Q)
    ]
    return build_hierarchy(specs)


def make_map(setup: LPBFSetup, params: LaserParams):
    v = params.internal()["v"]
    return track_map(setup.boxes[0], setup.x0, v, setup.k_s, (0.0, setup.t_end))


@dataclass
class LPBFResult:
    setup: LPBFSetup
    params: LaserParams
    solutions: list
    bases: list
    report: object
    time_s: float
    hierarchy: object
    cmap: object
    problem: object
    levels: list = field(default_factory=list)

    def __post_init__(self):
        self.levels = [TDLevel(s, b) for s, b in zip(self.solutions, self.bases)]

    @property
    def dofs(self) -> int:
        return td_dofs(self.solutions)

    @property
    def expected_dofs(self) -> int:
        return int(sum(q * sum(m.shape) for q, m in zip(self.setup.Q, self.hierarchy.meshes)))

    @property
    def storage_bytes(self) -> int:
        return int(sum(s.storage_bytes for s in self.solutions))

    @property
    def T_amb(self) -> float:
        return self.params.T_amb

    def rise(self, X) -> np.ndarray:
        """Temperature rise at reference points ``(xi, y, z, t)``."""
        return composite_eval(self.levels, X)

    def centre_rise(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self.rise(np.stack([0 * t, 0 * t, 0 * t, t], axis=1))

    def profile(self, direction, t: float, length: float | None = None, n: int = 41):
        """Rise along a ray from the spot centre; ``direction`` is ``(+-1 axis index)`` e.g. ``(1, 1)`` for +y."""
        sign, axis = direction
        length = self.setup.k_s if length is None else length
        r = np.linspace(0.0, length, n)
        X = np.zeros((n, 4))
        X[:, axis] = sign * r
        X[:, 3] = t
        return r, self.rise(X)


def run_lpbf(setup: LPBFSetup | None = None, params: LaserParams | None = None, tol: float = 1e-3, max_iter: int = 20,
             td_tol: float = 1e-7, td_max_iter: int = 200, seed: int = 0) -> LPBFResult:
    setup = setup or desk_setup()
    params = params or LaserParams()
    problem = lpbf_problem(params, t_end=setup.t_end, x0=setup.x0, k_s=setup.k_s, half=setup.half)
    hier = hierarchy(setup)
    cmap = make_map(setup, params)
    system = MultilevelSystem(problem, hier, cmap)
    t0 = time.perf_counter()
    sols, report = solve_td_multilevel(problem, hier, list(setup.Q), tol=tol, max_iter=max_iter, td_tol=td_tol,
                                       td_max_iter=td_max_iter, seed=seed, cmap=cmap, system=system)
    elapsed = time.perf_counter() - t0
    return LPBFResult(setup, params, sols, list(system.bases), report, elapsed, hier, cmap, problem)


def monotone_decay(values, rel_tol: float = 1e-2) -> bool:
    """Non-increasing up to ``rel_tol`` times the first value."""
    v = np.asarray(values, dtype=float)
    return bool(v[0] > 0 and np.all(np.diff(v) <= rel_tol * v[0]))


@dataclass
class SpeedupResult:
    shape: tuple
    time_td: float
    time_full: float
    deviation: float

    @property
    def speedup(self) -> float:
        return self.time_full / self.time_td


def td_vs_full(setup: LPBFSetup | None = None, params: LaserParams | None = None, h: float = 1.0, dt: float = 2.0,
               Q: int | None = None, seed: int = 0) -> SpeedupResult:
    """Wall time of a single-level TD solve against the sparse direct solve on the same coarse mesh.

    The moving-frame operator is non-symmetric along x and t, so the full
    solve is a sparse LU of the 4D system. Its fill grows fast: the default
    13 x 13 x 7 x 9 grid peaks near 2.3 GB, with dt = 1 it no longer fits in 5 GB.
    """
    setup = setup or desk_setup()
    params = params or LaserParams()
    problem = lpbf_problem(params, t_end=setup.t_end, x0=setup.x0, k_s=setup.k_s, half=setup.half)
    mesh = build_tensor_mesh(setup.boxes[0] + ((0.0, setup.t_end),), (h, h, h, dt))
    cmap = make_map(setup, params)
    tb, terms, loads, faces = level_setup(problem, mesh, HyperParams(setup.a, setup.s[0], setup.p[0]), cmap)
    Q = max(setup.Q) if Q is None else Q
    t0 = time.perf_counter()
    sol = als_solve(terms, loads, mesh.shape, faces, Q, seed=seed, stagnation="warn")
    t_td = time.perf_counter() - t0
    t0 = time.perf_counter()
    U = full_solve(terms, loads, mesh.shape, faces)
    t_full = time.perf_counter() - t0
    dev = energy_norm(terms, sol.full() - U) / max(energy_norm(terms, U), 1e-300)
    return SpeedupResult(mesh.shape, t_td, t_full, dev)
