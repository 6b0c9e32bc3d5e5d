"""Run configuration files.

INI syntax (``configparser``), one key per line::

    [run]
    problem = poisson2d        ; key of mlvms.problems.PROBLEMS
    solver = full              ; full | td | pgd
    tol = 1e-8                 ; alternation tolerance
    max_iter = 50
    td_tol = 1e-7              ; ALS tolerance inside TD solves
    quad_order = 5             ; Gauss points per cell (default p + 2)
    seed = 0
    t_out = 4.0                ; snapshot time for space-time field files

    [problem]                  ; keyword arguments of the problem factory
    k = 1.0

    [level.1]                  ; coarsest first
    box = 0 20, 0 20           ; "lo hi" per spatial axis, comma separated
    h = 0.5                    ; one value or one per axis
    dt = 0.5                   ; space-time runs only
    t_span = 0 4
    a = 8
    s = 3
    p = 3
    Q = 8                      ; TD mode count

    [converge]
    refine = 1 2 4             ; divisors applied to h (and dt)
    levels = all               ; or e.g. "2" to refine only level 2
    refine_time = yes
    norm = auto                ; energy | l2 | auto (l2 for space-time)

    [modes]
    deviation_tol = 1e-6
    max_modes = 12

    [map]
    kind = track               ; none | track | static
    half_width = 2.0           ; track: defaults from the problem
    ref_window = 1 2           ; static only
    phys_window = 1.5 2.5

    [laser]                    ; LaserParams overrides (catalogue units)
    P = 200

    [lpbf]                     ; LPBFSetup overrides
    Q = 2 9 15
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .mesh import HyperParams, LevelSpec

SOLVERS = ("full", "td", "pgd")
NORMS = ("auto", "energy", "l2")
MAP_KINDS = ("none", "track", "static")


def _floats(text: str, what: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from None


def _ints(text: str, what: str) -> tuple:
    vals = _floats(text, what)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"{what}: expected integers, got {text!r}")
    return tuple(int(v) for v in vals)


def _box(text: str, what: str) -> tuple:
    out = []
    for part in text.split(","):
        lo_hi = _floats(part, what)
        if len(lo_hi) != 2:
            raise ConfigError(f"{what}: each axis needs 'lo hi', got {part.strip()!r}")
        out.append(lo_hi)
    return tuple(out)


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


@dataclass(frozen=True)
class LevelConfig:
    box: tuple
    h: tuple
    a: float = 8.0
    s: int = 3
    p: int = 3
    dt: float | None = None
    t_span: tuple | None = None
    Q: int | None = None

    def spec(self, scale: float = 1.0, scale_time: bool = True) -> LevelSpec:
        h = tuple(v / scale for v in self.h)
        dt = None if self.dt is None else (self.dt / scale if scale_time else self.dt)
        return LevelSpec(self.box, h if len(h) > 1 else h[0], HyperParams(self.a, self.s, self.p), dt=dt, t_span=self.t_span, modes=self.Q)


@dataclass(frozen=True)
class RunConfig:
    problem: str = "poisson2d"
    problem_kw: dict = field(default_factory=dict)
    solver: str = "full"
    levels: tuple = ()
    tol: float = 1e-8
    max_iter: int = 50
    td_tol: float = 1e-7
    td_max_iter: int = 300
    quad_order: int | None = None
    seed: int = 0
    t_out: float | None = None
    refine: tuple = (1, 2, 4)
    refine_levels: tuple | None = None
    refine_time: bool = True
    norm: str = "auto"
    deviation_tol: float = 1e-6
    max_modes: int = 12
    map: dict = field(default_factory=lambda: {"kind": "none"})
    laser: dict = field(default_factory=dict)
    lpbf: dict = field(default_factory=dict)

    def with_seed(self, seed):
        return self if seed is None else replace(self, seed=int(seed))

    def specs(self, scale: float = 1.0):
        """Level specs with the refined levels' sizes divided by ``scale``."""
        out = []
        for i, lv in enumerate(self.levels):
            refined = self.refine_levels is None or (i + 1) in self.refine_levels
            out.append(lv.spec(scale if refined else 1.0, self.refine_time))
        return out


def _level(sec, name) -> LevelConfig:
    if "box" not in sec or "h" not in sec:
        raise ConfigError(f"[{name}] needs box and h")
    box = _box(sec["box"], f"{name}.box")
    h = _floats(sec["h"], f"{name}.h")
    if len(h) not in (1, len(box)):
        raise ConfigError(f"[{name}] h needs one value or one per axis")
    dt = float(sec["dt"]) if "dt" in sec else None
    t_span = _floats(sec["t_span"], f"{name}.t_span") if "t_span" in sec else None
    if dt is not None and (t_span is None or len(t_span) != 2):
        raise ConfigError(f"[{name}] dt needs t_span = lo hi")
    try:
        return LevelConfig(
            box, h, a=float(sec.get("a", 8.0)), s=int(sec.get("s", 3)), p=int(sec.get("p", 3)),
            dt=dt, t_span=t_span, Q=int(sec["Q"]) if "Q" in sec else None,
        )
    except ValueError as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keep key case (Q, P, ...)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    run = cp["run"] if cp.has_section("run") else {}
    kw = {}
    try:
        if run:
            for key, conv in (("tol", float), ("max_iter", int), ("td_tol", float), ("td_max_iter", int), ("seed", int),
                              ("t_out", float), ("quad_order", int)):
                if key in run:
                    kw[key] = conv(run[key])
            if "problem" in run:
                kw["problem"] = run["problem"]
            if "solver" in run:
                kw["solver"] = run["solver"]
        if cp.has_section("converge"):
            c = cp["converge"]
            if "refine" in c:
                kw["refine"] = _floats(c["refine"], "converge.refine")
            lv = c.get("levels", "all").strip()
            kw["refine_levels"] = None if lv == "all" else _ints(lv, "converge.levels")
            if "refine_time" in c:
                kw["refine_time"] = c.getboolean("refine_time")
            kw["norm"] = c.get("norm", "auto")
        if cp.has_section("modes"):
            m = cp["modes"]
            kw["deviation_tol"] = float(m.get("deviation_tol", 1e-6))
            kw["max_modes"] = int(m.get("max_modes", 12))
    except ValueError as exc:
        raise ConfigError(f"bad value in config: {exc}") from None
    if cp.has_section("problem"):
        kw["problem_kw"] = {k: _number(v) for k, v in cp["problem"].items()}
    names = sorted((s for s in cp.sections() if s.startswith("level.")), key=lambda s: _ints(s.split(".", 1)[1], s))
    if [int(n.split(".")[1]) for n in names] != list(range(1, len(names) + 1)):
        raise ConfigError("levels must be numbered level.1, level.2, ... without gaps")
    kw["levels"] = tuple(_level(cp[n], n) for n in names)
    if cp.has_section("map"):
        mp = dict(cp["map"])
        kind = mp.get("kind", "none")
        if kind not in MAP_KINDS:
            raise ConfigError(f"map.kind must be one of {MAP_KINDS}, got {kind!r}")
        kw["map"] = mp
    for sec in ("laser", "lpbf"):
        if cp.has_section(sec):
            kw[sec] = {k: _number(v) if len(v.split()) == 1 else _floats(v, f"{sec}.{k}") for k, v in cp[sec].items()}
    cfg = RunConfig(**kw)
    if cfg.solver not in SOLVERS:
        raise ConfigError(f"solver must be one of {SOLVERS}, got {cfg.solver!r}")
    if cfg.norm not in NORMS:
        raise ConfigError(f"converge.norm must be one of {NORMS}, got {cfg.norm!r}")
    if not cfg.tol > 0:
        raise ConfigError("tol must be positive")
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
