"""Command-line harness: ``mlvms {solve,converge,modes,lpbf,verify}``.

Exit codes: 0 success, 1 failed verification, 2 config, 3 mesh, 4 solver,
5 output. See :mod:`mlvms.config` for the config file keys and
:func:`write_grid` for the field file layout.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, MLVMSError, OutputError, SolverError
from .mesh import build_hierarchy
from .problems import LaserParams, get_problem
from .studies import (
    CSV_COLUMNS,
    ConvergenceRow,
    Timer,
    converge,
    error_norms,
    estimate_optimal_ratio,
    fit_error_coefficients,
    plateau_flag,
)

__all__ = [
    "main",
    "run_solve",
    "run_converge",
    "run_modes",
    "run_lpbf_cmd",
    "write_grid",
    "read_grid",
    "error_norms",
    "converge",
    "estimate_optimal_ratio",
    "fit_error_coefficients",
]

GRID_MAGIC = "# mlvms-grid 1"


# ---------------------------------------------------------------------------
# outputs


def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc}") from None
    return out


def write_json(path: Path, data: dict) -> None:
    try:
        path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from None


def write_csv(path: Path, rows) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in rows:
                d = r.as_dict()
                w.writerow([repr(float(d[c])) if isinstance(d[c], float) else d[c] for c in CSV_COLUMNS])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from None


def write_grid(path, axes, values, level: int, frame: str = "physical", time: float | None = None) -> None:
    """Plain-text structured grid.

    Header lines start with ``#``: magic, level, frame, optional time,
    shape, then one ``# axis d`` line of node coordinates per axis. The
    body has one value per line in lexicographic order (last axis fastest).
    """
    values = np.asarray(values, dtype=float)
    shape = tuple(len(a) for a in axes)
    if values.size != int(np.prod(shape)):
        raise OutputError(f"grid values ({values.size}) do not match axes {shape}")
    lines = [GRID_MAGIC, f"# level {level}", f"# frame {frame}"]
    if time is not None:
        lines.append(f"# time {time!r}")
    lines.append("# shape " + " ".join(str(n) for n in shape))
    for d, a in enumerate(axes):
        lines.append(f"# axis {d} " + " ".join(repr(float(v)) for v in a))
    body = "\n".join(repr(float(v)) for v in values.ravel())
    try:
        Path(path).write_text("\n".join(lines) + "\n" + body + "\n", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from None


def read_grid(path) -> dict:
    """Inverse of :func:`write_grid`; returns header fields plus ``axes`` and ``values``."""
    head, axes, body = {}, [], []
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != GRID_MAGIC:
            raise OutputError(f"{path}: not an mlvms grid file")
        for line in fh:
            if line.startswith("# axis"):
                axes.append(np.array([float(v) for v in line.split()[3:]]))
            elif line.startswith("#"):
                key, _, val = line[2:].strip().partition(" ")
                head[key] = val
            else:
                body.append(float(line))
    shape = tuple(int(v) for v in head["shape"].split())
    out = {"level": int(head["level"]), "frame": head["frame"], "axes": axes, "values": np.array(body).reshape(shape)}
    if "time" in head:
        out["time"] = float(head["time"])
    return out


# ---------------------------------------------------------------------------
# problem setup


def build_problem(cfg: RunConfig):
    if cfg.problem == "lpbf":
        raise ConfigError("use the lpbf subcommand for the laser track")
    return get_problem(cfg.problem, **cfg.problem_kw)


def build_map(cfg: RunConfig, problem):
    from .movingsource import static_map, track_map

    mp = cfg.map
    kind = mp.get("kind", "none")
    if kind == "none":
        return None
    box = problem.box[: problem.space_dim]
    try:
        if kind == "track":
            prm = problem.params
            half = float(mp.get("half_width", prm.get("k_s", 0.0)))
            x0 = float(mp.get("x0", prm.get("x0", 0.0)))
            v = float(mp.get("velocity", prm.get("v", 0.0)))
            t_span = problem.box[-1] if problem.has_time else (0.0, 0.0)
            return track_map(box, x0, v, half, t_span)
        ref = tuple(float(v) for v in mp["ref_window"].split())
        phys = tuple(float(v) for v in mp["phys_window"].split())
        return static_map(box, ref, phys, axis=int(mp.get("axis", 0)))
    except KeyError as exc:
        raise ConfigError(f"[map] missing key {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"[map] {exc}") from None


def _solve(cfg: RunConfig, problem, cmap, scale: float = 1.0) -> dict:
    """One solve with every refined level's sizes divided by ``scale``."""
    from .multilevel import solve_m_level, solve_single
    from .td import solve_pgd, solve_td, solve_td_multilevel, td_dofs

    if not cfg.levels:
        raise ConfigError("config has no [level.N] sections")
    specs = cfg.specs(scale)
    hier = build_hierarchy(specs)
    if hier.has_time != problem.has_time:
        raise ConfigError(f"problem {problem.name} {'needs' if problem.has_time else 'has no'} a time axis (dt, t_span)")
    nq = cfg.quad_order
    m = hier.n_levels
    converged, iters = True, 1
    with Timer() as timer:
        if cfg.solver == "full":
            if m == 1:
                st = solve_single(problem, hier.meshes[0], specs[0].hyper, cmap=cmap, nq=nq)
                states = [st]
            else:
                states, rep = solve_m_level(problem, hier, tol=cfg.tol, max_iter=cfg.max_iter, cmap=cmap, nq=nq)
                iters, converged = rep.iterations, rep.converged
            levels = [(s.basis, s.U) for s in states]
            dofs = int(sum(s.U.size for s in states))
            storage = int(sum(s.U.nbytes for s in states))
        else:
            from .chidenn import TensorBasis

            Q = [s.modes for s in specs]
            if cfg.solver == "pgd":
                if m != 1:
                    raise ConfigError("the pgd solver runs on a single level")
                sol, rep = solve_pgd(problem, hier.meshes[0], specs[0].hyper, mode_tol=cfg.deviation_tol, max_modes=cfg.max_modes,
                                     seed=cfg.seed, cmap=cmap, nq=nq, tol=cfg.td_tol)
                sols, iters = [sol], len(rep.mode_norms)
            elif m == 1:
                if Q[0] is None:
                    raise ConfigError("td solver needs Q in [level.1]")
                sol = solve_td(problem, hier.meshes[0], specs[0].hyper, Q[0], tol=cfg.td_tol, max_iter=cfg.td_max_iter,
                               seed=cfg.seed, cmap=cmap, nq=nq)
                sols, iters, converged = [sol], sol.report.sweeps, sol.report.converged
            else:
                if any(q is None for q in Q):
                    raise ConfigError("td solver needs Q in every [level.N]")
                sols, rep = solve_td_multilevel(problem, hier, Q, tol=cfg.tol, max_iter=cfg.max_iter, td_tol=cfg.td_tol,
                                                td_max_iter=cfg.td_max_iter, seed=cfg.seed, cmap=cmap, nq=nq)
                iters, converged = rep.iterations, rep.converged
            bases = [TensorBasis(mesh, spec.hyper) for mesh, spec in zip(hier.meshes, specs)]
            levels = list(zip(bases, sols))
            dofs = td_dofs(sols)
            storage = int(sum(s.storage_bytes for s in sols))
    if problem.exact is not None:
        norms = error_norms(levels, problem, nq=nq, cmap=cmap)
    else:
        norms = {k: float("nan") for k in ("l2", "h1", "energy", "l2_rel", "energy_rel")}
    return {
        "hierarchy": hier, "levels": levels, "norms": norms, "dofs": dofs, "storage_bytes": storage,
        "time_s": timer.elapsed, "iters": iters, "converged": converged,
    }


def _level_fields(res: dict, problem, cfg: RunConfig, cmap):
    """Per-level ``(axes, values, time)`` snapshots for the field files."""
    from .studies import _field_on_grid

    out = []
    for basis, fld in res["levels"]:
        axes = [ax.nodes for ax in basis.mesh.axes]
        t = None
        if problem.has_time:
            lo, hi = basis.mesh.box[-1]
            t = hi if cfg.t_out is None else min(max(cfg.t_out, lo), hi)
            pts = axes[:-1] + [np.array([t])]
            vals = _field_on_grid(basis, fld, pts, None).reshape([len(a) for a in axes[:-1]])
            axes = axes[:-1]
        else:
            vals = _field_on_grid(basis, fld, axes, None)
        out.append((axes, vals, t))
    return out


def _metrics(cfg: RunConfig, problem, res: dict) -> dict:
    n = res["norms"]
    return {
        "problem": problem.name,
        "solver": cfg.solver,
        "levels": len(res["levels"]),
        "h": [list(spec.full_h) for spec in res["hierarchy"].specs],
        "dofs": res["dofs"],
        "err_l2": n["l2"],
        "err_h1": n["h1"],
        "err_energy": n["energy"],
        "err_l2_rel": n["l2_rel"],
        "err_energy_rel": n["energy_rel"],
        "iters": res["iters"],
        "converged": res["converged"],
        "time_s": res["time_s"],
        "storage_bytes": res["storage_bytes"],
        "seed": cfg.seed,
    }


# ---------------------------------------------------------------------------
# subcommands


def run_solve(cfg: RunConfig, out) -> dict:
    problem = build_problem(cfg)
    cmap = build_map(cfg, problem)
    res = _solve(cfg, problem, cmap)
    out = _out_dir(out)
    metrics = _metrics(cfg, problem, res)
    write_json(out / "metrics.json", metrics)
    frame = "physical" if cmap is None else "reference"
    for l, (axes, vals, t) in enumerate(_level_fields(res, problem, cfg, cmap), start=1):
        write_grid(out / f"level_{l}.grid", axes, vals, l, frame, t)
    print(f"{problem.name} [{cfg.solver}, {metrics['levels']} level(s)]: L2 {metrics['err_l2']:.3e}  energy {metrics['err_energy']:.3e}"
          f"  (rel {metrics['err_energy_rel']:.3e})  dofs {metrics['dofs']}  {metrics['time_s']:.2f}s")
    return metrics


def run_converge(cfg: RunConfig, out):
    problem = build_problem(cfg)
    cmap = build_map(cfg, problem)
    norm = cfg.norm if cfg.norm != "auto" else ("l2" if problem.has_time else "energy")
    level = 0 if cfg.refine_levels is None else cfg.refine_levels[0] - 1
    if not 0 <= level < len(cfg.levels):
        raise ConfigError(f"converge.levels refers to a missing level {level + 1}")

    def rung(scale):
        res = _solve(cfg, problem, cmap, scale)
        n = res["norms"]
        hs = tuple(spec.h[0] for spec in res["hierarchy"].specs)
        return ConvergenceRow(hs[0], hs, res["dofs"], n["l2"], n["energy"], res["time_s"], res["iters"], res["storage_bytes"])

    rows, slope = converge(rung, cfg.refine, norm=norm, level=level)
    out = _out_dir(out)
    write_csv(out / "convergence.csv", rows)
    errs = [r.err_energy if norm == "energy" else r.err_l2 for r in rows]
    metrics = {
        "problem": problem.name, "solver": cfg.solver, "norm": norm, "slope": slope, "slope_level": level + 1,
        "plateau": plateau_flag(errs), "rows": [r.as_dict() for r in rows], "seed": cfg.seed,
    }
    write_json(out / "metrics.json", metrics)
    for r in rows:
        print(f"h1 {r.h1:.5g}  h {r.h[level]:.5g}  dofs {r.dofs:8d}  L2 {r.err_l2:.3e}  energy {r.err_energy:.3e}  {r.time_s:.2f}s")
    print(f"slope ({norm}, level {level + 1}): {slope:.3f}  plateau: {metrics['plateau']}")
    return rows, slope


def run_modes(cfg: RunConfig, out) -> dict:
    from .td import estimate_modes

    problem = build_problem(cfg)
    if not cfg.levels:
        raise ConfigError("config has no [level.1] section")
    spec = cfg.specs()[0]
    mesh = spec.mesh()
    with Timer() as timer:
        Q, devs = estimate_modes(problem, mesh, spec.hyper, cfg.deviation_tol, max_modes=cfg.max_modes, seed=cfg.seed, nq=cfg.quad_order)
    out = _out_dir(out)
    try:
        with open(out / "modes.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("Q", "deviation"))
            for q, d in enumerate(devs, start=1):
                w.writerow((q, repr(float(d))))
    except OSError as exc:
        raise OutputError(f"cannot write modes.csv: {exc}") from None
    metrics = {"problem": problem.name, "Q": Q, "deviation_tol": cfg.deviation_tol, "deviations": devs, "time_s": timer.elapsed, "seed": cfg.seed}
    write_json(out / "metrics.json", metrics)
    for q, d in enumerate(devs, start=1):
        print(f"Q={q}: relative energy deviation {d:.3e}")
    print(f"chosen Q = {Q}")
    return metrics


_RUN_KEYS = ("tol", "max_iter", "td_tol", "td_max_iter")


def lpbf_setup_from(cfg: RunConfig, scale: str):
    from .lpbf import SETUPS

    if scale not in SETUPS:
        raise ConfigError(f"scale must be one of {sorted(SETUPS)}")
    kw = {}
    for k, v in cfg.lpbf.items():
        if k in _RUN_KEYS:
            continue
        kw[k] = tuple(int(x) if k in ("Q", "p", "s") else float(x) for x in v) if isinstance(v, tuple) else v
    try:
        return SETUPS[scale](**kw)
    except TypeError as exc:
        raise ConfigError(f"[lpbf] {exc}") from None


def run_lpbf_cmd(cfg: RunConfig, out, scale: str = "desk") -> dict:
    from .lpbf import monotone_decay, run_lpbf

    setup = lpbf_setup_from(cfg, scale)
    try:
        params = LaserParams(**{k: float(v) for k, v in cfg.laser.items()})
    except TypeError as exc:
        raise ConfigError(f"[laser] {exc}") from None
    kw = {k: cfg.lpbf[k] for k in _RUN_KEYS if k in cfg.lpbf}
    res = run_lpbf(setup, params, seed=cfg.seed, **kw)
    t = setup.t_end if cfg.t_out is None else cfg.t_out
    peak = float(res.centre_rise(t)[0])
    decay = {}
    for name, direction in (("+x", (1, 0)), ("-x", (-1, 0)), ("+y", (1, 1)), ("-z", (-1, 2))):
        _, vals = res.profile(direction, t)
        decay[name] = monotone_decay(vals)
    out = _out_dir(out)
    for l, (lev, spec) in enumerate(zip(res.levels, res.hierarchy.specs), start=1):
        axes = [ax.nodes for ax in lev.mesh.axes[:-1]]
        vals = lev.solution.grid_eval(lev.basis, axes + [np.array([t])]).reshape([len(a) for a in axes])
        write_grid(out / f"level_{l}.grid", axes, params.T_amb + vals, l, "reference", t)
    metrics = {
        "scale": setup.scale,
        "t_out": t,
        "T_amb": params.T_amb,
        "peak_temperature": params.T_amb + peak,
        "peak_rise": peak,
        "monotone_decay": decay,
        "dofs": res.dofs,
        "expected_dofs": res.expected_dofs,
        "storage_bytes": res.storage_bytes,
        "iters": res.report.iterations,
        "converged": res.report.converged,
        "time_s": res.time_s,
        "Q": list(setup.Q),
        "h": list(setup.h),
        "dt": list(setup.dt),
        "seed": cfg.seed,
    }
    write_json(out / "metrics.json", metrics)
    print(f"LPBF {setup.scale}: peak {metrics['peak_temperature']:.1f} K at t={t:g} ms (ambient {params.T_amb:g} K), "
          f"dofs {res.dofs}, {res.report.iterations} sweeps, {res.time_s:.1f}s")
    return metrics


def run_verify(seed: int, out=None) -> bool:
    from .checks import run_all
    from .kernels import BACKEND

    checks = run_all(seed)
    for c in checks:
        print(c.line())
    ok = all(c.ok for c in checks)
    print(f"{sum(c.ok for c in checks)}/{len(checks)} checks passed (kernel backend: {BACKEND})")
    if out is not None:
        write_json(_out_dir(out) / "metrics.json", {"backend": BACKEND, "ok": ok, "checks": [
            {"name": c.name, "value": c.value, "tol": c.tol, "ok": c.ok} for c in checks]})
    return ok


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mlvms", description="Multilevel C-HiDeNN / TD solvers and verification studies.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, needs_cfg, help_ in (
        ("solve", True, "one run; writes metrics.json and level_<l>.grid"),
        ("converge", True, "refinement ladder; writes convergence.csv and metrics.json"),
        ("modes", True, "TD mode-count study on level 1"),
        ("lpbf", False, "three-level laser track"),
        ("verify", False, "basis, problem and map invariant checks"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=needs_cfg, help="INI run config")
        p.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
        p.add_argument("--out", default=None, help="output directory (default out/<command>)")
        if name == "lpbf":
            p.add_argument("--scale", choices=("desk", "full"), default="desk")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out or str(Path("out") / args.command)
    try:
        if args.command == "verify":
            return 0 if run_verify(args.seed or 0, args.out) else 1
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = cfg.with_seed(args.seed)
        if args.command == "solve":
            run_solve(cfg, out)
        elif args.command == "converge":
            run_converge(cfg, out)
        elif args.command == "modes":
            run_modes(cfg, out)
        elif args.command == "lpbf":
            run_lpbf_cmd(cfg, out, args.scale)
    except MLVMSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MemoryError:
        print("error: out of memory", file=sys.stderr)
        return SolverError.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return OutputError.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
