"""Compiled vs pure-numpy shape-function kernels.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json PATH]

Each kernel is fed identical arguments taken from a real basis; outputs are
compared before timing. Reports best-of-N wall time per backend.
"""

from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from mlvms import _kernels_py
from mlvms.chidenn import Basis1D, build_patch_basis, kernel_shift
from mlvms.mesh import HyperParams, build_tensor_mesh

try:
    from mlvms import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def _basis_args(n_elem=240, npts=20000, s=3, p=3, seed=0):
    mesh = build_tensor_mesh(((0.0, 20.0),), (20.0 / n_elem,))
    hyper = HyperParams(s=s, p=p)
    b = Basis1D(mesh.axes[0], hyper)
    x = np.ascontiguousarray(np.random.default_rng(seed).uniform(0.0, 20.0, npts))
    return (x, b.lo, b.h, b.axis.n_elem, b.patch_start, b.centers, b.A, b.K, b.ns, b.radius, b.scale, b.deg, kernel_shift(hyper))


def _patch_args(npts=4000, s=2, p=3, seed=0):
    mesh = build_tensor_mesh(((0.0, 1.0), (0.0, 1.0)), (1.0 / 16, 1.0 / 16))
    pb = build_patch_basis(mesh, mesh.n_nodes // 2, HyperParams(s=s, p=p))
    lo, hi = pb.coords.min(axis=0), pb.coords.max(axis=0)
    x = np.random.default_rng(seed).uniform(lo, hi, (npts, 2))
    return (x, pb.coords, pb.origin, pb.scale, pb.hvec, pb.radius, pb.A, pb.K, pb.exps, pb.shift)


def _spline_args(n=200000, seed=0):
    return (np.random.default_rng(seed).uniform(0.0, 1.5, n),)


CASES = {
    "cubic_spline": ("cubic_spline", _spline_args),
    "eval_basis_1d": ("eval_basis_1d", _basis_args),
    "eval_patch_nd": ("eval_patch_nd", _patch_args),
}


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def run(repeat: int = 5) -> list:
    rows = []
    for name, (fn, make) in CASES.items():
        args = make()
        py = getattr(_kernels_py, fn)
        t_py = min(timeit.repeat(lambda: py(*args), number=1, repeat=repeat))
        row = {"kernel": name, "python_s": t_py, "compiled_s": None, "speedup": None, "max_diff": None}
        if _compiled is not None:
            cy = getattr(_compiled, fn)
            row["max_diff"] = _max_diff(py(*args), cy(*args))
            t_cy = min(timeit.repeat(lambda: cy(*args), number=1, repeat=repeat))
            row["compiled_s"] = t_cy
            row["speedup"] = t_py / t_cy
        rows.append(row)
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write the rows as JSON")
    args = ap.parse_args(argv)
    rows = run(args.repeat)
    if _compiled is None:
        print("compiled extension not available; timing the numpy backend only")
    print(f"{'kernel':<16}{'python [ms]':>14}{'compiled [ms]':>16}{'speedup':>10}{'max |diff|':>12}")
    for r in rows:
        cy = f"{1e3 * r['compiled_s']:16.2f}" if r["compiled_s"] is not None else f"{'-':>16}"
        sp_ = f"{r['speedup']:10.1f}" if r["speedup"] is not None else f"{'-':>10}"
        md = f"{r['max_diff']:12.1e}" if r["max_diff"] is not None else f"{'-':>12}"
        print(f"{r['kernel']:<16}{1e3 * r['python_s']:14.2f}{cy}{sp_}{md}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
