"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy versions
take over. Set ``MLVMS_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("MLVMS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

cubic_spline = _impl.cubic_spline
cubic_spline_deriv = _impl.cubic_spline_deriv
eval_basis_1d = _impl.eval_basis_1d
eval_patch_nd = _impl.eval_patch_nd
shifted_kernel = _kernels_py.shifted_kernel

__all__ = [
    "BACKEND",
    "cubic_spline",
    "cubic_spline_deriv",
    "eval_basis_1d",
    "eval_patch_nd",
    "shifted_kernel",
]
