"""Multilevel variational multiscale solvers with C-HiDeNN shape functions.

Submodules: ``mesh`` (structured meshes, level hierarchies), ``chidenn``
(convolution-patch shape functions), ``assembly`` (weak forms, quadrature,
linear solves), ``multilevel`` (alternating-level ML-VMS), ``td``
(tensor-decomposition solvers), ``movingsource`` (moving-frame maps),
``problems`` (manufactured problems, laser source), ``lpbf`` (the
three-level laser track), ``studies`` (norms, ladders, fits) and ``cli``.
"""

from .chidenn import Basis1D, PatchBasis, ShapeEval, TensorBasis, build_patch_basis, eval_shape, interpolate
from .errors import ConfigError, ConvergenceError, MeshError, MLVMSError, OutputError, SingularSystemError, SolverError
from .kernels import BACKEND, cubic_spline
from .mesh import Axis, HyperParams, LevelSpec, MultilevelMesh, TensorMesh, build_hierarchy, build_tensor_mesh, nodal_patch
from .multilevel import coarse_projection, composite_eval, solve_m_level, solve_single, solve_two_level
from .problems import LaserParams, get_problem, heat1d, lpbf_source, moving1d, moving3d, poisson2d_gaussians
from .studies import error_norms, estimate_optimal_ratio, fit_error_coefficients
from .td import TDSolution, estimate_modes, solve_pgd, solve_td, solve_td_multilevel, td_eval

__version__ = "0.1.0"

__all__ = [
    "Axis", "BACKEND", "Basis1D", "ConfigError", "ConvergenceError", "HyperParams", "LaserParams", "LevelSpec", "MLVMSError",
    "MeshError", "MultilevelMesh", "OutputError", "PatchBasis", "ShapeEval", "SingularSystemError", "SolverError", "TDSolution",
    "TensorBasis", "TensorMesh", "build_hierarchy", "build_patch_basis", "build_tensor_mesh", "coarse_projection", "composite_eval",
    "cubic_spline", "error_norms", "estimate_modes", "estimate_optimal_ratio", "eval_shape", "fit_error_coefficients", "get_problem",
    "heat1d", "interpolate", "lpbf_source", "moving1d", "moving3d", "nodal_patch", "poisson2d_gaussians", "solve_m_level",
    "solve_pgd", "solve_single", "solve_td", "solve_td_multilevel", "solve_two_level", "td_eval",
]
