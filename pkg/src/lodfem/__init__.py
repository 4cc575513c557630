"""Localized orthogonal decomposition multiscale FEM on the unit square.

Builds a corrected coarse basis from local fine-scale corrector problems,
including boundary correctors for inhomogeneous Dirichlet and Neumann data,
and compares against a fine-grid reference solve.
"""

__version__ = "0.1.0"

from .corrector import PatchPolicy, compute_all_correctors, decay_profile
from .errors import ConfigurationError, ModelError, SolverError
from .fem import (
    CoefField,
    FeFunction,
    assemble_load,
    assemble_mass,
    assemble_neumann,
    assemble_stiffness,
    build_dirichlet_extension,
    compute_errors,
    sample_coefficient,
    solve_reference,
)
from .interp import apply_IH, assemble_clement
from .linsolve import KktSystem, cg_solve, saddle_solve
from .lod import assemble_ms_basis, ideal_projection_oracle, solve_lod
from .mesh import (
    build_patch_coarse_layers,
    build_patch_fine_layers,
    build_patch_global,
    build_structured_mesh,
    patch_category,
    patch_stats,
    refine_uniform,
)
from .problems import mp1, mp2, mp3

__all__ = [
    "CoefField",
    "ConfigurationError",
    "FeFunction",
    "KktSystem",
    "ModelError",
    "PatchPolicy",
    "SolverError",
    "apply_IH",
    "assemble_clement",
    "assemble_load",
    "assemble_mass",
    "assemble_ms_basis",
    "assemble_neumann",
    "assemble_stiffness",
    "build_dirichlet_extension",
    "build_patch_coarse_layers",
    "build_patch_fine_layers",
    "build_patch_global",
    "build_structured_mesh",
    "cg_solve",
    "compute_all_correctors",
    "compute_errors",
    "decay_profile",
    "ideal_projection_oracle",
    "mp1",
    "mp2",
    "mp3",
    "patch_category",
    "patch_stats",
    "refine_uniform",
    "sample_coefficient",
    "saddle_solve",
    "solve_lod",
    "solve_reference",
]
