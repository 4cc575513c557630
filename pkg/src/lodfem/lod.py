"""Coarse multiscale system: corrected basis, solve, reconstruction, oracle."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.linalg

from .errors import ConfigurationError
from .fem import FeFunction, prolongation_matrix
from .interp import apply_IH, ih_on_coarse

_ORACLE_MAX_COARSE_CELLS = 8
_ORACLE_MAX_LEVELS = 2


@dataclass
class MsBasis:
    R: sp.csc_matrix               # (n_fine_nodes, n_free_coarse)
    free_coarse_nodes: np.ndarray  # column z belongs to this coarse node


def assemble_ms_basis(cfmap, correctors):
    """Corrected coarse basis: column = hat + sum of its element correctors."""
    coarse = cfmap.coarse
    free = np.flatnonzero(~coarse.is_dirichlet)
    col_of = np.full(coarse.n_nodes, -1, dtype=np.int64)
    col_of[free] = np.arange(free.size)

    rows, cols, vals = [], [], []
    for T in range(coarse.n_elems):
        if T not in correctors.element_values:
            raise KeyError(f"missing element correctors for coarse element {T}")
        patch = correctors.patches[T]
        verts = correctors.coarse_vertices[T]
        evals = correctors.element_values[T]
        for j, z in enumerate(verts):
            c = col_of[z]
            if c < 0:
                continue
            rows.append(patch.interior_fine_dofs)
            cols.append(np.full(patch.interior_fine_dofs.size, c, dtype=np.int64))
            vals.append(evals[j])
    Q = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(cfmap.fine.n_nodes, free.size),
    ).tocsc()
    R = (prolongation_matrix(cfmap)[:, free] + Q).tocsc()
    R.sort_indices()
    return MsBasis(R=R, free_coarse_nodes=free)


def solve_lod(cfmap, S_fine, msbasis, correctors, load_vec, neumann_vec=None, g_h=None):
    """Solve the coarse corrected system and reconstruct the fine-scale field.

    Returns (v_H, u_lod): the coarse coefficient function and the
    reconstructed approximation  basis*v_H + g_h + (boundary-data correctors)
    - (Neumann correctors).
    """
    R = msbasis.R
    n_fine = cfmap.fine.n_nodes
    gh = np.zeros(n_fine) if g_h is None else np.asarray(getattr(g_h, "values", g_h), dtype=float)
    base = gh + correctors.dirichlet_total() - correctors.neumann_total()

    rhs_fine = load_vec - S_fine @ base
    if neumann_vec is not None:
        rhs_fine = rhs_fine + neumann_vec
    rhs = R.T @ rhs_fine

    K = (R.T @ (S_fine @ R)).toarray()
    K = 0.5 * (K + K.T)
    try:
        cho = scipy.linalg.cho_factor(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("coarse multiscale system is singular") from exc
    vh = scipy.linalg.cho_solve(cho, rhs)

    v_H = np.zeros(cfmap.coarse.n_nodes)
    v_H[msbasis.free_coarse_nodes] = vh
    u = R @ vh + base
    return FeFunction("coarse", v_H), FeFunction("fine", u)


def ideal_projection_oracle(cfmap, S_fine, clement, u_h):
    """Dense realization of the no-localization identity: interpolate to the
    coarse space, lift back, and remove the detail-space energy projection.

    Only feasible on desk-size meshes; guarded accordingly.
    """
    if cfmap.coarse.n_cells > _ORACLE_MAX_COARSE_CELLS or cfmap.levels > _ORACLE_MAX_LEVELS:
        raise ConfigurationError(
            "ideal_projection_oracle is dense; limit is "
            f"n_cells<={_ORACLE_MAX_COARSE_CELLS}, levels<={_ORACLE_MAX_LEVELS}"
        )
    fine = cfmap.fine
    uh = np.asarray(getattr(u_h, "values", u_h), dtype=float)
    freef = np.flatnonzero(~fine.is_dirichlet)

    Wmat = clement.weights[:, freef].toarray()
    N = scipy.linalg.null_space(Wmat)
    Sff = S_fine[freef][:, freef].toarray()

    coarse_coeff = apply_IH(clement, uh).values[clement.free_coarse_nodes]
    Avh = ih_on_coarse(clement, cfmap).toarray()
    vc = np.linalg.solve(Avh, coarse_coeff)
    v_fine = prolongation_matrix(cfmap)[:, clement.free_coarse_nodes] @ vc

    g = N.T @ (Sff @ v_fine[freef])
    x = np.linalg.solve(N.T @ Sff @ N, g)
    out = v_fine.copy()
    out[freef] -= N @ x
    return FeFunction("fine", out)
