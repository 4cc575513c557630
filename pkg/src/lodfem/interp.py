"""Weighted Clement-type quasi-interpolation onto the coarse space.

The operator averages a fine P1 field against each free coarse hat:
value at coarse node z = (v, hat_z) / (1, hat_z). Its kernel is the detail
space used by all corrector problems; the weight rows double as the linear
constraints that render kernel membership as C w = 0.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import FeFunction, assemble_mass, prolongation_matrix


@dataclass
class ClementOp:
    weights: sp.csr_matrix        # (n_free_coarse, n_fine_nodes), entries (phi_x, hat_z)
    denominators: np.ndarray      # (n_free_coarse,), integrals of each hat
    free_coarse_nodes: np.ndarray  # coarse node ids, ascending
    row_of_node: np.ndarray       # coarse node id -> row index or -1
    n_coarse_nodes: int


def assemble_clement(cfmap):
    """Exact integrals of products of coarse and fine hats, free rows only."""
    P = prolongation_matrix(cfmap)
    M = assemble_mass(cfmap.fine)
    W_all = (M @ P).T.tocsr()  # rows: coarse nodes, cols: fine nodes
    free = np.flatnonzero(~cfmap.coarse.is_dirichlet)
    W = W_all[free]
    W.sort_indices()
    denom = np.asarray(W.sum(axis=1)).ravel()
    row_of = np.full(cfmap.coarse.n_nodes, -1, dtype=np.int64)
    row_of[free] = np.arange(free.size)
    return ClementOp(
        weights=W,
        denominators=denom,
        free_coarse_nodes=free,
        row_of_node=row_of,
        n_coarse_nodes=cfmap.coarse.n_nodes,
    )


def apply_IH(op, v):
    """Interpolate a fine nodal field; zero at constrained coarse nodes."""
    vals = v.values if isinstance(v, FeFunction) else v
    out = np.zeros(op.n_coarse_nodes)
    out[op.free_coarse_nodes] = (op.weights @ vals) / op.denominators
    return FeFunction("coarse", out)


def constraint_rows(op, patch):
    """Weight rows of the patch's active coarse nodes, restricted to the
    patch's interior fine DOFs. Rows that lose all support are dropped."""
    rows = op.row_of_node[patch.active_coarse_nodes]
    rows = rows[rows >= 0]
    C = op.weights[rows][:, patch.interior_fine_dofs].tocsr()
    nz = np.flatnonzero(np.diff(C.indptr) > 0)
    if nz.size < C.shape[0]:
        C = C[nz]
    return C


def ih_on_coarse(op, cfmap):
    """Matrix of the interpolation restricted to the coarse space itself
    (free nodes x free nodes); invertible, used by oracles and tests."""
    P = prolongation_matrix(cfmap)
    A = op.weights @ P[:, op.free_coarse_nodes]
    return sp.csr_matrix(A.multiply(1.0 / op.denominators[:, None]))
