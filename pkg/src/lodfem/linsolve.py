"""Sparse SPD solves and equality-constrained (KKT) saddle-point solves.

The saddle solver eliminates the constraint block through a Schur complement:
S is factorized once (sparse LU), the small dense Schur matrix C S^-1 C^T is
diagonalized, and every right-hand side then costs one triangular solve plus
a few dense products. Factorizations are reused across the many right-hand
sides that share a patch.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import SolverError

_RANK_TOL = 1e-13


def cg_solve(S, b, tol=1e-10, maxit=None, x0=None):
    """Jacobi-preconditioned conjugate gradients; returns (x, iterations).

    Raises SolverError (carrying the achieved residual) on non-convergence.
    """
    n = b.shape[0]
    if n == 0:
        return np.zeros(0), 0
    if maxit is None:
        maxit = max(1000, 10 * n)
    S = S.tocsr()
    diag = S.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has nonpositive diagonal entries; not SPD")
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    x, iters, relres = _kernels.pcg(
        S.indptr,
        S.indices,
        np.ascontiguousarray(S.data, dtype=np.float64),
        np.ascontiguousarray(diag, dtype=np.float64),
        np.ascontiguousarray(b, dtype=np.float64),
        np.ascontiguousarray(x0, dtype=np.float64),
        float(tol),
        int(maxit),
    )
    if relres > tol:
        raise SolverError(
            f"cg did not converge in {iters} iterations (relative residual {relres:.3e})",
            residual=relres,
            iterations=iters,
        )
    return x, iters


@dataclass
class KktSystem:
    S: sp.spmatrix  # SPD on the free DOFs
    C: sp.spmatrix  # constraint rows, may be rank deficient
    b: np.ndarray


class SaddleSolver:
    """Factorized solver for min w'Sw - 2b'w subject to Cw = 0."""

    def __init__(self, S, C=None):
        self.n = S.shape[0]
        self._lu = spla.splu(sp.csc_matrix(S))
        if C is not None and C.shape[0] > 0:
            C = C.tocsr()
            nnz_rows = np.flatnonzero(np.diff(C.indptr) > 0)
            if nnz_rows.size < C.shape[0]:
                C = C[nnz_rows]
        if C is None or C.shape[0] == 0:
            self.m = 0
            self.C = None
            return
        self.m = C.shape[0]
        self.C = C
        self._Y = self._lu.solve(C.T.toarray())  # S^-1 C^T, (n, m)
        G = C @ self._Y
        G = 0.5 * (G + G.T)
        evals, evecs = np.linalg.eigh(G)
        keep = evals > max(evals.max(), 0.0) * _RANK_TOL
        if not np.all(keep):
            warnings.warn(
                f"dropping {int(np.count_nonzero(~keep))} dependent constraint row(s)"
            )
        self._evals = evals[keep]
        self._evecs = evecs[:, keep]

    def solve(self, b):
        """Returns (w, multipliers)."""
        x0 = self._lu.solve(b)
        if self.m == 0:
            return x0, np.zeros(0)
        lam = self._evecs @ ((self._evecs.T @ (self.C @ x0)) / self._evals)
        return x0 - self._Y @ lam, lam


def saddle_solve(system, tol_r=1e-10, tol_c=1e-10):
    """Solve the KKT system; verifies the residual and constraint tolerances."""
    solver = SaddleSolver(system.S, system.C)
    w, lam = solver.solve(system.b)
    nb = np.linalg.norm(system.b)
    res = system.S @ w - system.b
    if solver.m:
        res = res + solver.C.T @ lam
    rnorm = np.linalg.norm(res)
    if rnorm > tol_r * max(nb, 1e-300):
        raise SolverError(
            f"saddle solve residual {rnorm:.3e} exceeds {tol_r:.1e}*|b|",
            residual=rnorm,
        )
    if solver.m:
        cnorm = np.linalg.norm(solver.C @ w)
        scale = max(spla.norm(solver.C) * np.linalg.norm(w), 1e-300)
        if cnorm > tol_c * scale:
            raise SolverError(
                f"constraint violation {cnorm:.3e} exceeds {tol_c:.1e}*scale",
                residual=cnorm,
            )
    return w
