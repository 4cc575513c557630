"""P1 finite element assembly, Dirichlet extension, reference solve, norms."""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import ModelError
from .linsolve import cg_solve
from .mesh import NEUMANN

_GAUSS2 = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


@dataclass
class CoefField:
    """Piecewise-constant diffusion values on fine elements."""
    values: np.ndarray
    alpha: float
    beta: float


@dataclass
class FeFunction:
    space: str  # 'coarse' | 'fine'
    values: np.ndarray


@dataclass
class ErrorReport:
    rel_l2: float
    rel_h1: float
    abs_l2: float
    abs_h1: float


def sample_coefficient(problem, mesh):
    """Evaluate the diffusion coefficient at element barycenters."""
    b = mesh.element_barycenters()
    values = np.asarray(problem.coefficient(b[:, 0], b[:, 1]), dtype=float)
    if values.shape != (mesh.n_elems,):
        values = np.broadcast_to(values, (mesh.n_elems,)).copy()
    alpha = float(values.min())
    beta = float(values.max())
    if alpha <= 0.0:
        raise ModelError(f"coefficient must be positive, sampled min {alpha}")
    return CoefField(values=values, alpha=alpha, beta=beta)


def _coef_values(mesh, coef):
    if coef is None:
        return np.ones(mesh.n_elems)
    values = coef.values if isinstance(coef, CoefField) else np.asarray(coef, dtype=float)
    if values.shape[0] != mesh.n_elems:
        raise ValueError(
            f"coefficient has {values.shape[0]} values for {mesh.n_elems} elements"
        )
    return values


def _assemble(mesh, local):
    e = mesh.elements
    rows = np.repeat(e, 3, axis=1).ravel()
    cols = np.tile(e, (1, 3)).ravel()
    mat = sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)
    ).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_stiffness(mesh, coef=None):
    """Stiffness matrix over all nodes; no boundary conditions applied."""
    values = _coef_values(mesh, coef)
    local = _kernels.stiffness_local(
        mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.elements, values
    )
    return _assemble(mesh, local)


def assemble_mass(mesh):
    """Exact P1 mass matrix."""
    local = _kernels.mass_local(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.elements)
    return _assemble(mesh, local)


def assemble_load(mesh, f):
    """Load vector by the 3-point edge-midpoint rule (exact for quadratics)."""
    p = mesh.nodes[mesh.elements]  # (ne, 3, 2)
    area = mesh.element_areas()
    mids = 0.5 * (p + np.roll(p, -1, axis=1))  # m0=(p0+p1)/2, m1=(p1+p2)/2, m2=(p2+p0)/2
    fv = np.asarray(f(mids[..., 0], mids[..., 1]), dtype=float)
    if fv.shape != mids.shape[:2]:
        fv = np.broadcast_to(fv, mids.shape[:2]).copy()
    w = area[:, None] / 6.0
    contrib = np.empty_like(fv)
    contrib[:, 0] = w[:, 0] * (fv[:, 0] + fv[:, 2])
    contrib[:, 1] = w[:, 0] * (fv[:, 0] + fv[:, 1])
    contrib[:, 2] = w[:, 0] * (fv[:, 1] + fv[:, 2])
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elements, contrib)
    return out


def assemble_neumann(mesh, q, edges=None):
    """Boundary flux vector from 2-point Gauss quadrature on Neumann edges.

    `edges` restricts assembly to the given rows of mesh.boundary_edges
    (already Neumann-tagged); by default all Neumann edges are used.
    """
    out = np.zeros(mesh.n_nodes)
    if edges is None:
        edges = mesh.boundary_edges[mesh.boundary_tags == NEUMANN]
        if edges.shape[0] == 0:
            warnings.warn("Neumann data given but the mesh has no Neumann edges")
            return out
    if edges.shape[0] == 0:
        return out
    pa = mesh.nodes[edges[:, 0]]
    pb = mesh.nodes[edges[:, 1]]
    length = np.linalg.norm(pb - pa, axis=1)
    for t in _GAUSS2:
        x = pa + t * (pb - pa)
        qv = np.asarray(q(x[:, 0], x[:, 1]), dtype=float)
        qv = np.broadcast_to(qv, (edges.shape[0],))
        np.add.at(out, edges[:, 0], 0.5 * length * (1.0 - t) * qv)
        np.add.at(out, edges[:, 1], 0.5 * length * t * qv)
    return out


def prolongation_matrix(cfmap):
    """Sparse interpolation from coarse nodal values to fine nodal values.

    Exact for P1 fields: column z is the coarse hat at z sampled on fine nodes.
    Cached on the map; returned in CSC form for cheap column access.
    """
    cached = getattr(cfmap, "_prolongation", None)
    if cached is not None:
        return cached
    nc = cfmap.coarse.n_cells
    m = cfmap.ratio
    nf = cfmap.fine.n_cells
    idx = np.arange(cfmap.fine.n_nodes)
    i = idx % (nf + 1)
    j = idx // (nf + 1)
    ci = np.minimum(i // m, nc - 1)
    cj = np.minimum(j // m, nc - 1)
    u = i / m - ci
    v = j / m - cj
    v00 = cj * (nc + 1) + ci
    v10 = v00 + 1
    v11 = v00 + nc + 2
    v01 = v00 + nc + 1
    lower = u >= v
    cols = np.where(
        lower[:, None],
        np.column_stack([v00, v10, v11]),
        np.column_stack([v00, v11, v01]),
    )
    w_low = np.column_stack([1.0 - u, u - v, v])
    w_up = np.column_stack([1.0 - v, u, v - u])
    vals = np.where(lower[:, None], w_low, w_up)
    rows = np.repeat(idx, 3)
    P = sp.coo_matrix(
        (vals.ravel(), (rows, cols.ravel())),
        shape=(cfmap.fine.n_nodes, cfmap.coarse.n_nodes),
    ).tocsc()
    P.eliminate_zeros()
    cfmap._prolongation = P
    return P


def build_dirichlet_extension(cfmap, g):
    """Two-stage boundary extension: coarse interpolant plus fine boundary trace.

    g_H carries g at coarse Dirichlet nodes and is zero elsewhere; g_h equals g
    at fine Dirichlet nodes and the interpolated g_H at all remaining nodes,
    which keeps the extension bounded as the fine mesh is refined.
    """
    coarse, fine = cfmap.coarse, cfmap.fine
    gH = np.zeros(coarse.n_nodes)
    cd = np.flatnonzero(coarse.is_dirichlet)
    if cd.size:
        gH[cd] = np.asarray(g(coarse.nodes[cd, 0], coarse.nodes[cd, 1]), dtype=float)
    gh = prolongation_matrix(cfmap) @ gH
    fd = np.flatnonzero(fine.is_dirichlet)
    if fd.size:
        gh[fd] = np.asarray(g(fine.nodes[fd, 0], fine.nodes[fd, 1]), dtype=float)
    return FeFunction("coarse", gH), FeFunction("fine", gh)


def solve_reference(mesh, coef, f, q, g_h, tol=1e-10, maxit=None):
    """Galerkin solve on the fine mesh; returns (u_h, cg iterations).

    The solution satisfies u_h = v_h + g_h with v_h zero on the Dirichlet
    boundary and tested against all free fine basis functions.
    """
    S = assemble_stiffness(mesh, coef)
    gh = g_h.values if isinstance(g_h, FeFunction) else np.asarray(g_h, dtype=float)
    b = assemble_load(mesh, f) - S @ gh
    if q is not None:
        b = b + assemble_neumann(mesh, q)
    free = np.flatnonzero(~mesh.is_dirichlet)
    x, iters = cg_solve(S[free][:, free], b[free], tol=tol, maxit=maxit)
    u = gh.copy()
    u[free] += x
    return FeFunction("fine", u), iters


def element_grad_energy(mesh, values, coef=None):
    """Per-element integral of a_e |grad v|^2 (a=1 when coef is None)."""
    vals = values.values if isinstance(values, FeFunction) else values
    c = None if coef is None else _coef_values(mesh, coef)
    return _kernels.grad_energy(
        mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.elements, vals, c
    )


def compute_errors(mesh, u_ref, u_other):
    """Relative/absolute L2 and full H1 errors against the reference field."""
    ur = u_ref.values if isinstance(u_ref, FeFunction) else u_ref
    uo = u_other.values if isinstance(u_other, FeFunction) else u_other
    M = assemble_mass(mesh)
    S1 = assemble_stiffness(mesh)
    e = ur - uo
    l2 = lambda w: float(np.sqrt(max(w @ (M @ w), 0.0)))
    h1 = lambda w: float(np.sqrt(max(w @ (M @ w) + w @ (S1 @ w), 0.0)))
    ref_l2 = l2(ur)
    ref_h1 = h1(ur)
    if ref_l2 == 0.0 or ref_h1 == 0.0:
        raise ValueError("reference norms vanish; relative errors undefined")
    abs_l2 = l2(e)
    abs_h1 = h1(e)
    return ErrorReport(
        rel_l2=abs_l2 / ref_l2, rel_h1=abs_h1 / ref_h1, abs_l2=abs_l2, abs_h1=abs_h1
    )
