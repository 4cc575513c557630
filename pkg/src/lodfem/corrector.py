"""Local corrector problems on admissible patches.

Per coarse element T three kinds of correctors are computed, all living in
the patch-local detail space (fine functions vanishing outside the patch,
on its interior boundary, on the Dirichlet boundary, and in the kernel of
the quasi-interpolation):

  element corrector    (A grad w, grad v) = -(A grad hat_z, grad v)_T
  boundary-data corrector                  -(A grad g_h, grad v)_T
  Neumann corrector                        -(q, v)_{T n Gamma_N}

One factorization per patch serves all right-hand sides of that patch; with
global patches a single factorization serves every element.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigurationError
from .fem import assemble_neumann, assemble_stiffness, prolongation_matrix
from .interp import constraint_rows
from .linsolve import SaddleSolver
from .mesh import (
    NEUMANN,
    Patch,
    PatchStats,
    build_patch_coarse_layers,
    build_patch_fine_layers,
    build_patch_global,
)

GRAD_SCREEN = 1e-28  # skip boundary-data correctors below this gradient mass

CACHE_FORMAT_VERSION = 1


@dataclass
class PatchPolicy:
    mode: str  # 'coarse' | 'fine' | 'global'
    layers: int = 0

    def describe(self):
        return self.mode if self.mode == "global" else f"{self.mode}:{self.layers}"


def build_patch(cfmap, T, policy):
    if policy.mode == "global":
        return build_patch_global(cfmap, T)
    if policy.mode == "coarse":
        return build_patch_coarse_layers(cfmap, T, policy.layers)
    if policy.mode == "fine":
        return build_patch_fine_layers(cfmap, T, policy.layers)
    raise ConfigurationError(f"unknown patch mode {policy.mode!r}")


@dataclass
class CorrectorSet:
    n_fine_nodes: int
    coarse_vertices: np.ndarray          # (nT, 3) coarse node ids per element
    patches: dict                        # T -> Patch
    element_values: dict                 # T -> (3, n_interior)
    dirichlet_values: dict               # T -> (n_interior,)
    neumann_values: dict                 # T -> (n_interior,)
    patch_elem_counts: np.ndarray = field(default=None)
    patch_node_counts: np.ndarray = field(default=None)

    def scatter(self, T, values):
        out = np.zeros(self.n_fine_nodes)
        out[self.patches[T].interior_fine_dofs] = values
        return out

    def element_corrector(self, T, local_vertex):
        return self.scatter(T, self.element_values[T][local_vertex])

    def dirichlet_total(self):
        out = np.zeros(self.n_fine_nodes)
        for T, vals in self.dirichlet_values.items():
            out[self.patches[T].interior_fine_dofs] += vals
        return out

    def neumann_total(self):
        out = np.zeros(self.n_fine_nodes)
        for T, vals in self.neumann_values.items():
            out[self.patches[T].interior_fine_dofs] += vals
        return out

    def stats(self):
        if self.patch_elem_counts is None:
            raise ValueError("patch statistics not recorded")
        return PatchStats(
            avg_fine_elems=float(self.patch_elem_counts.mean()),
            avg_fine_nodes=float(self.patch_node_counts.mean()),
        )


def stiffness_apply_restricted(mesh, coef_values, elems, vec):
    """Apply the stiffness form integrated over `elems` only to a nodal field."""
    tris = mesh.elements[elems]
    loc = _kernels.stiffness_local(
        mesh.nodes[:, 0], mesh.nodes[:, 1], tris, coef_values[elems]
    )
    r = np.einsum("eij,ej->ei", loc, vec[tris])
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, tris, r)
    return out


def neumann_edges_by_coarse(cfmap):
    """Group Neumann boundary-edge indices by the coarse element owning them."""
    fine = cfmap.fine
    rows = np.flatnonzero(fine.boundary_tags == NEUMANN)
    if rows.size == 0:
        return {}
    nf = fine.n_cells
    edges = fine.boundary_edges[rows]
    mid = 0.5 * (fine.nodes[edges[:, 0]] + fine.nodes[edges[:, 1]])
    owner = np.empty(rows.size, dtype=np.int64)
    cell_i = np.minimum((mid[:, 0] * nf).astype(np.int64), nf - 1)
    cell_j = np.minimum((mid[:, 1] * nf).astype(np.int64), nf - 1)
    bottom = np.abs(mid[:, 1]) < 1e-12
    top = np.abs(mid[:, 1] - 1.0) < 1e-12
    left = np.abs(mid[:, 0]) < 1e-12
    right = np.abs(mid[:, 0] - 1.0) < 1e-12
    owner[bottom] = 2 * cell_i[bottom]                       # lower of cell (i, 0)
    owner[top] = 2 * ((nf - 1) * nf + cell_i[top]) + 1       # upper of cell (i, nf-1)
    owner[left] = 2 * (cell_j[left] * nf) + 1                # upper of cell (0, j)
    owner[right] = 2 * (cell_j[right] * nf + nf - 1)         # lower of cell (nf-1, j)
    coarse_owner = cfmap.fine_elem_to_coarse[owner]
    groups = {}
    for r, T in zip(rows, coarse_owner):
        groups.setdefault(int(T), []).append(int(r))
    return {T: np.array(v) for T, v in groups.items()}


def _patch_solver(S_fine, clement, patch):
    idx = patch.interior_fine_dofs
    S_loc = S_fine[idx][:, idx]
    C = constraint_rows(clement, patch)
    return SaddleSolver(S_loc, C)


def _hat_columns(cfmap, T):
    """Fine-node prolongations of the three vertex hats of coarse element T."""
    P = prolongation_matrix(cfmap)
    verts = cfmap.coarse.elements[T]
    return verts, P[:, verts].toarray()


def element_corrector(cfmap, coef, clement, T, local_vertex, patch, S_fine=None):
    """Corrector of one vertex hat of T on the given patch, as a full fine vector."""
    if S_fine is None:
        S_fine = assemble_stiffness(cfmap.fine, coef)
    solver = _patch_solver(S_fine, clement, patch)
    _, hats = _hat_columns(cfmap, T)
    elems = cfmap.fine_elems_of_coarse(T)
    rhs = -stiffness_apply_restricted(cfmap.fine, coef.values, elems, hats[:, local_vertex])
    w, _ = solver.solve(rhs[patch.interior_fine_dofs])
    out = np.zeros(cfmap.fine.n_nodes)
    out[patch.interior_fine_dofs] = w
    return out


def dirichlet_corrector(cfmap, coef, clement, T, g_h, patch, S_fine=None):
    """Corrector driven by the boundary extension restricted to T."""
    if S_fine is None:
        S_fine = assemble_stiffness(cfmap.fine, coef)
    gh = np.asarray(getattr(g_h, "values", g_h), dtype=float)
    solver = _patch_solver(S_fine, clement, patch)
    elems = cfmap.fine_elems_of_coarse(T)
    rhs = -stiffness_apply_restricted(cfmap.fine, coef.values, elems, gh)
    w, _ = solver.solve(rhs[patch.interior_fine_dofs])
    out = np.zeros(cfmap.fine.n_nodes)
    out[patch.interior_fine_dofs] = w
    return out


def neumann_corrector(cfmap, coef, clement, T, q, patch, S_fine=None):
    """Corrector driven by the Neumann flux on T's share of the boundary."""
    if S_fine is None:
        S_fine = assemble_stiffness(cfmap.fine, coef)
    groups = neumann_edges_by_coarse(cfmap)
    if T not in groups:
        return np.zeros(cfmap.fine.n_nodes)
    solver = _patch_solver(S_fine, clement, patch)
    qvec = assemble_neumann(cfmap.fine, q, edges=cfmap.fine.boundary_edges[groups[T]])
    w, _ = solver.solve(-qvec[patch.interior_fine_dofs])
    out = np.zeros(cfmap.fine.n_nodes)
    out[patch.interior_fine_dofs] = w
    return out


def compute_all_correctors(
    cfmap,
    coef,
    clement,
    policy,
    g_h=None,
    q=None,
    S_fine=None,
    threads=1,
    progress=False,
):
    """Solve every local corrector problem; deterministic in content.

    Element correctors are computed for all three vertex hats of every coarse
    element (the redundant third is kept as a correctness check: per element
    they must sum to zero). Boundary-data correctors are computed wherever the
    extension has gradient mass on T; Neumann correctors wherever T carries a
    piece of the Neumann boundary.
    """
    fine = cfmap.fine
    coarse = cfmap.coarse
    if S_fine is None:
        S_fine = assemble_stiffness(fine, coef)
    P = prolongation_matrix(cfmap)

    gh = None
    grad_mass = None
    if g_h is not None:
        gh = np.asarray(getattr(g_h, "values", g_h), dtype=float)
        ge = _kernels.grad_energy(fine.nodes[:, 0], fine.nodes[:, 1], fine.elements, gh)
        grad_mass = np.zeros(coarse.n_elems)
        np.add.at(grad_mass, cfmap.fine_elem_to_coarse, ge)

    qgroups = neumann_edges_by_coarse(cfmap) if q is not None else {}

    shared = None
    if policy.mode == "global":
        patch0 = build_patch_global(cfmap, 0)
        shared = (patch0, _patch_solver(S_fine, clement, patch0))

    nT = coarse.n_elems

    def work(T):
        if shared is not None:
            patch = Patch(
                coarse_elem=T,
                fine_elems=shared[0].fine_elems,
                interior_fine_dofs=shared[0].interior_fine_dofs,
                active_coarse_nodes=shared[0].active_coarse_nodes,
                kind="global",
                n_fine_nodes=shared[0].n_fine_nodes,
            )
            solver = shared[1]
        else:
            patch = build_patch(cfmap, T, policy)
            solver = _patch_solver(S_fine, clement, patch)
        idx = patch.interior_fine_dofs
        verts = coarse.elements[T]
        hats = P[:, verts].toarray()
        elems = cfmap.fine_elems_of_coarse(T)

        evals = np.empty((3, idx.size))
        for j in range(3):
            rhs = -stiffness_apply_restricted(fine, coef.values, elems, hats[:, j])
            evals[j], _ = solver.solve(rhs[idx])

        dvals = None
        if gh is not None and grad_mass[T] > GRAD_SCREEN:
            rhs = -stiffness_apply_restricted(fine, coef.values, elems, gh)
            dvals, _ = solver.solve(rhs[idx])

        nvals = None
        if T in qgroups:
            qvec = assemble_neumann(fine, q, edges=fine.boundary_edges[qgroups[T]])
            nvals, _ = solver.solve(-qvec[idx])
        return T, patch, evals, dvals, nvals

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, range(nT)))
    else:
        results = []
        for T in range(nT):
            results.append(work(T))
            if progress and (T + 1) % 64 == 0:
                print(f"  correctors {T + 1}/{nT}", flush=True)

    cset = CorrectorSet(
        n_fine_nodes=fine.n_nodes,
        coarse_vertices=coarse.elements.copy(),
        patches={},
        element_values={},
        dirichlet_values={},
        neumann_values={},
        patch_elem_counts=np.empty(nT, dtype=np.int64),
        patch_node_counts=np.empty(nT, dtype=np.int64),
    )
    for T, patch, evals, dvals, nvals in sorted(results, key=lambda r: r[0]):
        cset.patches[T] = patch
        cset.element_values[T] = evals
        if dvals is not None:
            cset.dirichlet_values[T] = dvals
        if nvals is not None:
            cset.neumann_values[T] = nvals
        cset.patch_elem_counts[T] = patch.fine_elems.size
        cset.patch_node_counts[T] = patch.n_fine_nodes
    return cset


@dataclass
class DecayReport:
    k_values: np.ndarray
    tails: np.ndarray  # gradient norm outside k coarse layers
    theta: float
    theta_defined: bool


def decay_profile(cfmap, coef, clement, T, mode="element", local_vertex=0,
                  k_max=6, q=None, S_fine=None):
    """Energy of a globally computed corrector outside k coarse layers.

    theta is exp of the least-squares slope of log tail vs k over the range
    where the tail is above 1e-12 of its k=0 value.
    """
    if S_fine is None:
        S_fine = assemble_stiffness(cfmap.fine, coef)
    patch = build_patch_global(cfmap, T)
    if mode == "element":
        w = element_corrector(cfmap, coef, clement, T, local_vertex, patch, S_fine)
    elif mode == "neumann":
        if q is None:
            raise ConfigurationError("neumann decay mode needs the flux q")
        w = neumann_corrector(cfmap, coef, clement, T, q, patch, S_fine)
    else:
        raise ConfigurationError(f"unknown decay mode {mode!r}")

    ge = _kernels.grad_energy(
        cfmap.fine.nodes[:, 0], cfmap.fine.nodes[:, 1], cfmap.fine.elements, w
    )
    ks = np.arange(k_max + 1)
    tails = np.empty(k_max + 1)
    inside = np.zeros(cfmap.fine.n_elems, dtype=bool)
    for k in ks:
        pk = build_patch_coarse_layers(cfmap, T, int(k))
        inside[:] = False
        inside[pk.fine_elems] = True
        tails[k] = np.sqrt(max(ge[~inside].sum(), 0.0))

    if tails[0] <= 0.0:
        return DecayReport(ks, tails, float("nan"), False)
    valid = tails > 1e-12 * tails[0]
    if np.count_nonzero(valid) < 2:
        return DecayReport(ks, tails, float("nan"), False)
    slope = np.polyfit(ks[valid], np.log(tails[valid]), 1)[0]
    return DecayReport(ks, tails, float(np.exp(slope)), True)


def save_correctors(path, cset):
    """Portable binary cache of a corrector set (interior DOFs and values)."""
    Ts = np.array(sorted(cset.patches), dtype=np.int64)
    idx_parts = [cset.patches[int(T)].interior_fine_dofs for T in Ts]
    offs = np.zeros(Ts.size + 1, dtype=np.int64)
    np.cumsum([p.size for p in idx_parts], out=offs[1:])
    dT = np.array(sorted(cset.dirichlet_values), dtype=np.int64)
    nTn = np.array(sorted(cset.neumann_values), dtype=np.int64)
    np.savez_compressed(
        path,
        format_version=CACHE_FORMAT_VERSION,
        n_fine_nodes=cset.n_fine_nodes,
        coarse_vertices=cset.coarse_vertices,
        t_ids=Ts,
        idx_offsets=offs,
        idx_concat=np.concatenate(idx_parts) if Ts.size else np.zeros(0, dtype=np.int64),
        elem_concat=np.concatenate(
            [cset.element_values[int(T)] for T in Ts], axis=1
        ) if Ts.size else np.zeros((3, 0)),
        kinds=np.array([cset.patches[int(T)].kind for T in Ts]),
        elem_counts=cset.patch_elem_counts,
        node_counts=cset.patch_node_counts,
        dirichlet_ts=dT,
        dirichlet_concat=np.concatenate(
            [cset.dirichlet_values[int(T)] for T in dT]
        ) if dT.size else np.zeros(0),
        neumann_ts=nTn,
        neumann_concat=np.concatenate(
            [cset.neumann_values[int(T)] for T in nTn]
        ) if nTn.size else np.zeros(0),
    )


def load_correctors(path):
    """Inverse of save_correctors; patches come back without element lists."""
    z = np.load(path, allow_pickle=False)
    if int(z["format_version"]) != CACHE_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported corrector cache version in {path}")
    Ts = z["t_ids"]
    offs = z["idx_offsets"]
    cset = CorrectorSet(
        n_fine_nodes=int(z["n_fine_nodes"]),
        coarse_vertices=z["coarse_vertices"],
        patches={},
        element_values={},
        dirichlet_values={},
        neumann_values={},
        patch_elem_counts=z["elem_counts"],
        patch_node_counts=z["node_counts"],
    )
    kinds = z["kinds"]
    for r, T in enumerate(Ts):
        idx = z["idx_concat"][offs[r]:offs[r + 1]]
        cset.patches[int(T)] = Patch(
            coarse_elem=int(T),
            fine_elems=None,
            interior_fine_dofs=idx,
            active_coarse_nodes=None,
            kind=str(kinds[r]),
            n_fine_nodes=int(z["node_counts"][r]),
        )
        cset.element_values[int(T)] = z["elem_concat"][:, offs[r]:offs[r + 1]]
    for arr_ts, arr_vals, target in (
        (z["dirichlet_ts"], z["dirichlet_concat"], cset.dirichlet_values),
        (z["neumann_ts"], z["neumann_concat"], cset.neumann_values),
    ):
        pos = 0
        for T in arr_ts:
            n = cset.patches[int(T)].interior_fine_dofs.size
            target[int(T)] = arr_vals[pos:pos + n]
            pos += n
    return cset
