"""Structured nested triangulations of the unit square with boundary tags.

Meshes are criss-cross grids: every grid cell is split by the diagonal from
its lower-left to its upper-right corner, giving a lower triangle
(v00, v10, v11) and an upper triangle (v00, v11, v01), both counter-clockwise.
Node (i, j) has id j*(n+1)+i; cell (i, j) has id j*n+i and owns elements
2*cell (lower) and 2*cell+1 (upper).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError

DIRICHLET = 0
NEUMANN = 1

_EPS = 1e-12


@dataclass
class TriMesh:
    n_cells: int
    nodes: np.ndarray          # (n_nodes, 2)
    elements: np.ndarray       # (n_elems, 3) CCW node ids
    boundary_edges: np.ndarray  # (n_bedges, 2) node ids
    boundary_tags: np.ndarray   # (n_bedges,) DIRICHLET | NEUMANN
    is_dirichlet: np.ndarray    # (n_nodes,) bool
    is_boundary: np.ndarray     # (n_nodes,) bool
    h_max: float
    neumann_segments: tuple = ()
    _node_elem_count: np.ndarray = field(default=None, repr=False)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elems(self):
        return self.elements.shape[0]

    def node_elem_count(self):
        if self._node_elem_count is None:
            self._node_elem_count = np.bincount(
                self.elements.ravel(), minlength=self.n_nodes
            )
        return self._node_elem_count

    def element_areas(self):
        x = self.nodes[self.elements, 0]
        y = self.nodes[self.elements, 1]
        return 0.5 * np.abs(
            (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
            - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
        )

    def element_barycenters(self):
        return self.nodes[self.elements].mean(axis=1)


def _on_segment(pts, seg):
    (x0, y0), (x1, y1) = seg
    lo_x, hi_x = min(x0, x1), max(x0, x1)
    lo_y, hi_y = min(y0, y1), max(y0, y1)
    if abs(x0 - x1) < _EPS:  # vertical
        return (np.abs(pts[:, 0] - x0) < _EPS) & (pts[:, 1] >= lo_y - _EPS) & (pts[:, 1] <= hi_y + _EPS)
    if abs(y0 - y1) < _EPS:  # horizontal
        return (np.abs(pts[:, 1] - y0) < _EPS) & (pts[:, 0] >= lo_x - _EPS) & (pts[:, 0] <= hi_x + _EPS)
    raise ConfigurationError(f"Neumann segment {seg} is not axis-aligned")


def build_structured_mesh(n_cells, neumann_segments=()):
    """Criss-cross triangulation of (0,1)^2 with tagged boundary edges.

    Parameters
    ----------
    n_cells : cells per axis; must be a power of two (>= 1).
    neumann_segments : axis-aligned closed segments ((x0,y0),(x1,y1)) on the
        boundary; every boundary edge contained in one of them is tagged
        Neumann, all remaining boundary is Dirichlet. A node touching any
        Dirichlet edge is classified Dirichlet (the Dirichlet part is closed).
    """
    n = int(n_cells)
    if n < 1 or (n & (n - 1)) != 0:
        raise ConfigurationError(f"n_cells must be a power of two >= 1, got {n_cells}")

    coords = np.arange(n + 1) / n
    xx, yy = np.meshgrid(coords, coords, indexing="xy")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i = i.ravel()
    j = j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v11 = v00 + n + 2
    v01 = v00 + n + 1
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = np.column_stack([v00, v10, v11])
    elements[1::2] = np.column_stack([v00, v11, v01])

    rng = np.arange(n)
    bottom = np.column_stack([rng, rng + 1])
    right = np.column_stack([rng * (n + 1) + n, (rng + 1) * (n + 1) + n])
    top = np.column_stack([n * (n + 1) + rng, n * (n + 1) + rng + 1])
    left = np.column_stack([rng * (n + 1), (rng + 1) * (n + 1)])
    bedges = np.vstack([bottom, right, top, left])

    tags = np.full(bedges.shape[0], DIRICHLET, dtype=np.int64)
    for seg in neumann_segments:
        a_in = _on_segment(nodes[bedges[:, 0]], seg)
        b_in = _on_segment(nodes[bedges[:, 1]], seg)
        tags[a_in & b_in] = NEUMANN

    is_boundary = np.zeros(nodes.shape[0], dtype=bool)
    is_boundary[bedges.ravel()] = True
    is_dirichlet = np.zeros(nodes.shape[0], dtype=bool)
    dir_edges = bedges[tags == DIRICHLET]
    is_dirichlet[dir_edges.ravel()] = True

    return TriMesh(
        n_cells=n,
        nodes=nodes,
        elements=elements,
        boundary_edges=bedges,
        boundary_tags=tags,
        is_dirichlet=is_dirichlet,
        is_boundary=is_boundary,
        h_max=np.sqrt(2.0) / n,
        neumann_segments=tuple(neumann_segments),
    )


@dataclass
class CoarseFineMap:
    coarse: TriMesh
    fine: TriMesh
    levels: int
    fine_elem_to_coarse: np.ndarray
    coarse_node_to_fine_node: np.ndarray
    _fine_by_coarse: tuple = field(default=None, repr=False)
    _coarse_node_to_elems: tuple = field(default=None, repr=False)

    @property
    def ratio(self):
        """Fine cells per coarse cell per axis, H/h."""
        return 2 ** self.levels

    def fine_elems_of_coarse(self, T):
        if self._fine_by_coarse is None:
            order = np.argsort(self.fine_elem_to_coarse, kind="stable")
            counts = np.bincount(self.fine_elem_to_coarse, minlength=self.coarse.n_elems)
            offsets = np.zeros(self.coarse.n_elems + 1, dtype=np.int64)
            np.cumsum(counts, out=offsets[1:])
            self._fine_by_coarse = (offsets, order)
        offsets, order = self._fine_by_coarse
        return order[offsets[T]:offsets[T + 1]]

    def coarse_node_to_elems(self):
        if self._coarse_node_to_elems is None:
            E = self.coarse.elements
            flat = E.ravel()
            order = np.argsort(flat, kind="stable")
            counts = np.bincount(flat, minlength=self.coarse.n_nodes)
            offsets = np.zeros(self.coarse.n_nodes + 1, dtype=np.int64)
            np.cumsum(counts, out=offsets[1:])
            self._coarse_node_to_elems = (offsets, order // 3)
        return self._coarse_node_to_elems


def refine_uniform(mesh, levels):
    """Uniformly refine `levels` times; returns (fine mesh, nesting map)."""
    if levels < 1:
        raise ConfigurationError("at least one refinement level is required (h <= H/2)")
    nc = mesh.n_cells
    m = 2 ** levels
    nf = nc * m
    fine = build_structured_mesh(nf, mesh.neumann_segments)

    e = np.arange(fine.n_elems)
    cell = e // 2
    upper = (e % 2).astype(bool)
    fi = cell % nf
    fj = cell // nf
    ci = fi // m
    cj = fj // m
    # local cell barycenter decides the side of the coarse diagonal u = v
    bu = np.where(upper, 1.0 / 3.0, 2.0 / 3.0)
    u = (fi - ci * m) + bu
    v = (fj - cj * m) + (1.0 - bu)
    fine_elem_to_coarse = 2 * (cj * nc + ci) + (u < v)

    ii = np.arange(mesh.n_nodes) % (nc + 1)
    jj = np.arange(mesh.n_nodes) // (nc + 1)
    coarse_node_to_fine = jj * m * (nf + 1) + ii * m

    return fine, CoarseFineMap(
        coarse=mesh,
        fine=fine,
        levels=levels,
        fine_elem_to_coarse=fine_elem_to_coarse,
        coarse_node_to_fine_node=coarse_node_to_fine,
    )


@dataclass
class Patch:
    coarse_elem: int
    fine_elems: np.ndarray
    interior_fine_dofs: np.ndarray
    active_coarse_nodes: np.ndarray
    kind: str
    n_fine_nodes: int


@dataclass
class PatchStats:
    avg_fine_elems: float
    avg_fine_nodes: float


def _finish_patch(cfmap, T, fine_elems, kind):
    fine = cfmap.fine
    fine_elems = np.sort(fine_elems)
    if fine_elems.size == fine.n_elems:
        kind = "global"
    incident = np.bincount(fine.elements[fine_elems].ravel(), minlength=fine.n_nodes)
    touched = incident > 0
    interior = np.flatnonzero(
        (incident == fine.node_elem_count()) & ~fine.is_dirichlet
    )
    coarse_elems = np.unique(cfmap.fine_elem_to_coarse[fine_elems])
    cverts = np.unique(cfmap.coarse.elements[coarse_elems])
    active = cverts[~cfmap.coarse.is_dirichlet[cverts]]
    return Patch(
        coarse_elem=int(T),
        fine_elems=fine_elems,
        interior_fine_dofs=interior,
        active_coarse_nodes=active,
        kind=kind,
        n_fine_nodes=int(np.count_nonzero(touched)),
    )


def build_patch_global(cfmap, T):
    return _finish_patch(cfmap, T, np.arange(cfmap.fine.n_elems), "global")


def build_patch_coarse_layers(cfmap, T, k):
    """Patch from k rings of coarse elements sharing at least a vertex."""
    if k < 0:
        raise ConfigurationError("k must be >= 0")
    coarse = cfmap.coarse
    offsets, n2e = cfmap.coarse_node_to_elems()
    in_patch = np.zeros(coarse.n_elems, dtype=bool)
    in_patch[T] = True
    frontier = np.array([T])
    for _ in range(k):
        vs = np.unique(coarse.elements[frontier])
        counts = offsets[vs + 1] - offsets[vs]
        take = np.repeat(offsets[vs], counts) + _ranges(counts)
        cand = np.unique(n2e[take])
        new = cand[~in_patch[cand]]
        if new.size == 0:
            break
        in_patch[new] = True
        frontier = new
    coarse_elems = np.flatnonzero(in_patch)
    fine_elems = np.concatenate([cfmap.fine_elems_of_coarse(t) for t in coarse_elems])
    return _finish_patch(cfmap, T, fine_elems, f"coarse:{k}")


def _ranges(counts):
    total = int(counts.sum())
    out = np.arange(total)
    out -= np.repeat(np.cumsum(counts) - counts, counts)
    return out


def build_patch_fine_layers(cfmap, T, ell):
    """Patch from ell rings of fine elements around the coarse element T.

    Growth is by vertex adjacency on the underlying grid cells: each ring adds
    every grid cell (both of its triangles) that touches the current patch in
    at least one point. This cell-ring rule reproduces the reference patch
    element/node counts; growing single triangles by vertex adjacency does not.
    """
    if ell < 0:
        raise ConfigurationError("ell must be >= 0")
    fine = cfmap.fine
    nf = fine.n_cells
    seed = cfmap.fine_elems_of_coarse(T)
    if ell == 0:
        return _finish_patch(cfmap, T, seed, "fine:0")

    mask = np.zeros((nf, nf), dtype=bool)
    seed_nodes = np.unique(fine.elements[seed])
    ni = seed_nodes % (nf + 1)
    nj = seed_nodes // (nf + 1)
    for a in (-1, 0):
        for b in (-1, 0):
            ci = ni + a
            cj = nj + b
            ok = (ci >= 0) & (ci < nf) & (cj >= 0) & (cj < nf)
            mask[cj[ok], ci[ok]] = True
    if ell > 1:
        mask = ndimage.binary_dilation(
            mask, structure=np.ones((3, 3), dtype=bool), iterations=ell - 1
        )
    cells = np.flatnonzero(mask.ravel())
    elems = np.union1d(np.concatenate([2 * cells, 2 * cells + 1]), seed)
    return _finish_patch(cfmap, T, elems, f"fine:{ell}")


def patch_category(cfmap, patch):
    """Distance from patch barycenter to its interior boundary, in units of
    |log H| * H; +inf when the patch has no interior boundary."""
    fine = cfmap.fine
    incident = np.bincount(fine.elements[patch.fine_elems].ravel(), minlength=fine.n_nodes)
    on_boundary = (incident > 0) & (incident < fine.node_elem_count()) & ~fine.is_boundary
    bnodes = np.flatnonzero(on_boundary)
    if bnodes.size == 0:
        return np.inf
    center = fine.nodes[fine.elements[patch.fine_elems]].mean(axis=(0, 1))
    dist = np.min(np.linalg.norm(fine.nodes[bnodes] - center, axis=1))
    H = cfmap.coarse.h_max
    return dist / (abs(np.log(H)) * H)


def patch_stats(patches):
    if not patches:
        raise ConfigurationError("patch_stats needs at least one patch")
    elems = np.mean([p.fine_elems.size for p in patches])
    nodes = np.mean([p.n_fine_nodes for p in patches])
    return PatchStats(avg_fine_elems=float(elems), avg_fine_nodes=float(nodes))


def dump_debug(mesh):
    """Plain-text dump: nodes, elements, tagged boundary edges."""
    lines = [f"trimesh n_cells={mesh.n_cells} nodes={mesh.n_nodes} elems={mesh.n_elems}"]
    for i, (x, y) in enumerate(mesh.nodes):
        flag = "D" if mesh.is_dirichlet[i] else ("B" if mesh.is_boundary[i] else "I")
        lines.append(f"node {i} {x:.12g} {y:.12g} {flag}")
    for i, (a, b, c) in enumerate(mesh.elements):
        lines.append(f"elem {i} {a} {b} {c}")
    for (a, b), t in zip(mesh.boundary_edges, mesh.boundary_tags):
        name = "neumann" if t == NEUMANN else "dirichlet"
        lines.append(f"bedge {a} {b} {name}")
    return "\n".join(lines) + "\n"
