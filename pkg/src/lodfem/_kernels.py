"""Hot numeric kernels with numba-jitted and pure-numpy implementations.

Every kernel exists in two variants that produce identical results:
``<name>_numpy`` (vectorized numpy) and, when numba is importable,
``<name>_numba`` (jitted loop). The plain ``<name>`` binding picks the jitted
variant unless the environment variable ``LODFEM_NO_NUMBA`` is set to a
non-empty value (other than ``0``), which forces the numpy path.

``benchmarks/bench_kernels.py`` times both variants against each other.
"""

import os

import numpy as np

NUMBA_DISABLED = os.environ.get("LODFEM_NO_NUMBA", "") not in ("", "0")

try:
    if NUMBA_DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# P1 element matrices
#
# For a triangle with vertices p0,p1,p2 the barycentric basis gradients are
# constant; with d = cross(p1-p0, p2-p0) (signed double area):
#   grad(l0) = (y1-y2, x2-x1)/d,  grad(l1) = (y2-y0, x0-x2)/d,
#   grad(l2) = (y0-y1, x1-x0)/d.
# Stiffness block: a_e * |e| * G G^T; mass block: |e|/12 * (1 + I).
# ---------------------------------------------------------------------------


def stiffness_local_numpy(px, py, tris, coef):
    x = px[tris]
    y = py[tris]
    d = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    g = np.empty((tris.shape[0], 3, 2))
    g[:, 0, 0] = y[:, 1] - y[:, 2]
    g[:, 0, 1] = x[:, 2] - x[:, 1]
    g[:, 1, 0] = y[:, 2] - y[:, 0]
    g[:, 1, 1] = x[:, 0] - x[:, 2]
    g[:, 2, 0] = y[:, 0] - y[:, 1]
    g[:, 2, 1] = x[:, 1] - x[:, 0]
    g /= d[:, None, None]
    area = 0.5 * np.abs(d)
    return np.einsum("eik,ejk->eij", g, g) * (coef * area)[:, None, None]


def mass_local_numpy(px, py, tris):
    x = px[tris]
    y = py[tris]
    d = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    area = 0.5 * np.abs(d)
    block = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return block[None, :, :] * area[:, None, None]


def grad_energy_numpy(px, py, tris, values, coef=None):
    """Per-element a_e * area_e * |grad v|_e|^2 for a P1 nodal field v."""
    x = px[tris]
    y = py[tris]
    v = values[tris]
    d = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    gx = (v[:, 0] * (y[:, 1] - y[:, 2]) + v[:, 1] * (y[:, 2] - y[:, 0]) + v[:, 2] * (y[:, 0] - y[:, 1])) / d
    gy = (v[:, 0] * (x[:, 2] - x[:, 1]) + v[:, 1] * (x[:, 0] - x[:, 2]) + v[:, 2] * (x[:, 1] - x[:, 0])) / d
    out = 0.5 * np.abs(d) * (gx * gx + gy * gy)
    if coef is not None:
        out = out * coef
    return out


def pcg_numpy(indptr, indices, data, diag, b, x0, tol, maxit):
    """Jacobi-preconditioned CG on a CSR matrix; fixed reduction order.

    Returns (x, iterations, achieved relative residual).
    """
    import scipy.sparse as sp

    n = b.shape[0]
    A = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    x = x0.copy()
    r = b - A @ x
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n), 0, 0.0
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while it < maxit:
        res = float(np.linalg.norm(r))
        if res <= tol * nb:
            break
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = r / diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return x, it, float(np.linalg.norm(b - A @ x)) / nb


stiffness_local_numba = None
mass_local_numba = None
grad_energy_numba = None
pcg_numba = None

if HAVE_NUMBA:

    @njit(cache=True)
    def _stiffness_local(px, py, tris, coef):
        ne = tris.shape[0]
        out = np.empty((ne, 3, 3))
        g = np.empty((3, 2))
        for e in range(ne):
            i0, i1, i2 = tris[e, 0], tris[e, 1], tris[e, 2]
            x0, x1, x2 = px[i0], px[i1], px[i2]
            y0, y1, y2 = py[i0], py[i1], py[i2]
            d = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
            g[0, 0] = (y1 - y2) / d
            g[0, 1] = (x2 - x1) / d
            g[1, 0] = (y2 - y0) / d
            g[1, 1] = (x0 - x2) / d
            g[2, 0] = (y0 - y1) / d
            g[2, 1] = (x1 - x0) / d
            w = coef[e] * 0.5 * abs(d)
            for i in range(3):
                for j in range(3):
                    out[e, i, j] = w * (g[i, 0] * g[j, 0] + g[i, 1] * g[j, 1])
        return out

    @njit(cache=True)
    def _mass_local(px, py, tris):
        ne = tris.shape[0]
        out = np.empty((ne, 3, 3))
        for e in range(ne):
            i0, i1, i2 = tris[e, 0], tris[e, 1], tris[e, 2]
            d = (px[i1] - px[i0]) * (py[i2] - py[i0]) - (px[i2] - px[i0]) * (py[i1] - py[i0])
            area = 0.5 * abs(d)
            for i in range(3):
                for j in range(3):
                    out[e, i, j] = area / 12.0 * (2.0 if i == j else 1.0)
        return out

    @njit(cache=True)
    def _grad_energy(px, py, tris, values, coef):
        ne = tris.shape[0]
        out = np.empty(ne)
        for e in range(ne):
            i0, i1, i2 = tris[e, 0], tris[e, 1], tris[e, 2]
            x0, x1, x2 = px[i0], px[i1], px[i2]
            y0, y1, y2 = py[i0], py[i1], py[i2]
            v0, v1, v2 = values[i0], values[i1], values[i2]
            d = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
            gx = (v0 * (y1 - y2) + v1 * (y2 - y0) + v2 * (y0 - y1)) / d
            gy = (v0 * (x2 - x1) + v1 * (x0 - x2) + v2 * (x1 - x0)) / d
            out[e] = coef[e] * 0.5 * abs(d) * (gx * gx + gy * gy)
        return out

    @njit(cache=True)
    def _pcg(indptr, indices, data, diag, b, x0, tol, maxit):
        n = b.shape[0]
        x = x0.copy()
        r = np.empty(n)
        nb = 0.0
        for i in range(n):
            s = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                s += data[k] * x[indices[k]]
            r[i] = b[i] - s
            nb += b[i] * b[i]
        nb = np.sqrt(nb)
        if nb == 0.0:
            return np.zeros(n), 0, 0.0
        z = r / diag
        p = z.copy()
        rz = 0.0
        for i in range(n):
            rz += r[i] * z[i]
        Ap = np.empty(n)
        it = 0
        while it < maxit:
            res = 0.0
            for i in range(n):
                res += r[i] * r[i]
            if np.sqrt(res) <= tol * nb:
                break
            for i in range(n):
                s = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    s += data[k] * p[indices[k]]
                Ap[i] = s
            pAp = 0.0
            for i in range(n):
                pAp += p[i] * Ap[i]
            alpha = rz / pAp
            rz_new = 0.0
            for i in range(n):
                x[i] += alpha * p[i]
                r[i] -= alpha * Ap[i]
                z[i] = r[i] / diag[i]
                rz_new += r[i] * z[i]
            beta = rz_new / rz
            for i in range(n):
                p[i] = z[i] + beta * p[i]
            rz = rz_new
            it += 1
        res = 0.0
        for i in range(n):
            s = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                s += data[k] * x[indices[k]]
            res += (b[i] - s) ** 2
        return x, it, np.sqrt(res) / nb

    stiffness_local_numba = _stiffness_local
    mass_local_numba = _mass_local

    def grad_energy_numba(px, py, tris, values, coef=None):
        if coef is None:
            coef = np.ones(tris.shape[0])
        return _grad_energy(px, py, tris, values, coef)

    pcg_numba = _pcg


if HAVE_NUMBA:
    stiffness_local = stiffness_local_numba
    mass_local = mass_local_numba
    grad_energy = grad_energy_numba
    pcg = pcg_numba
else:
    stiffness_local = stiffness_local_numpy
    mass_local = mass_local_numpy
    grad_energy = grad_energy_numpy
    pcg = pcg_numpy
