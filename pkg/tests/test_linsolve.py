import numpy as np
import pytest
import scipy.sparse as sp

from lodfem import fem, mesh as lm
from lodfem.errors import SolverError
from lodfem.linsolve import KktSystem, SaddleSolver, cg_solve, saddle_solve


def test_cg_identity_one_iteration():
    S = sp.eye(5, format="csr")
    b = np.array([3.0, -1.0, 0.5, 2.0, 9.0])
    x, iters = cg_solve(S, b)
    assert np.allclose(x, b)
    assert iters == 1


def test_cg_tridiagonal_hand_solution():
    # tridiag(-1, 2, -1), n=3, b=(1,1,1) -> x=(1.5, 2, 1.5) by elimination
    S = sp.csr_matrix(np.array([[2.0, -1, 0], [-1, 2, -1], [0, -1, 2]]))
    x, _ = cg_solve(S, np.ones(3), tol=1e-12)
    assert np.allclose(x, [1.5, 2.0, 1.5], atol=1e-10)


def test_cg_zero_rhs():
    S = sp.eye(4, format="csr")
    x, iters = cg_solve(S, np.zeros(4))
    assert iters == 0
    assert np.all(x == 0)


def test_cg_nonconvergence_raises_with_residual():
    mesh = lm.build_structured_mesh(8)
    S = fem.assemble_stiffness(mesh)
    free = np.flatnonzero(~mesh.is_dirichlet)
    Sf = S[free][:, free]
    b = np.ones(free.size)
    with pytest.raises(SolverError) as err:
        cg_solve(Sf, b, tol=1e-14, maxit=2)
    assert err.value.residual is not None
    assert err.value.residual > 1e-14


def test_cg_fine_stiffness_jacobi_converges():
    # oscillating coefficient at scale 2^-6: Jacobi-PCG reaches 1e-10
    mesh = lm.build_structured_mesh(64)
    bary = mesh.element_barycenters()
    vals = 1.1 + 0.5 * np.sin(np.floor(bary[:, 0] / 0.05)) + 0.5 * np.cos(
        2 * np.pi * bary[:, 0] / 0.05
    )
    S = fem.assemble_stiffness(mesh, vals)
    free = np.flatnonzero(~mesh.is_dirichlet)
    Sf = S[free][:, free]
    b = np.ones(free.size)
    x, iters = cg_solve(Sf, b, tol=1e-10)
    assert np.linalg.norm(Sf @ x - b) <= 1e-10 * np.linalg.norm(b)
    assert iters > 1


def test_saddle_empty_constraints_match_cg():
    S = sp.csr_matrix(np.array([[4.0, 1.0], [1.0, 3.0]]))
    b = np.array([1.0, 2.0])
    w = saddle_solve(KktSystem(S, sp.csr_matrix((0, 2)), b))
    x, _ = cg_solve(S, b, tol=1e-13)
    assert np.allclose(w, x, atol=1e-10)


def test_saddle_hand_case():
    # S=I (2x2), C=(1 1), b=(1,0): Lagrange conditions give w=(0.5,-0.5)
    S = sp.eye(2, format="csr")
    C = sp.csr_matrix(np.array([[1.0, 1.0]]))
    w = saddle_solve(KktSystem(S, C, np.array([1.0, 0.0])))
    assert np.allclose(w, [0.5, -0.5], atol=1e-12)


def test_saddle_duplicate_rows_warn_and_solve():
    S = sp.eye(3, format="csr")
    C = sp.csr_matrix(np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0]]))
    b = np.array([1.0, 0.0, 2.0])
    with pytest.warns(UserWarning, match="dependent constraint"):
        w = saddle_solve(KktSystem(S, C, b))
    assert np.allclose(w, [0.5, -0.5, 2.0], atol=1e-12)


def test_saddle_constrained_minimality():
    rng = np.random.default_rng(3)
    n, m = 40, 6
    A = rng.standard_normal((n, n))
    S = sp.csr_matrix(A @ A.T + n * np.eye(n))
    C = sp.csr_matrix(rng.standard_normal((m, n)))
    b = rng.standard_normal(n)
    w = saddle_solve(KktSystem(S, C, b))
    Cd = C.toarray()
    energy = lambda v: v @ (S @ v) - 2 * b @ v
    base = energy(w)
    for _ in range(25):
        d = rng.standard_normal(n)
        # project onto the constraint nullspace
        d -= Cd.T @ np.linalg.lstsq(Cd @ Cd.T, Cd @ d, rcond=None)[0]
        assert energy(w + 0.1 * d) >= base - 1e-8


def test_saddle_determinism():
    rng = np.random.default_rng(11)
    n, m = 30, 4
    A = rng.standard_normal((n, n))
    S = sp.csr_matrix(A @ A.T + n * np.eye(n))
    C = sp.csr_matrix(rng.standard_normal((m, n)))
    b = rng.standard_normal(n)
    w1 = saddle_solve(KktSystem(S, C, b))
    w2 = saddle_solve(KktSystem(S, C, b))
    assert np.array_equal(w1, w2)


def test_saddle_solver_reuse_multiple_rhs():
    rng = np.random.default_rng(5)
    n, m = 25, 3
    A = rng.standard_normal((n, n))
    S = sp.csr_matrix(A @ A.T + n * np.eye(n))
    C = sp.csr_matrix(rng.standard_normal((m, n)))
    solver = SaddleSolver(S, C)
    for _ in range(3):
        b = rng.standard_normal(n)
        w, lam = solver.solve(b)
        assert np.linalg.norm(S @ w + C.T @ lam - b) <= 1e-10 * np.linalg.norm(b)
        assert np.linalg.norm(C @ w) <= 1e-10 * np.linalg.norm(w)
