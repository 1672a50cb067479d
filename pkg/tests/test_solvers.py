import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from izflood.solvers import ColumnPreconditioner, JacobiPreconditioner, SolverError, solve_spd


def laplacian_1d(n):
    return sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


class TestSolveSpd:
    def test_identity(self, rng):
        b = rng.normal(size=20)
        x, info = solve_spd(sp.identity(20, format="csr"), b)
        np.testing.assert_allclose(x, b, rtol=1e-14)
        assert info.iterations <= 1

    def test_laplacian_against_direct_solve(self, rng):
        A = laplacian_1d(10)
        x_true = rng.normal(size=10)
        b = A @ x_true
        x, info = solve_spd(A, b, tol=1e-12)
        np.testing.assert_allclose(x, spsolve(A.tocsc(), b), rtol=1e-10, atol=1e-11)
        assert info.residual <= 1e-12

    def test_random_spd(self, rng):
        B = rng.normal(size=(50, 50))
        A = sp.csr_matrix(B.T @ B + np.eye(50))
        b = rng.normal(size=50)
        x, info = solve_spd(A, b, tol=1e-10)
        assert np.linalg.norm(b - A @ x) <= 1e-10 * np.linalg.norm(b)
        assert info.residuals[-1] / info.residuals[0] <= 1e-10

    def test_zero_rhs(self):
        x, info = solve_spd(laplacian_1d(5), np.zeros(5))
        assert np.all(x == 0) and info.iterations == 0

    def test_warm_start(self, rng):
        A = laplacian_1d(30)
        b = rng.normal(size=30)
        x, _ = solve_spd(A, b, tol=1e-12)
        _, info = solve_spd(A, b, tol=1e-10, x0=x)
        assert info.iterations == 0

    def test_maxiter_raises_with_history(self, rng):
        A = laplacian_1d(200)
        with pytest.raises(SolverError) as err:
            solve_spd(A, rng.normal(size=200), tol=1e-14, maxiter=3)
        assert len(err.value.residuals) == 4

    def test_indefinite_detected(self):
        A = sp.csr_matrix(np.diag([1.0, -1.0]))
        with pytest.raises(ValueError, match="not SPD"):
            JacobiPreconditioner(A)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            solve_spd(laplacian_1d(4), np.ones(5))


class TestColumnPreconditioner:
    def test_exact_on_block_diagonal(self, rng):
        nz, ncol = 6, 4
        blocks = sp.block_diag([laplacian_1d(nz) + sp.identity(nz) * (k + 1) for k in range(ncol)]).tocsr()
        M = ColumnPreconditioner(blocks, nz)
        r = rng.normal(size=nz * ncol)
        np.testing.assert_allclose(blocks @ M(r), r, rtol=1e-12, atol=1e-12)
        _, info = solve_spd(blocks, r, precond=M)
        assert info.iterations == 1

    def test_size_check(self):
        with pytest.raises(ValueError):
            ColumnPreconditioner(laplacian_1d(7), 3)
