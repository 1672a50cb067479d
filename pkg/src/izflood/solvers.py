"""Preconditioned conjugate gradients for sparse SPD systems."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SolverError(RuntimeError):
    """Raised when CG fails to converge; carries the residual history."""

    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = residuals


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    residuals: list = field(default_factory=list)


class JacobiPreconditioner:
    def __init__(self, A):
        d = A.diagonal()
        if np.any(d <= 0):
            raise ValueError("matrix is not SPD: non-positive diagonal entry")
        self.inv = 1.0 / d

    def __call__(self, r):
        return self.inv * r


class ColumnPreconditioner:
    """Block-Jacobi preconditioner with exact tridiagonal solves per column.

    Unknowns are ordered column by column, ``nz`` per column, so each block is
    the vertical line operator. Vertical coupling dominates on thin layers,
    which makes this far stronger than point Jacobi.
    """

    def __init__(self, A, nz):
        n = A.shape[0]
        if n % nz:
            raise ValueError("system size is not a multiple of nz")
        self.nz = nz
        self.ncol = n // nz
        diag = A.diagonal().reshape(self.ncol, nz)
        off = A.diagonal(1)
        # drop couplings across column boundaries
        sub = np.append(off, 0.0).reshape(self.ncol, nz)[:, :-1]
        # Thomas factorization, vectorized over columns
        c = np.zeros((self.ncol, nz))
        denom = np.zeros((self.ncol, nz))
        denom[:, 0] = diag[:, 0]
        for k in range(1, nz):
            c[:, k - 1] = sub[:, k - 1] / denom[:, k - 1]
            denom[:, k] = diag[:, k] - sub[:, k - 1] * c[:, k - 1]
        if np.any(denom <= 0):
            raise ValueError("matrix is not SPD: column block factorization failed")
        self.sub = sub
        self.c = c
        self.denom = denom

    def __call__(self, r):
        nz = self.nz
        d = r.reshape(self.ncol, nz)
        y = np.empty_like(d)
        y[:, 0] = d[:, 0] / self.denom[:, 0]
        for k in range(1, nz):
            y[:, k] = (d[:, k] - self.sub[:, k - 1] * y[:, k - 1]) / self.denom[:, k]
        for k in range(nz - 2, -1, -1):
            y[:, k] -= self.c[:, k] * y[:, k + 1]
        return y.reshape(-1)


def solve_spd(A, b, tol=1e-10, x0=None, maxiter=None, precond=None):
    """Solve ``A x = b`` for symmetric positive-definite ``A`` by PCG.

    Stops when ``||b - A x|| <= tol * ||b||``. ``precond`` is a callable
    applying an approximate inverse (point Jacobi by default). Returns
    ``(x, SolveInfo)``; raises :class:`SolverError` after ``maxiter``
    iterations (default ``10 * n``).
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    if A.shape != (n, n):
        raise ValueError(f"shape mismatch: A is {A.shape}, b has {n} entries")
    maxiter = 10 * n if maxiter is None else maxiter
    if precond is None:
        precond = JacobiPreconditioner(A)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)

    bnorm = np.linalg.norm(b)
    r = b - A @ x if x0 is not None else b.copy()
    rnorm = np.linalg.norm(r)
    history = [rnorm]
    if bnorm == 0.0:
        return np.zeros(n), SolveInfo(0, 0.0, history)
    target = tol * bnorm
    if rnorm <= target:
        return x, SolveInfo(0, rnorm / bnorm, history)

    z = precond(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError(f"matrix is not positive definite (p.Ap = {pAp})", history)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        history.append(rnorm)
        if rnorm <= target:
            return x, SolveInfo(it, rnorm / bnorm, history)
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"CG did not converge in {maxiter} iterations (relative residual {rnorm / bnorm:.3e})", history)
