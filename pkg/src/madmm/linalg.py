"""Sparse storage and linear solvers.

Matrices are ``scipy.sparse.csr_matrix`` objects (compressed row storage).
The Krylov solvers are written out here so that the stopping rule, the
reported residual and the iteration count are under our control:
tolerances are relative to ``||b||_2`` with an absolute floor of
:data:`ABS_FLOOR`, and every report carries a residual recomputed from
scratch as ``||b - A x||_2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import SingularMatrixError

ABS_FLOOR = 1e-14
DIRECT_CAP = 20_000

Preconditioner = Callable[[np.ndarray], np.ndarray]


@dataclass
class SolveReport:
    """Outcome of one linear solve.

    ``converged`` is true exactly when ``final_residual`` is within the
    requested tolerance.
    """

    iterations: int
    final_residual: float
    converged: bool
    method: str
    tolerance: float = 0.0
    message: str = ""

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "converged": self.converged,
            "method": self.method,
            "tolerance": self.tolerance,
            "message": self.message,
        }


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR form: sorted column indices, no duplicates."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def is_symmetric(A, rtol: float = 1e-12) -> bool:
    A = sp.csr_matrix(A)
    scale = abs(A).max() if A.nnz else 0.0
    diff = A - A.T
    return diff.nnz == 0 or abs(diff).max() <= rtol * scale


def spmv(A, x: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product with a dimension check."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: matrix {A.shape} times vector {x.shape}")
    return A @ x


def _check_system(A, b):
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    b = np.asarray(b, dtype=float)
    if b.shape != (A.shape[0],):
        raise ValueError(f"right-hand side shape {b.shape} does not match {A.shape}")
    data = A.data if sp.issparse(A) else np.asarray(A)
    if not (np.all(np.isfinite(data)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite entries in linear system")
    return b


def _threshold(b, tol):
    return max(tol * np.linalg.norm(b), ABS_FLOOR)


def _finish(A, b, x, tol, iterations, method, message=""):
    res = float(np.linalg.norm(b - A @ x))
    return x, SolveReport(
        iterations=iterations,
        final_residual=res,
        converged=bool(res <= _threshold(b, tol)),
        method=method,
        tolerance=tol,
        message=message,
    )


def solve_spd(A, b, tol: float = 1e-10, maxit: Optional[int] = None,
              x0: Optional[np.ndarray] = None,
              preconditioner: Optional[Preconditioner] = None):
    """Preconditioned conjugate gradients for symmetric positive definite A.

    Stops when ``||b - A x|| <= max(tol * ||b||, ABS_FLOOR)``; running out
    of iterations is reported through ``converged=False``, not raised.

    Returns
    -------
    x : ndarray
    report : SolveReport
    """
    b = _check_system(A, b)
    n = b.shape[0]
    maxit = 10 * n if maxit is None else maxit
    method = "pcg" if preconditioner is not None else "cg"
    if not np.any(b) and x0 is None:
        return np.zeros(n), SolveReport(0, 0.0, True, method, tol)

    M = preconditioner or (lambda r: r)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    stop = _threshold(b, tol)
    rnorm = np.linalg.norm(r)
    k = 0
    if rnorm > stop:
        zv = M(r)
        p = zv.copy()
        rz = r @ zv
        while k < maxit:
            Ap = A @ p
            pAp = p @ Ap
            if pAp <= 0.0:
                return _finish(A, b, x, tol, k, method, "non-positive curvature")
            step = rz / pAp
            x += step * p
            r -= step * Ap
            k += 1
            if np.linalg.norm(r) <= stop:
                # recursive residual drifts; confirm against the true one
                r = b - A @ x
                if np.linalg.norm(r) <= stop:
                    break
            zv = M(r)
            rz_new = r @ zv
            p = zv + (rz_new / rz) * p
            rz = rz_new
    return _finish(A, b, x, tol, k, method)


def solve_block_nonsym(A, b, tol: float = 1e-10, maxit: int = 2000,
                       x0: Optional[np.ndarray] = None,
                       preconditioner: Optional[Preconditioner] = None,
                       restart: int = 60):
    """Restarted GMRES with right preconditioning.

    Right preconditioning keeps the minimised quantity equal to the true
    residual norm, so the stopping test matches the reported residual.
    Without an explicit preconditioner the inverse diagonal of ``A`` is
    used (entries with zero diagonal are left unscaled). ``maxit`` counts
    inner (Arnoldi) steps over all cycles.

    Returns
    -------
    x : ndarray
    report : SolveReport
        ``method`` is ``"gmres(<restart>)"``; a Krylov breakdown without
        convergence is reported through ``converged=False`` and ``message``.
    """
    b = _check_system(A, b)
    n = b.shape[0]
    method = f"gmres({restart})"
    if preconditioner is None:
        d = np.asarray(A.diagonal(), dtype=float)
        inv = np.where(d != 0.0, 1.0 / np.where(d != 0.0, d, 1.0), 1.0)
        preconditioner = lambda v: inv * v  # noqa: E731
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if not np.any(b) and x0 is None:
        return x, SolveReport(0, 0.0, True, method, tol)

    stop = _threshold(b, tol)
    total = 0
    message = ""
    while total < maxit:
        r = b - A @ x
        beta = np.linalg.norm(r)
        if beta <= stop:
            break
        m = min(restart, maxit - total)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        breakdown = False
        for j in range(m):
            Z[j] = preconditioner(V[j])
            w = A @ Z[j]
            for i in range(j + 1):  # modified Gram-Schmidt
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            if H[j + 1, j] > 1e-14 * abs(H[: j + 1, j]).max(initial=0.0):
                V[j + 1] = w / H[j + 1, j]
            else:
                breakdown = True
            for i in range(j):
                hi, hi1 = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * hi + sn[i] * hi1
                H[i + 1, j] = -sn[i] * hi + cs[i] * hi1
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                breakdown = True
                break
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j_done = j + 1
            total += 1
            if abs(g[j + 1]) <= stop or breakdown:
                break
        if j_done:
            yk = np.linalg.solve(np.triu(H[:j_done, :j_done]), g[:j_done])
            x += yk @ Z[:j_done]
        if breakdown:
            if np.linalg.norm(b - A @ x) > stop:
                message = "Krylov breakdown"
            break
        if j_done == 0:
            break
    return _finish(A, b, x, tol, total, method, message)


class DirectSolver:
    """Sparse LU factorization reused across right-hand sides."""

    def __init__(self, A, cap: Optional[int] = DIRECT_CAP, symmetric: bool = False):
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        if cap is not None and A.shape[0] > cap:
            raise ValueError(f"dimension {A.shape[0]} exceeds direct-solve cap {cap}")
        A = sp.csc_matrix(A, dtype=float)
        if not np.all(np.isfinite(A.data)):
            raise ValueError("non-finite entries in matrix")
        self._perm = None
        if symmetric:
            # Symmetric minimum-degree ordering without pivoting (partial
            # pivoting destroys the ordering on refined meshes). A bandwidth
            # reducing pre-permutation makes the ordering step itself cheap.
            self._perm = reverse_cuthill_mckee(sp.csr_matrix(A), symmetric_mode=True)
            A = A[self._perm][:, self._perm]
            opts = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                        options=dict(SymmetricMode=True))
        else:
            opts = dict(permc_spec="COLAMD")
        try:
            self._lu = spla.splu(A, **opts)
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from None
        diag = np.abs(self._lu.U.diagonal())
        if diag.min() <= 1e-14 * diag.max():
            raise SingularMatrixError("matrix is singular to working precision")
        self.shape = A.shape

    def __call__(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self._perm is None:
            return self._lu.solve(b)
        x = np.empty_like(b)
        x[self._perm] = self._lu.solve(b[self._perm])
        return x


def solve_direct(A, b, cap: int = DIRECT_CAP) -> np.ndarray:
    """Solve ``A x = b`` by sparse LU.

    Raises
    ------
    SingularMatrixError
        If a pivot vanishes relative to the largest one.
    ValueError
        If ``A`` is larger than ``cap``.
    """
    b = _check_system(sp.csr_matrix(A), b)
    return DirectSolver(A, cap=cap)(b)
