"""Discrete solution operator, adjoint, reduced objective and the
u-subproblem of the ADMM iteration.

With ``beta = alpha + sigma`` the stationarity condition of the
u-subproblem reads ``beta*M_cc u = M_cc (sigma z - lam) + M_sc^T p``.
Because ``M_sc^T`` is the interior-column block of ``M_cc``, this is
equivalent to

* boundary nodes: ``u_B = (sigma z_B - lam_B) / beta``
* interior nodes: ``p = beta u_I + lam_I - sigma z_I``

so ``p`` can be eliminated and what remains is the 2x2 block system ::

    [ M_ss   beta K ] [ y   ]   [ M_ss y_d - K (lam_I - sigma z_I) ]
    [ K      -M_ss  ] [ u_I ] = [ M_sc y_r + M_ib u_B              ]

It is solved by right-preconditioned GMRES with ``blkdiag(G, G)``,
``G = M_ss + sqrt(beta) K``; the preconditioned spectrum lies in
``+-[1/sqrt(2), 1]`` independently of the mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import SubproblemFailure
from .fem import AssembledLevel
from .linalg import (DIRECT_CAP, DirectSolver, SolveReport, as_csr,
                     solve_block_nonsym, solve_spd)


def _spd_solve(level: AssembledLevel, rhs, tol, x0=None):
    # the sparse factorization of K serves as CG preconditioner
    lu = level.stiffness_solver()
    return solve_spd(level.K, rhs, tol=max(tol, 1e-14), x0=x0, preconditioner=lu)


def solve_state(level: AssembledLevel, u: np.ndarray, tol: float = 1e-12, y0=None):
    """Solve ``K y = M_sc (u + y_r)``.

    Returns
    -------
    y : ndarray on state dofs
    report : SolveReport
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (level.dofs.num_control,):
        raise ValueError(f"control vector has shape {u.shape}, expected "
                         f"({level.dofs.num_control},)")
    return _spd_solve(level, level.M_sc @ (u + level.yr_vec), tol, y0)


def solve_adjoint(level: AssembledLevel, y: np.ndarray, tol: float = 1e-12, p0=None):
    """Solve ``K p = M_ss (y_d - y)``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (level.dofs.num_state,):
        raise ValueError(f"state vector has shape {y.shape}, expected "
                         f"({level.dofs.num_state},)")
    return _spd_solve(level, level.M_ss @ (level.yd_vec - y), tol, p0)


def objective(level: AssembledLevel, u: np.ndarray, tol: float = 1e-12) -> float:
    """Reduced cost ``1/2 |y - y_d|_M^2 + alpha/2 |u|_M^2``."""
    y, _ = solve_state(level, u, tol)
    e = y - level.yd_vec
    return 0.5 * float(e @ (level.M_ss @ e)) + 0.5 * level.alpha * float(u @ (level.M_cc @ u))


def gradient(level: AssembledLevel, u: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Coefficient-space gradient ``alpha M_cc u - M_sc^T p`` of
    :func:`objective`."""
    inner = tol / 10.0
    y, _ = solve_state(level, u, inner)
    p, _ = solve_adjoint(level, y, inner)
    return level.alpha * (level.M_cc @ u) - level.M_sc.T @ p


def error_vector(level: AssembledLevel, u, z, lam, sigma, tol: float = 1e-12):
    """Stationarity residual of the u-subproblem,
    ``alpha M u - M_sc^T p + M lam + sigma M (u - z)``, with ``p`` from
    fresh state and adjoint solves at relative tolerance ``tol``.

    Returns ``(delta, y, p)``.
    """
    y, _ = solve_state(level, u, tol)
    p, _ = solve_adjoint(level, y, tol)
    M = level.M_cc
    delta = M @ ((level.alpha + sigma) * u + lam - sigma * z) - level.M_sc.T @ p
    return delta, y, p


def block_matrix(level: AssembledLevel, beta: float) -> sp.csr_matrix:
    """The 2x2 block matrix ``[[M_ss, beta K], [K, -M_ss]]``."""
    key = ("block", beta)
    if key not in level._cache:
        level._cache[key] = as_csr(sp.bmat(
            [[level.M_ss, beta * level.K], [level.K, -level.M_ss]]))
    return level._cache[key]


def block_preconditioner(level: AssembledLevel, beta: float):
    """``v -> blkdiag(G, G)^{-1} v`` with ``G = M_ss + sqrt(beta) K``."""
    key = ("block_pc", beta)
    if key not in level._cache:
        n = level.dofs.num_state
        G = DirectSolver(level.M_ss + np.sqrt(beta) * level.K, cap=None, symmetric=True)

        def apply(v):
            return np.concatenate([G(v[:n]), G(v[n:])])

        level._cache[key] = apply
    return level._cache[key]


def u_subproblem_system(level: AssembledLevel, z, lam, sigma):
    """Block matrix, right-hand side and the explicit boundary controls.

    Returns ``(A, b, u_boundary)``.
    """
    beta = level.alpha + sigma
    dofs = level.dofs
    w = sigma * np.asarray(z, dtype=float) - np.asarray(lam, dtype=float)
    u_b = w[dofs.boundary_dofs] / beta
    f = level.M_ss @ level.yd_vec + level.K @ w[dofs.state_dofs]
    g = level.M_sc @ level.yr_vec + level.M_ib @ u_b
    return block_matrix(level, beta), np.concatenate([f, g]), u_b


@dataclass
class SubproblemResult:
    """Approximate u-subproblem solution and its accuracy certificate.

    ``delta_norm`` is the Euclidean norm of the coefficient-space error
    vector, ``delta_l2`` the L2 norm of the function it represents.
    """

    u: np.ndarray
    y: np.ndarray
    p: np.ndarray
    delta_norm: float
    delta_l2: float
    report: SolveReport
    history: list = field(default_factory=list)


def solve_u_subproblem(level: AssembledLevel, z, lam, sigma: float, tol_xi: float,
                       u0=None, y0=None, max_tightenings: int = 6,
                       direct_cap: int = DIRECT_CAP) -> SubproblemResult:
    """Approximately minimise the augmented Lagrangian in ``u``.

    The block system is solved with GMRES at relative tolerance
    ``max(tol_xi/10, 1e-13)``; the error vector is then measured with
    independent state/adjoint solves. While ``||delta||_2 > tol_xi`` the
    Krylov tolerance is cut by 10 (at most ``max_tightenings`` times,
    warm-starting from the last iterate). If that still fails and the
    system is no larger than ``direct_cap`` a sparse LU solve is tried.

    Raises
    ------
    SubproblemFailure
        The accuracy ``tol_xi`` could not be certified.
    """
    if sigma <= 0:
        raise ValueError("penalty sigma must be positive")
    dofs = level.dofs
    ns = dofs.num_state
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    A, b, u_b = u_subproblem_system(level, z, lam, sigma)
    pc = block_preconditioner(level, level.alpha + sigma)

    x = None
    if u0 is not None or y0 is not None:
        x = np.zeros(2 * ns)
        if y0 is not None:
            x[:ns] = y0
        if u0 is not None:
            x[ns:] = np.asarray(u0)[dofs.state_dofs]

    u = np.empty(dofs.num_control)
    u[dofs.boundary_dofs] = u_b
    check_tol = max(tol_xi / 10.0, 1e-14)
    tol_in = max(tol_xi / 10.0, 1e-13)
    history = []
    total_iters = 0
    report = None

    def certify(x):
        u[dofs.state_dofs] = x[ns:]
        delta, _, p = error_vector(level, u, z, lam, sigma, check_tol)
        return delta, p

    for _ in range(max_tightenings + 1):
        x, report = solve_block_nonsym(A, b, tol=tol_in, x0=x, preconditioner=pc)
        total_iters += report.iterations
        delta, p = certify(x)
        dn = float(np.linalg.norm(delta))
        history.append({"tol": tol_in, "iterations": report.iterations,
                        "delta_norm": dn, "method": report.method})
        if dn <= tol_xi:
            break
        tol_in /= 10.0
    else:
        if A.shape[0] > direct_cap:
            raise SubproblemFailure(
                f"||delta|| = {dn:.3e} > {tol_xi:.3e} after {max_tightenings} tightenings",
                {"history": history},
            )
        x = DirectSolver(A, cap=direct_cap)(b)
        delta, p = certify(x)
        dn = float(np.linalg.norm(delta))
        res = float(np.linalg.norm(b - A @ x))
        report = SolveReport(1, res, True, "direct", 0.0, "direct fallback")
        history.append({"tol": 0.0, "iterations": 1, "delta_norm": dn, "method": "direct"})
        if dn > tol_xi:
            raise SubproblemFailure(
                f"||delta|| = {dn:.3e} > {tol_xi:.3e} even with a direct solve",
                {"history": history},
            )

    report = SolveReport(total_iters, report.final_residual, report.converged,
                         report.method, report.tolerance, report.message)
    delta_l2 = float(np.sqrt(max(delta @ level.mass_solve(delta), 0.0)))
    return SubproblemResult(u.copy(), x[:ns].copy(), p, dn, delta_l2, report, history)
