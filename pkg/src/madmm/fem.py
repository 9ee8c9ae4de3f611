"""P1 finite elements: assembly, dof bookkeeping, interpolation, L2 norms.

The state lives on interior nodes (homogeneous Dirichlet data eliminated),
the control on all nodes. ``M_sc`` couples the two: rows are interior
nodes, columns all nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import InvalidFunctionError, InvalidMeshError
from .linalg import DirectSolver, as_csr, solve_spd
from .mesh import TriangleMesh

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Symmetric 6-point rule, exact for polynomials of degree 4 on triangles.
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
QUAD_BARY = np.array([
    [_A1, _A1, 1 - 2 * _A1],
    [_A1, 1 - 2 * _A1, _A1],
    [1 - 2 * _A1, _A1, _A1],
    [_A2, _A2, 1 - 2 * _A2],
    [_A2, 1 - 2 * _A2, _A2],
    [1 - 2 * _A2, _A2, _A2],
])
QUAD_WEIGHTS = np.array([_W1, _W1, _W1, _W2, _W2, _W2])

_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass(frozen=True, eq=False)
class DofMap:
    """State dofs are the interior nodes, control dofs every node."""

    mesh: TriangleMesh
    state_dofs: np.ndarray
    control_dofs: np.ndarray
    node_to_state: np.ndarray  # -1 on boundary nodes

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh) -> "DofMap":
        interior = np.flatnonzero(~mesh.boundary_mask)
        node_to_state = np.full(mesh.num_nodes, -1, dtype=np.int64)
        node_to_state[interior] = np.arange(interior.size)
        return cls(mesh, interior, np.arange(mesh.num_nodes), node_to_state)

    @property
    def num_state(self) -> int:
        return self.state_dofs.size

    @property
    def num_control(self) -> int:
        return self.control_dofs.size

    @property
    def boundary_dofs(self) -> np.ndarray:
        return np.flatnonzero(self.node_to_state < 0)

    def extend(self, state_vec: np.ndarray) -> np.ndarray:
        """State vector to all nodes, zero on the boundary."""
        full = np.zeros(self.mesh.num_nodes)
        full[self.state_dofs] = state_vec
        return full

    def restrict(self, node_vec: np.ndarray) -> np.ndarray:
        return np.asarray(node_vec)[self.state_dofs]


def element_matrices(mesh: TriangleMesh, diffusion=None, reaction: float = 0.0):
    """Local P1 stiffness and mass matrices, shape (T, 3, 3) each."""
    p = mesh.nodes[mesh.triangles]
    area = mesh.signed_areas()
    if np.any(area <= 0.0):
        raise InvalidMeshError("degenerate or inverted triangle")
    # barycentric gradients: rows are grad(lambda_k)
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    grads = np.stack([-e[:, :, 1], e[:, :, 0]], axis=2) / (2.0 * area)[:, None, None]
    A = np.eye(2) if diffusion is None else np.asarray(diffusion, dtype=float)
    stiff = area[:, None, None] * np.einsum("tia,ab,tjb->tij", grads, A, grads)
    mass = area[:, None, None] * _MASS_REF[None]
    if reaction:
        stiff = stiff + reaction * mass
    return stiff, mass


def _scatter(mesh: TriangleMesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.num_nodes
    return as_csr(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)))


def stiffness_matrix(mesh: TriangleMesh, diffusion=None, reaction: float = 0.0):
    stiff, _ = element_matrices(mesh, diffusion, reaction)
    return _scatter(mesh, stiff)


def mass_matrix(mesh: TriangleMesh) -> sp.csr_matrix:
    _, mass = element_matrices(mesh)
    return _scatter(mesh, mass)


def interpolate_nodal(f: ScalarField, mesh: TriangleMesh) -> np.ndarray:
    """Nodal values ``f(x_i)``; ``f`` takes coordinate arrays ``(x1, x2)``."""
    x = mesh.nodes
    vals = np.asarray(f(x[:, 0], x[:, 1]), dtype=float)
    vals = np.broadcast_to(vals, (mesh.num_nodes,)).copy()
    if not np.all(np.isfinite(vals)):
        raise InvalidFunctionError("field is not finite at every mesh node")
    return vals


def quadrature_points(mesh: TriangleMesh):
    """Physical quadrature points (T, 6, 2) and weights (T, 6) incl. area."""
    p = mesh.nodes[mesh.triangles]
    pts = np.einsum("qk,tkd->tqd", QUAD_BARY, p)
    w = mesh.signed_areas()[:, None] * QUAD_WEIGHTS[None, :]
    return pts, w


def l2_error(coeffs: np.ndarray, exact: Optional[ScalarField], mesh: TriangleMesh) -> float:
    """``||u_h - exact||_{L2(Omega_h)}`` by the degree-4 quadrature rule.

    ``coeffs`` holds nodal values on every node. ``exact=None`` measures
    ``||u_h||``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    pts, w = quadrature_points(mesh)
    uh = np.einsum("qk,tk->tq", QUAD_BARY, coeffs[mesh.triangles])
    if exact is not None:
        uh = uh - np.asarray(exact(pts[..., 0], pts[..., 1]), dtype=float)
    return float(np.sqrt(np.sum(w * uh**2)))


def load_vector(f: ScalarField, mesh: TriangleMesh) -> np.ndarray:
    """``(int f phi_i dx)_i`` over all nodes, by quadrature."""
    pts, w = quadrature_points(mesh)
    fq = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
    contrib = np.einsum("tq,qk->tk", w * fq, QUAD_BARY)
    return np.bincount(mesh.triangles.ravel(), contrib.ravel(), minlength=mesh.num_nodes)


def l2_inner(M, u: np.ndarray, v: np.ndarray) -> float:
    """Discrete L2 inner product ``u^T M v``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (M.shape[0],) or v.shape != (M.shape[1],):
        raise ValueError(f"dimension mismatch: {u.shape}, {M.shape}, {v.shape}")
    return float(u @ (M @ v))


@dataclass(eq=False)
class AssembledLevel:
    """One mesh level's discrete problem data.

    ``K``, ``M_ss`` act on state dofs, ``M_cc`` on control dofs, ``M_sc``
    maps control to state. ``yd_vec`` is indexed by state dofs, ``yr_vec``
    by control dofs. Factorizations are created lazily and cached.
    """

    mesh: TriangleMesh
    dofs: DofMap
    K: sp.csr_matrix
    M_ss: sp.csr_matrix
    M_sc: sp.csr_matrix
    M_cc: sp.csr_matrix
    yd_vec: np.ndarray
    yr_vec: np.ndarray
    alpha: float
    bounds: tuple
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def lumped_mass(self) -> np.ndarray:
        if "lumped" not in self._cache:
            self._cache["lumped"] = np.asarray(self.M_cc.sum(axis=1)).ravel()
        return self._cache["lumped"]

    @property
    def M_ib(self) -> sp.csr_matrix:
        """Interior rows, boundary columns of the mass matrix."""
        if "M_ib" not in self._cache:
            self._cache["M_ib"] = as_csr(self.M_sc[:, self.dofs.boundary_dofs])
        return self._cache["M_ib"]

    def stiffness_solver(self) -> DirectSolver:
        if "K_lu" not in self._cache:
            self._cache["K_lu"] = DirectSolver(self.K, cap=None, symmetric=True)
        return self._cache["K_lu"]

    def mass_solve(self, rhs: np.ndarray, tol: float = 1e-13) -> np.ndarray:
        """Solve ``M_cc x = rhs`` (Jacobi-preconditioned CG; M is well
        conditioned)."""
        inv = 1.0 / self.M_cc.diagonal()
        x, _ = solve_spd(self.M_cc, rhs, tol=tol, preconditioner=lambda r: inv * r)
        return x

    def state_mass_solve(self, rhs: np.ndarray, tol: float = 1e-13) -> np.ndarray:
        """Solve ``M_ss x = rhs``."""
        inv = 1.0 / self.M_ss.diagonal()
        x, _ = solve_spd(self.M_ss, rhs, tol=tol, preconditioner=lambda r: inv * r)
        return x

    def clear_cache(self):
        self._cache.clear()


def assemble(mesh: TriangleMesh, problem) -> AssembledLevel:
    """Assemble stiffness, mass blocks and data vectors for ``problem``.

    ``problem`` provides ``alpha``, ``bounds``, ``y_d``, ``y_r`` and the
    constant coefficients ``diffusion`` / ``reaction``. If it defines
    ``nodal_yd(mesh)`` that hook supplies the nodal values of ``y_d``.
    """
    dofs = DofMap.from_mesh(mesh)
    K_full = stiffness_matrix(mesh, getattr(problem, "diffusion", None),
                              getattr(problem, "reaction", 0.0))
    M_full = mass_matrix(mesh)
    s = dofs.state_dofs
    K = as_csr(K_full[s][:, s])
    M_ss = as_csr(M_full[s][:, s])
    M_sc = as_csr(M_full[s])
    hook = getattr(problem, "nodal_yd", None)
    yd_nodes = hook(mesh) if hook is not None else interpolate_nodal(problem.y_d, mesh)
    yr_nodes = interpolate_nodal(problem.y_r, mesh)
    return AssembledLevel(
        mesh=mesh,
        dofs=dofs,
        K=K,
        M_ss=M_ss,
        M_sc=M_sc,
        M_cc=M_full,
        yd_vec=dofs.restrict(yd_nodes),
        yr_vec=yr_nodes,
        alpha=float(problem.alpha),
        bounds=(float(problem.bounds[0]), float(problem.bounds[1])),
    )
