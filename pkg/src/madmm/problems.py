"""Benchmark problems.

* :func:`example1` -- unit disk, ``y_d = (1 - |x|^2) x_1``, no closed-form
  solution; errors are measured against a fine-level reference solve.
* :func:`example2` -- unit square with manufactured solution
  ``r = min(1, max(0.3, 2 sin(pi x1) sin(pi x2)))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import NotConvergedError
from .fem import DofMap, ScalarField, load_vector, stiffness_matrix
from .linalg import DirectSolver, as_csr
from .mesh import (UNIT_DISK, UNIT_SQUARE, MeshHierarchy, TriangleMesh,
                   refine_uniform, unit_disk_mesh, unit_square_mesh)


def _zero(x1, x2):
    return np.zeros_like(np.asarray(x1, dtype=float))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Box-constrained elliptic control problem with ``L = -div(A grad) + c0``.

    ``y_d``, ``y_r`` and ``exact_u`` are scalar fields ``f(x1, x2)``
    evaluated on coordinate arrays.
    """

    name: str
    domain: str
    alpha: float
    bounds: tuple
    y_d: ScalarField
    y_r: ScalarField = _zero
    exact_u: Optional[ScalarField] = None
    diffusion: Optional[np.ndarray] = None
    reaction: float = 0.0
    max_level: Optional[int] = None
    default_start_level: int = 4
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        a, b = self.bounds
        if not a < b:
            raise ValueError(f"bounds must satisfy a < b, got {self.bounds}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.domain not in (UNIT_SQUARE, UNIT_DISK):
            raise ValueError(f"unknown domain {self.domain!r}")

    def _check_level(self, level):
        if self.max_level is not None and level > self.max_level:
            raise ValueError(
                f"level {level} is finer than this problem's data supports "
                f"(max {self.max_level}); rebuild it with a finer reference level"
            )

    def mesh(self, level: int) -> TriangleMesh:
        """The level-``level`` mesh: ``unit_square_mesh(2**level)`` or
        ``unit_disk_mesh(level)``."""
        self._check_level(level)
        if self.domain == UNIT_SQUARE:
            return unit_square_mesh(2**level)
        return unit_disk_mesh(level)

    def hierarchy(self, start: int, target: int) -> MeshHierarchy:
        if start > target:
            raise ValueError("start level must not exceed target level")
        self._check_level(target)
        return MeshHierarchy.build(self.mesh(start), target - start)

    def nodal_yd(self, mesh: TriangleMesh) -> np.ndarray:
        self._check_level(mesh.level)
        x = mesh.nodes
        return np.asarray(self.y_d(x[:, 0], x[:, 1]), dtype=float)

    def exact_in_bounds(self, n: int = 101) -> bool:
        if self.exact_u is None:
            return True
        t = np.linspace(0.0, 1.0, n)
        x1, x2 = np.meshgrid(t, t)
        if self.domain == UNIT_DISK:
            x1, x2 = 2 * x1 - 1, 2 * x2 - 1
        v = self.exact_u(x1, x2)
        return bool(np.all(v >= self.bounds[0]) and np.all(v <= self.bounds[1]))


def example1() -> ProblemSpec:
    """Unit disk, ``alpha = 0.1``, ``u`` in ``[-0.2, 0.2]``."""

    def y_d(x1, x2):
        return (1.0 - (x1**2 + x2**2)) * x1

    return ProblemSpec(
        name="example1",
        domain=UNIT_DISK,
        alpha=0.1,
        bounds=(-0.2, 0.2),
        y_d=y_d,
    )


class SquareGridField:
    """Piecewise-linear function on ``unit_square_mesh(n)`` given by its
    nodal values, callable at arbitrary points of the unit square."""

    def __init__(self, values: np.ndarray, n: int):
        self.n = n
        self.grid = np.asarray(values, dtype=float).reshape(n + 1, n + 1)  # [j, i]

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        n = self.n
        sx = np.clip(x1, 0.0, 1.0) * n
        sy = np.clip(x2, 0.0, 1.0) * n
        i = np.minimum(np.floor(sx).astype(np.int64), n - 1)
        j = np.minimum(np.floor(sy).astype(np.int64), n - 1)
        s = sx - i
        t = sy - j
        g = self.grid
        v00, v10 = g[j, i], g[j, i + 1]
        v01, v11 = g[j + 1, i], g[j + 1, i + 1]
        lower = v00 + s * (v10 - v00) + t * (v11 - v10)
        upper = v00 + t * (v01 - v00) + s * (v11 - v01)
        return np.where(s >= t, lower, upper)


def _bump(x1, x2):
    return np.sin(np.pi * x1) * np.sin(np.pi * x2)


def manufactured_control(x1, x2):
    return np.minimum(1.0, np.maximum(0.3, 2.0 * _bump(x1, x2)))


@lru_cache(maxsize=4)
def _state_of_manufactured_control(reference_level: int) -> SquareGridField:
    # S r on unit_square_mesh(2**reference_level), load vector by quadrature
    n = 2**reference_level
    mesh = unit_square_mesh(n)
    dofs = DofMap.from_mesh(mesh)
    s = dofs.state_dofs
    K = as_csr(stiffness_matrix(mesh)[s][:, s])
    rhs = load_vector(manufactured_control, mesh)[s]
    y = dofs.extend(DirectSolver(K, cap=None, symmetric=True)(rhs))
    return SquareGridField(y, n)


def example2(reference_level: int = 9) -> ProblemSpec:
    """Unit square, ``alpha = 1e-3``, ``u`` in ``[0.3, 1]``, exact control
    :func:`manufactured_control`.

    The desired state is ``y_d = S r + 4 pi^2 alpha sin(pi x1) sin(pi x2)``
    where ``S r`` is computed once by P1 elements on
    ``unit_square_mesh(2**reference_level)``. With this choice the adjoint
    is ``2 alpha sin sin`` and the projection formula returns ``r``.
    Working levels may not exceed ``reference_level - 2``.
    """
    if reference_level < 3:
        raise ValueError("reference level must be at least 3")
    alpha = 1e-3
    sr = _state_of_manufactured_control(int(reference_level))

    def y_d(x1, x2):
        return sr(x1, x2) + 4.0 * np.pi**2 * alpha * _bump(x1, x2)

    return ProblemSpec(
        name="example2",
        domain=UNIT_SQUARE,
        alpha=alpha,
        bounds=(0.3, 1.0),
        y_d=y_d,
        exact_u=manufactured_control,
        max_level=int(reference_level) - 2,
        meta={"reference_level": int(reference_level)},
    )


PROBLEMS: dict = {"example1": example1, "example2": example2}


def get_problem(name: str, **kwargs) -> ProblemSpec:
    try:
        factory: Callable = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(**kwargs)


def transfer_to(values: np.ndarray, mesh: TriangleMesh, target: TriangleMesh) -> np.ndarray:
    """Nodal values of the P1 function ``values`` on ``mesh`` at the nodes of
    ``target``, a uniform refinement (possibly several levels) of ``mesh``
    built from the same family.

    The refinement chain is rebuilt from ``mesh`` and matched to ``target``
    node by node through coordinates, so the two may number nodes
    differently.
    """
    current, vals = mesh, np.asarray(values, dtype=float)
    while current.num_nodes < target.num_nodes:
        fine = refine_uniform(current)
        a, b = fine.provenance.T
        vals = 0.5 * (vals[a] + vals[b])
        current = fine
    if current.num_nodes != target.num_nodes:
        raise ValueError("target is not a uniform refinement of mesh")
    dist, idx = cKDTree(current.nodes).query(target.nodes)
    if dist.max() > 1e-10:
        raise ValueError("target nodes do not coincide with the refined mesh")
    return vals[idx]


_REFERENCE_CACHE: dict = {}


def reference_solution(problem: ProblemSpec, fine_level: int, config=None,
                       start_level: Optional[int] = None):
    """Tightly converged multi-level solve on ``fine_level``.

    Returns ``(u, mesh)``; cached per (problem name, level, tolerance).

    Raises
    ------
    NotConvergedError
        If the solve stops before ``eta < config.eta_tol`` (record attached).
    """
    from .admm import SolverConfig, run_madmm

    if config is None:
        config = SolverConfig(eta_tol=1e-9, max_iter=500)
    start = min(problem.default_start_level, fine_level) if start_level is None else start_level
    key = (problem.name, id(problem.y_d), fine_level, config.eta_tol, start)
    if key not in _REFERENCE_CACHE:
        record = run_madmm(problem, problem.hierarchy(start, fine_level), config)
        if record.termination != "tolerance":
            raise NotConvergedError(
                f"reference solve on level {fine_level} did not converge", record)
        _REFERENCE_CACHE[key] = (record.final.u, record.mesh)
    return _REFERENCE_CACHE[key]


def error_against_reference(u: np.ndarray, mesh: TriangleMesh, u_ref: np.ndarray,
                            ref_mesh: TriangleMesh) -> float:
    """``||I u - u_ref||_{L2}`` on the reference mesh, ``I`` the nested
    prolongation."""
    from .fem import mass_matrix

    d = transfer_to(u, mesh, ref_mesh) - u_ref
    return float(np.sqrt(d @ (mass_matrix(ref_mesh) @ d)))
