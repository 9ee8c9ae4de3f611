"""ADMM drivers for the reduced box-constrained control problem.

Three drivers share one loop:

* :func:`run_classical` -- fixed mesh, u-subproblem solved to ``classical_tol``;
* :func:`run_inexact` -- fixed mesh, u-subproblem accurate to ``xi_{k+1}``;
* :func:`run_madmm` -- as ``run_inexact`` but the mesh is refined along a
  nested hierarchy while iterating; ``z`` and ``lam`` are carried to the new
  level by nodal interpolation.

Each iteration is ``u``-update, ``z = clamp(u + lam/sigma)``,
``lam += tau*sigma*(u - z)``, followed by the residuals ``eta_1..eta_5``
evaluated with fresh state/adjoint solves.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .errors import HierarchyMismatchError, SubproblemFailure
from .fem import AssembledLevel, assemble
from .mesh import MeshHierarchy
from .pdeop import solve_adjoint, solve_state, solve_u_subproblem

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
ALGORITHMS = ("classical", "inexact", "madmm")
ETA5_VARIANTS = ("mass", "lumped", "plain")
ETA_NORMS = ("euclidean", "l2")
SCHEMA_VERSION = 1


@dataclass
class SolverConfig:
    """Parameters shared by the drivers.

    ``sigma=None`` means ``0.1 * alpha``. The inexactness schedule is
    ``xi_{k+1} = xi_scale / (k+1)**xi_power``. ``eta5`` selects the
    complementarity residual used for termination: ``"mass"`` projects
    ``z + M lam``, ``"lumped"`` uses the lumped mass ``z + diag(M) lam``,
    ``"plain"`` uses ``z + lam``. All three are logged regardless.
    ``eta_norm`` picks the norm of the residuals, see :func:`kkt_residuals`.
    The classical driver uses its own dual step ``classical_tau``
    (unit step by default, the textbook scheme).
    """

    sigma: Optional[float] = None
    tau: float = 1.618
    eta_tol: float = 1e-6
    max_iter: int = 500
    xi_scale: float = 1e-3
    xi_power: float = 2.0
    algorithm: str = "madmm"
    classical_tol: float = 1e-12
    classical_tau: float = 1.0
    eta5: str = "plain"
    eta_norm: str = "l2"
    start_level: Optional[int] = None
    level_schedule: Optional[Callable[[int, int, int], int]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0.0 < self.tau < GOLDEN:
            raise ValueError(f"tau must lie in (0, {GOLDEN:.6f}), got {self.tau}")
        if not 0.0 < self.classical_tau < GOLDEN:
            raise ValueError(f"classical_tau must lie in (0, {GOLDEN:.6f})")
        if not self.eta_tol > 0:
            raise ValueError("eta_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.xi_scale > 0:
            raise ValueError("xi_scale must be positive")
        if not self.xi_power > 1.0:
            raise ValueError("xi_power must exceed 1 for a summable schedule")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.eta5 not in ETA5_VARIANTS:
            raise ValueError(f"eta5 must be one of {ETA5_VARIANTS}")
        if self.eta_norm not in ETA_NORMS:
            raise ValueError(f"eta_norm must be one of {ETA_NORMS}")

    def penalty(self, alpha: float) -> float:
        return 0.1 * alpha if self.sigma is None else float(self.sigma)

    def xi(self, k: int) -> float:
        """Subproblem accuracy for iteration ``k`` (0-based), i.e. ``xi_{k+1}``."""
        return self.xi_scale / (k + 1) ** self.xi_power

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "level_schedule"}
        d["level_schedule"] = "default" if self.level_schedule is None else getattr(
            self.level_schedule, "__name__", "custom")
        return d


def default_level_schedule(k: int, start_level: int, target_level: int) -> int:
    """Refine once per iteration until the target, then hold."""
    if start_level > target_level:
        raise ValueError("start level must not exceed target level")
    return min(start_level + k, target_level)


@dataclass
class IterateState:
    """ADMM iterate on one mesh level. ``u, z, lam`` live on all nodes,
    ``y, p`` on interior nodes."""

    level: int
    u: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    y: np.ndarray
    p: Optional[np.ndarray] = None
    delta_norm: float = float("nan")

    def as_dict(self) -> dict:
        out = {"level": self.level, "delta_norm": self.delta_norm}
        for name in ("u", "z", "lam", "y", "p"):
            v = getattr(self, name)
            out[name] = None if v is None else [float(x) for x in v]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "IterateState":
        arr = {k: (None if d[k] is None else np.asarray(d[k], dtype=float))
               for k in ("u", "z", "lam", "y", "p")}
        return cls(level=int(d["level"]), delta_norm=float(d["delta_norm"]), **arr)


@dataclass
class ResidualReport:
    """``eta`` is the max of ``eta1..eta5``; ``eta5`` is the termination
    variant, ``eta5_mass/lumped/plain`` are all logged. ``R`` is the
    squared KKT residual functional in L2."""

    eta1: float
    eta2: float
    eta3: float
    eta4: float
    eta5: float
    eta: float
    eta5_mass: float
    eta5_lumped: float
    eta5_plain: float
    R: float


def z_update(u, lam, sigma: float, bounds) -> np.ndarray:
    """``clamp(u + lam/sigma, a, b)`` componentwise."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    a, b = bounds
    if not a < b:
        raise ValueError("bounds must satisfy a < b")
    return np.clip(np.asarray(u, dtype=float) + np.asarray(lam, dtype=float) / sigma, a, b)


def lambda_update(lam_prev, u, z, tau: float, sigma: float) -> np.ndarray:
    """``lam + tau*sigma*(u - z)``."""
    return np.asarray(lam_prev, dtype=float) + tau * sigma * (np.asarray(u) - np.asarray(z))


def normal_cone_distance(z, lam, bounds) -> np.ndarray:
    """Componentwise distance of ``lam`` to the normal cone of ``[a, b]`` at
    ``z``: ``|lam|`` inside, ``max(lam, 0)`` at ``a``, ``max(-lam, 0)`` at ``b``."""
    a, b = bounds
    d = np.abs(lam)
    at_a = z <= a
    at_b = z >= b
    d = np.where(at_a, np.maximum(lam, 0.0), d)
    return np.where(at_b, np.maximum(-lam, 0.0), d)


def kkt_residuals(level: AssembledLevel, state: IterateState, lam_prev=None,
                  tol: float = 1e-7, eta5: str = "plain",
                  norm: str = "l2") -> ResidualReport:
    """Normalized KKT residuals of ``state``.

    ``y`` and ``p`` are recomputed from ``u`` at relative tolerance ``tol``
    and stored back into ``state``. ``lam_prev`` (default ``state.lam``) is
    the multiplier that entered the u-subproblem, used in ``R``.

    With ``norm="euclidean"`` every norm is the Euclidean norm of the
    coefficient vector. With ``norm="l2"`` coefficient vectors are measured
    as functions (``|v|_M``) and mass-weighted residuals as functionals
    (``|r|_{M^-1}``), which makes the residuals mesh independent.
    """
    a, b = level.bounds
    u, z, lam = state.u, state.z, state.lam
    lam_prev = lam if lam_prev is None else lam_prev
    y, _ = solve_state(level, u, tol, y0=state.y)
    p, _ = solve_adjoint(level, y, tol, p0=state.p)
    state.y, state.p = y, p
    K, M, Msc, Mss = level.K, level.M_cc, level.M_sc, level.M_ss

    if norm == "euclidean":
        prim_c = prim_s = dual_c = dual_s = np.linalg.norm
    elif norm == "l2":
        def prim_c(v):
            return math.sqrt(max(float(v @ (M @ v)), 0.0))

        def prim_s(v):
            return math.sqrt(max(float(v @ (Mss @ v)), 0.0))

        def dual_c(r):
            return math.sqrt(max(float(r @ level.mass_solve(r)), 0.0))

        def dual_s(r):
            return math.sqrt(max(float(r @ level.state_mass_solve(r)), 0.0))
    else:
        raise ValueError(f"unknown norm {norm!r}")

    nu = prim_c(u)
    nz = prim_c(z)
    Mlam = M @ lam
    grad = level.alpha * (M @ u) - Msc.T @ p
    Myr = Msc @ level.yr_vec

    eta1 = dual_s(K @ y - Msc @ u - Myr) / (1 + dual_s(Myr))
    eta2 = dual_c(M @ (u - z)) / (1 + nu)
    eta3 = dual_s(Mss @ (y - level.yd_vec) + K @ p) / (1 + dual_s(Mss @ level.yd_vec))
    eta4 = dual_c(grad + Mlam) / (1 + nu)

    def comp(shifted):
        return float(prim_c(z - np.clip(z + shifted, a, b)) / (1 + nz))

    variants = {"mass": comp(Mlam), "lumped": comp(level.lumped_mass * lam), "plain": comp(lam)}

    # R in L2: gradient representer M^{-1} grad plus lam_prev, then the
    # normal-cone distance and the constraint violation
    g = grad + M @ lam_prev
    r1 = float(g @ level.mass_solve(g))
    d = normal_cone_distance(z, lam_prev, (a, b))
    w = u - z
    R = r1 + float(d @ (M @ d)) + float(w @ (M @ w))

    e5 = variants[eta5]
    etas = [float(eta1), float(eta2), float(eta3), float(eta4), e5]
    return ResidualReport(*etas, max(etas), variants["mass"], variants["lumped"],
                          variants["plain"], max(R, 0.0))


ROW_FIELDS = ("k", "level", "state_dofs", "control_dofs", "eta1", "eta2", "eta3", "eta4",
              "eta5", "eta", "eta5_mass", "eta5_lumped", "eta5_plain", "R", "R_min",
              "k_R_min", "xi", "delta_norm", "delta_l2", "inner_iterations", "inner_method")


@dataclass
class IterationRow:
    k: int
    level: int
    state_dofs: int
    control_dofs: int
    eta1: float
    eta2: float
    eta3: float
    eta4: float
    eta5: float
    eta: float
    eta5_mass: float
    eta5_lumped: float
    eta5_plain: float
    R: float
    R_min: float
    k_R_min: float
    xi: float
    delta_norm: float
    delta_l2: float
    inner_iterations: int
    inner_method: str
    wall_time: float = 0.0  # cumulative seconds, kept out of CSV bodies


@dataclass
class RunRecord:
    """Per-iteration log plus final iterate of one driver run.

    ``mesh`` (the final level's mesh) is attached for convenience but not
    serialized.
    """

    algorithm: str
    problem: str
    target_level: int
    rows: list
    final: IterateState
    termination: str
    config: dict
    wall_time: float = 0.0
    message: str = ""
    mesh: object = field(default=None, repr=False, compare=False)

    @property
    def iterations(self) -> int:
        return len(self.rows)

    @property
    def converged(self) -> bool:
        return self.termination == "tolerance"

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "algorithm": self.algorithm,
            "problem": self.problem,
            "target_level": self.target_level,
            "termination": self.termination,
            "message": self.message,
            "wall_time": self.wall_time,
            "config": self.config,
            "rows": [asdict(r) for r in self.rows],
            "final": self.final.as_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {d.get('schema_version')!r}")
        return cls(
            algorithm=d["algorithm"],
            problem=d["problem"],
            target_level=int(d["target_level"]),
            rows=[IterationRow(**r) for r in d["rows"]],
            final=IterateState.from_dict(d["final"]),
            termination=d["termination"],
            config=d["config"],
            wall_time=float(d["wall_time"]),
            message=d.get("message", ""),
        )

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls.from_dict(json.loads(text))


def _problem_name(problem) -> str:
    return getattr(problem, "name", type(problem).__name__)


def _drive(problem, hierarchy: MeshHierarchy, config: SolverConfig, algorithm: str,
           schedule: Callable[[int], int]) -> RunRecord:
    t0 = time.perf_counter()
    target = hierarchy.finest.level
    sigma = config.penalty(problem.alpha)
    tau = config.classical_tau if algorithm == "classical" else config.tau
    bounds = tuple(float(v) for v in problem.bounds)
    eta_solve_tol = 0.1 * config.eta_tol

    current = schedule(0)
    lvl = assemble(hierarchy.mesh(current), problem)
    n = lvl.dofs.num_control
    state = IterateState(
        level=current,
        u=np.zeros(n),
        z=np.clip(np.zeros(n), *bounds),
        lam=np.zeros(n),
        y=np.zeros(lvl.dofs.num_state),
    )
    rows = []
    R_min, k_R_min = math.inf, 0
    termination, message = "max_iter", ""

    for k in range(config.max_iter):
        new = schedule(k)
        if new < current:
            raise HierarchyMismatchError("level schedule must be nondecreasing")
        if new != current:
            # carry the iterate to the finer level by nodal interpolation
            y_full = lvl.dofs.extend(state.y)
            state.u = hierarchy.prolong(state.u, current, new)
            state.z = hierarchy.prolong(state.z, current, new)
            state.lam = hierarchy.prolong(state.lam, current, new)
            lvl = assemble(hierarchy.mesh(new), problem)
            state.y = lvl.dofs.restrict(hierarchy.prolong(y_full, current, new))
            state.p = None
            state.level = current = new

        if algorithm == "classical":
            xi = config.classical_tol
        else:
            xi = config.xi(k)
        try:
            sub = solve_u_subproblem(lvl, state.z, state.lam, sigma, xi, u0=state.u, y0=state.y)
        except SubproblemFailure as exc:
            termination, message = "subproblem_failure", str(exc)
            break

        lam_prev = state.lam
        state.u, state.y = sub.u, sub.y
        state.delta_norm = sub.delta_norm
        state.z = z_update(state.u, lam_prev, sigma, bounds)
        state.lam = lambda_update(lam_prev, state.u, state.z, tau, sigma)
        res = kkt_residuals(lvl, state, lam_prev, eta_solve_tol, config.eta5, config.eta_norm)
        if res.R < R_min:
            R_min, k_R_min = res.R, k + 1
        rows.append(IterationRow(
            k=k + 1, level=current, state_dofs=lvl.dofs.num_state,
            control_dofs=lvl.dofs.num_control,
            eta1=res.eta1, eta2=res.eta2, eta3=res.eta3, eta4=res.eta4, eta5=res.eta5,
            eta=res.eta, eta5_mass=res.eta5_mass, eta5_lumped=res.eta5_lumped,
            eta5_plain=res.eta5_plain, R=res.R, R_min=R_min, k_R_min=(k + 1) * R_min,
            xi=xi, delta_norm=sub.delta_norm, delta_l2=sub.delta_l2,
            inner_iterations=sub.report.iterations, inner_method=sub.report.method,
            wall_time=time.perf_counter() - t0,
        ))
        if res.eta < config.eta_tol and current == target:
            termination = "tolerance"
            break

    cfg = config.as_dict()
    cfg.update(algorithm=algorithm, sigma=sigma, tau=tau)
    return RunRecord(
        algorithm=algorithm,
        problem=_problem_name(problem),
        target_level=target,
        rows=rows,
        final=state,
        termination=termination,
        config=cfg,
        wall_time=time.perf_counter() - t0,
        message=message,
        mesh=lvl.mesh,
    )


def _single_level(problem, level):
    if isinstance(level, MeshHierarchy):
        return MeshHierarchy.build(level.finest, 0)
    return MeshHierarchy.build(problem.mesh(level), 0)


def run_classical(problem, level, config: Optional[SolverConfig] = None) -> RunRecord:
    """ADMM on a fixed mesh with (numerically) exact u-subproblems.

    ``level`` is a level index understood by ``problem.mesh`` or a
    :class:`MeshHierarchy` whose finest mesh is used.
    """
    config = config or SolverConfig(algorithm="classical")
    h = _single_level(problem, level)
    return _drive(problem, h, config, "classical", lambda k: h.finest.level)


def run_inexact(problem, level, config: Optional[SolverConfig] = None) -> RunRecord:
    """ADMM on a fixed mesh with u-subproblems accurate to ``xi_{k+1}``."""
    config = config or SolverConfig(algorithm="inexact")
    h = _single_level(problem, level)
    return _drive(problem, h, config, "inexact", lambda k: h.finest.level)


def run_madmm(problem, hierarchy: MeshHierarchy, config: Optional[SolverConfig] = None) -> RunRecord:
    """Multi-level inexact ADMM along ``hierarchy``.

    The active level at iteration ``k`` is
    ``config.level_schedule(k, start, target)`` (default
    :func:`default_level_schedule`), where ``start`` is
    ``config.start_level`` or the coarsest level of ``hierarchy``.
    """
    config = config or SolverConfig()
    start = hierarchy.coarsest.level if config.start_level is None else config.start_level
    target = hierarchy.finest.level
    if not hierarchy.coarsest.level <= start <= target:
        raise HierarchyMismatchError(
            f"start level {start} outside hierarchy [{hierarchy.coarsest.level}, {target}]")
    rule = config.level_schedule or default_level_schedule

    def schedule(k):
        lev = rule(k, start, target)
        if not start <= lev <= target:
            raise HierarchyMismatchError(f"schedule returned level {lev} outside [{start}, {target}]")
        return lev

    return _drive(problem, hierarchy, config, "madmm", schedule)


def run(problem, target_level: int, config: SolverConfig) -> RunRecord:
    """Dispatch on ``config.algorithm``; mADMM starts at
    ``config.start_level`` or the problem's default start level."""
    if config.algorithm == "madmm":
        start = config.start_level
        if start is None:
            start = min(getattr(problem, "default_start_level", target_level), target_level)
        return run_madmm(problem, problem.hierarchy(start, target_level), config)
    driver = run_classical if config.algorithm == "classical" else run_inexact
    return driver(problem, target_level, config)
