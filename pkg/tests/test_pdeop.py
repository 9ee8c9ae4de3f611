import numpy as np
import pytest
import scipy.sparse as sp

from oracles import dense_blocks, dense_objective, dense_reduced_hessian, dense_subproblem, m_norm
from madmm.errors import SubproblemFailure
from madmm.fem import assemble
from madmm.mesh import unit_disk_mesh, unit_square_mesh
from madmm.pdeop import (block_matrix, error_vector, gradient, objective, solve_adjoint,
                         solve_state, solve_u_subproblem, u_subproblem_system)
from madmm.problems import ProblemSpec


@pytest.fixture
def disk_level():
    prob = ProblemSpec(name="disk", domain="unit_disk", alpha=0.1, bounds=(-0.2, 0.2),
                       y_d=lambda a, b: (1 - a**2 - b**2) * a,
                       y_r=lambda a, b: 0.1 * b)
    return assemble(unit_disk_mesh(2), prob)


class TestStateAdjoint:
    def test_zero_source(self, toy_level):
        y, rep = solve_state(toy_level, -toy_level.yr_vec)
        assert not np.any(y) and rep.converged

    def test_residual_contract(self, disk_level, rng):
        u = rng.standard_normal(disk_level.dofs.num_control)
        tol = 1e-10
        y, rep = solve_state(disk_level, u, tol)
        rhs = disk_level.M_sc @ (u + disk_level.yr_vec)
        assert np.linalg.norm(disk_level.K @ y - rhs) <= tol * np.linalg.norm(rhs)
        p, rep = solve_adjoint(disk_level, y, tol)
        rhs = disk_level.M_ss @ (disk_level.yd_vec - y)
        assert np.linalg.norm(disk_level.K @ p - rhs) <= tol * np.linalg.norm(rhs)

    def test_adjoint_at_desired_state(self, toy_level):
        p, _ = solve_adjoint(toy_level, toy_level.yd_vec)
        assert not np.any(p)

    def test_shape_checks(self, toy_level):
        with pytest.raises(ValueError):
            solve_state(toy_level, np.zeros(3))
        with pytest.raises(ValueError):
            solve_adjoint(toy_level, np.zeros(3))

    @pytest.mark.parametrize("level_fixture", ["toy_level", "disk_level"])
    def test_adjoint_symmetry(self, level_fixture, request, rng):
        # <S a, b>_M = <a, S* b>_M with S = K^-1 M_sc and S* = M^-1 M_sc^T K^-1 M_ss
        lvl = request.getfixturevalue(level_fixture)
        a = rng.standard_normal(lvl.dofs.num_control)
        b = rng.standard_normal(lvl.dofs.num_state)
        Sa, _ = solve_state(lvl, a - lvl.yr_vec, tol=1e-13)
        lhs = Sa @ (lvl.M_ss @ b)
        w, _ = solve_adjoint(lvl, lvl.yd_vec - b, tol=1e-13)  # K w = M_ss b
        rhs = a @ (lvl.M_sc.T @ w)
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


class TestObjective:
    def test_zero(self):
        prob = ProblemSpec(name="z", domain="unit_square", alpha=1.0, bounds=(0, 1),
                           y_d=lambda a, b: np.zeros_like(a))
        lvl = assemble(unit_square_mesh(4), prob)
        u = np.zeros(lvl.dofs.num_control)
        assert objective(lvl, u) == 0.0
        assert not np.any(gradient(lvl, u))

    def test_matches_dense(self, disk_level, rng):
        u = rng.standard_normal(disk_level.dofs.num_control)
        assert objective(disk_level, u) == pytest.approx(dense_objective(disk_level, u), rel=1e-11)

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_gradient_central_differences(self, toy_problem, k, rng):
        lvl = assemble(unit_square_mesh(2**k), toy_problem)
        u = rng.standard_normal(lvl.dofs.num_control)
        d = rng.standard_normal(lvl.dofs.num_control)
        eps = 1e-4
        fd = (objective(lvl, u + eps * d, 1e-14) - objective(lvl, u - eps * d, 1e-14)) / (2 * eps)
        g = gradient(lvl, u, 1e-13) @ d
        assert abs(fd - g) <= 1e-5 * abs(g)

    def test_gradient_vanishes_at_unconstrained_minimiser(self, toy_level):
        H, c = dense_reduced_hessian(toy_level)
        u = np.linalg.solve(H, c)
        assert np.linalg.norm(gradient(toy_level, u, 1e-13)) <= 1e-8


class TestSubproblem:
    def data(self, lvl, rng):
        n = lvl.dofs.num_control
        return rng.uniform(*lvl.bounds, n), 0.01 * rng.standard_normal(n)

    def test_matches_dense(self, disk_level, rng):
        z, lam = self.data(disk_level, rng)
        sigma = 0.05
        res = solve_u_subproblem(disk_level, z, lam, sigma, tol_xi=1e-12)
        ref = dense_subproblem(disk_level, z, lam, sigma)
        assert m_norm(disk_level, res.u - ref) <= 1e-8 * max(1.0, m_norm(disk_level, ref))
        assert res.delta_norm <= 1e-12

    def test_matches_three_by_three_system(self, toy_level, rng):
        # optimality system in (y, u, p) solved densely
        z, lam = self.data(toy_level, rng)
        sigma = toy_level.alpha
        beta = toy_level.alpha + sigma
        K, Mss, Msc, M = (sp.csr_matrix(A) for A in dense_blocks(toy_level))
        ns, nc = Mss.shape[0], M.shape[0]
        A = sp.bmat([[Mss, None, K], [None, beta * M, -Msc.T], [K, -Msc, None]]).toarray()
        rhs = np.concatenate([Mss @ toy_level.yd_vec, M @ (sigma * z - lam),
                              Msc @ toy_level.yr_vec])
        sol = np.linalg.solve(A, rhs)
        res = solve_u_subproblem(toy_level, z, lam, sigma, tol_xi=1e-12)
        np.testing.assert_allclose(res.u, sol[ns:ns + nc], atol=1e-10)
        np.testing.assert_allclose(res.y, sol[:ns], atol=1e-10)

    def test_boundary_controls_explicit(self, toy_level, rng):
        z, lam = self.data(toy_level, rng)
        sigma = 0.3
        _, _, u_b = u_subproblem_system(toy_level, z, lam, sigma)
        bd = toy_level.dofs.boundary_dofs
        np.testing.assert_allclose(u_b, (sigma * z[bd] - lam[bd]) / (toy_level.alpha + sigma))
        A = block_matrix(toy_level, toy_level.alpha + sigma)
        assert A.shape == (2 * toy_level.dofs.num_state,) * 2

    @pytest.mark.parametrize("xi", [1e-4, 1e-7, 1e-10])
    def test_certificate_is_honest(self, disk_level, rng, xi):
        z, lam = self.data(disk_level, rng)
        sigma = 0.01
        res = solve_u_subproblem(disk_level, z, lam, sigma, tol_xi=xi)
        delta, _, _ = error_vector(disk_level, res.u, z, lam, sigma, tol=1e-14)
        assert res.delta_norm <= xi
        assert np.linalg.norm(delta) <= xi * 1.01
        assert res.history[-1]["delta_norm"] == res.delta_norm

    def test_stationarity_identity(self, toy_level, rng):
        z, lam = self.data(toy_level, rng)
        sigma = 0.02
        res = solve_u_subproblem(toy_level, z, lam, sigma, tol_xi=1e-6)
        grad = gradient(toy_level, res.u, 1e-13)
        delta = grad + toy_level.M_cc @ lam + sigma * toy_level.M_cc @ (res.u - z)
        assert abs(np.linalg.norm(delta) - res.delta_norm) <= 1e-9

    def test_penalty_limit(self, toy_level, rng):
        z, lam = self.data(toy_level, rng)
        gaps = []
        for sigma in (1e2, 1e4, 1e6):
            res = solve_u_subproblem(toy_level, z, lam, sigma, tol_xi=1e-10)
            gaps.append(m_norm(toy_level, res.u - z))
        ratios = np.array(gaps[:-1]) / gaps[1:]
        np.testing.assert_allclose(ratios, 100.0, rtol=0.05)

    def test_warm_start_accepted(self, toy_level, rng):
        z, lam = self.data(toy_level, rng)
        first = solve_u_subproblem(toy_level, z, lam, 0.01, tol_xi=1e-9)
        again = solve_u_subproblem(toy_level, z, lam, 0.01, tol_xi=1e-9, u0=first.u, y0=first.y)
        assert again.report.iterations <= first.report.iterations
        np.testing.assert_allclose(again.u, first.u, atol=1e-8)

    def test_failure_reported(self, toy_level, rng):
        z, lam = self.data(toy_level, rng)
        with pytest.raises(SubproblemFailure) as info:
            solve_u_subproblem(toy_level, z, lam, 0.01, tol_xi=1e-30, max_tightenings=1,
                               direct_cap=0)
        assert info.value.diagnostics["history"]

    def test_direct_fallback(self, toy_level, rng):
        z, lam = self.data(toy_level, rng)
        # GMRES stalls near 1e-16 on this tiny mesh; the LU solve goes below
        res = solve_u_subproblem(toy_level, z, lam, 0.01, tol_xi=1e-16, max_tightenings=0)
        assert res.report.method == "direct"
        assert res.delta_norm <= 1e-16
        assert [h["method"] for h in res.history] == ["gmres(60)", "direct"]

    def test_rejects_nonpositive_sigma(self, toy_level):
        n = toy_level.dofs.num_control
        with pytest.raises(ValueError):
            solve_u_subproblem(toy_level, np.zeros(n), np.zeros(n), 0.0, 1e-6)
