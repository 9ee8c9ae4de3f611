import numpy as np
import pytest

from madmm.errors import HierarchyMismatchError, InvalidMeshError
from madmm.fem import l2_error
from madmm.mesh import (DISK_SEED_NODES, MeshHierarchy, TriangleMesh,
                        project_to_circle, prolongation, read_mesh, refine_uniform,
                        unit_disk_mesh, unit_square_mesh, write_mesh)


def sorted_coords(mesh):
    x = np.round(mesh.nodes, 12)
    return x[np.lexsort(x.T[::-1])]


class TestUnitSquare:
    def test_smallest(self):
        m = unit_square_mesh(1)
        assert m.num_nodes == 4
        assert m.num_triangles == 2
        assert m.h == pytest.approx(np.sqrt(2.0))

    def test_n32_matches_dof_count(self):
        m = unit_square_mesh(32)
        assert m.num_nodes == 1089
        assert m.num_interior == 961
        assert m.h == pytest.approx(np.sqrt(2.0) / 2**5, rel=1e-14)
        assert m.level == 5

    @pytest.mark.parametrize("n", [1, 2, 4, 7, 16])
    def test_area_and_orientation(self, n):
        m = unit_square_mesh(n)
        assert np.all(m.signed_areas() > 0)
        assert abs(m.area() - 1.0) <= 1e-14
        assert m.num_interior == (n - 1) ** 2
        m.check()

    @pytest.mark.parametrize("bad", [0, -2, 1.5])
    def test_rejects_bad_subdivision(self, bad):
        with pytest.raises(ValueError):
            unit_square_mesh(bad)

    def test_boundary_flags(self):
        m = unit_square_mesh(4)
        x = m.nodes
        on = (np.isclose(x, 0) | np.isclose(x, 1)).any(axis=1)
        np.testing.assert_array_equal(m.boundary_mask, on)

    def test_immutable(self):
        m = unit_square_mesh(2)
        with pytest.raises(ValueError):
            m.nodes[0, 0] = 3.0


class TestUnitDisk:
    def test_seed(self):
        m = unit_disk_mesh(0)
        np.testing.assert_array_equal(m.nodes, DISK_SEED_NODES)
        assert m.num_triangles == 6
        assert np.all(m.signed_areas() > 0)
        m.check()

    def test_boundary_on_circle(self):
        m = unit_disk_mesh(3)
        r = np.linalg.norm(m.nodes[m.boundary_mask], axis=1)
        np.testing.assert_allclose(r, 1.0, atol=1e-15)
        assert np.all(np.linalg.norm(m.nodes[~m.boundary_mask], axis=1) < 1.0)

    def test_projection_idempotent(self):
        m = unit_disk_mesh(2)
        b = m.nodes[m.boundary_mask]
        np.testing.assert_array_equal(project_to_circle(b), project_to_circle(project_to_circle(b)))

    def test_area_defect_quadratic(self):
        # |Omega \ Omega_h| <= c h^2 with a stable constant
        levels = range(1, 6)
        meshes = [unit_disk_mesh(k) for k in levels]
        defect = np.array([np.pi - m.area() for m in meshes])
        h = np.array([m.h for m in meshes])
        assert np.all(defect > 0)
        assert np.all(np.diff(defect) < 0)
        c = defect / h**2
        assert c.max() / c.min() < 1.5
        rates = np.log(defect[:-1] / defect[1:]) / np.log(h[:-1] / h[1:])
        assert rates[-1] == pytest.approx(2.0, abs=0.1)

    def test_h_halves(self):
        h = [unit_disk_mesh(k).h for k in range(2, 6)]
        ratios = np.array(h[:-1]) / np.array(h[1:])
        np.testing.assert_allclose(ratios, 2.0, rtol=0.05)

    def test_quality_bounded(self):
        q = [unit_disk_mesh(k).quality().max() for k in range(1, 6)]
        assert max(q) < 1.5 * q[0]

    def test_rejects_negative_level(self):
        with pytest.raises(ValueError):
            unit_disk_mesh(-1)


class TestRefinement:
    def test_one_square(self):
        m = refine_uniform(unit_square_mesh(1))
        assert m.num_nodes == 9
        assert m.num_triangles == 8
        m.check()

    @pytest.mark.parametrize("n", [1, 2, 4])
    def test_same_nodes_as_finer_grid(self, n):
        fine = refine_uniform(unit_square_mesh(n))
        np.testing.assert_allclose(sorted_coords(fine), sorted_coords(unit_square_mesh(2 * n)),
                                   atol=1e-15)
        assert abs(fine.area() - 1.0) <= 1e-14

    def test_parent_and_level(self):
        c = unit_square_mesh(2)
        f = refine_uniform(c)
        assert f.parent is c
        assert f.level == c.level + 1
        assert f.provenance.shape == (f.num_nodes, 2)

    def test_rejects_invalid(self):
        nodes = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
        bad = TriangleMesh(nodes, np.array([[0, 2, 1]]), np.ones(3, bool))
        with pytest.raises(InvalidMeshError):
            refine_uniform(bad)

    def test_hanging_node_detected(self):
        nodes = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0]], dtype=float)
        tris = np.array([[0, 4, 3], [4, 1, 2], [0, 2, 3], [4, 2, 3]])
        m = TriangleMesh(nodes, tris, np.ones(5, bool))
        with pytest.raises(InvalidMeshError):
            m.check()


class TestProlongation:
    @pytest.mark.parametrize("make", [lambda: unit_square_mesh(4), lambda: unit_disk_mesh(2)])
    def test_partition_of_unity(self, make):
        c = make()
        f = refine_uniform(c)
        P = prolongation(c, f)
        np.testing.assert_array_equal(P @ np.ones(c.num_nodes), np.ones(f.num_nodes))

    def test_exact_on_linears(self):
        c = unit_square_mesh(4)
        f = refine_uniform(c)
        P = prolongation(c, f)
        for w in (lambda x: x[:, 0], lambda x: 2 * x[:, 0] - 3 * x[:, 1] + 0.25):
            assert np.max(np.abs(P @ w(c.nodes) - w(f.nodes))) <= 1e-14

    def test_interpolation_eoc(self):
        # ||w - I_h w|| for w = x1 x2 decays like h^2
        w = lambda x1, x2: x1 * x2  # noqa: E731
        hs, errs = [], []
        for k in range(2, 6):
            m = unit_square_mesh(2**k)
            errs.append(l2_error(w(m.nodes[:, 0], m.nodes[:, 1]), w, m))
            hs.append(m.h)
        eoc = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(np.array(hs[:-1]) / hs[1:])
        assert np.all(eoc >= 1.8)

    def test_mismatch(self):
        with pytest.raises(HierarchyMismatchError):
            prolongation(unit_square_mesh(2), unit_square_mesh(4))


class TestHierarchy:
    def test_build_and_prolong(self):
        H = MeshHierarchy.build(unit_square_mesh(2), 3)
        assert len(H) == 4
        assert H.coarsest.level == 1 and H.finest.level == 4
        x = H.coarsest.nodes[:, 0]
        np.testing.assert_allclose(H.prolong(x, 1, 4), H.finest.nodes[:, 0], atol=1e-15)

    def test_box_feasible_after_prolong(self, rng):
        H = MeshHierarchy.build(unit_disk_mesh(1), 2)
        z = rng.uniform(-0.2, 0.2, H.coarsest.num_nodes)
        zf = H.prolong(z, 1, 3)
        assert zf.min() >= -0.2 and zf.max() <= 0.2

    def test_bad_levels(self):
        H = MeshHierarchy.build(unit_square_mesh(2), 1)
        with pytest.raises(HierarchyMismatchError):
            H.mesh(5)
        with pytest.raises(HierarchyMismatchError):
            H.prolong(np.zeros(H.finest.num_nodes), 2, 1)


def test_mesh_dump_round_trip(tmp_path):
    m = unit_disk_mesh(2)
    write_mesh(m, tmp_path / "disk.txt")
    back = read_mesh(tmp_path / "disk.txt", domain=m.domain)
    np.testing.assert_array_equal(back.nodes, m.nodes)
    np.testing.assert_array_equal(back.triangles, m.triangles)
    np.testing.assert_array_equal(back.boundary_mask, m.boundary_mask)
