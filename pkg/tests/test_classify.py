import numpy as np
import pytest

from specpart.classify import (ClassificationError, classify_cells,
                               count_cell_neighbors, extract_isosurface,
                               scale_invariant_eigenvalue, spectral_signature)
from specpart.grid import adjacency, build_grid, unit_box
from specpart.partition_opt import grid_problem
from specpart.surface_fem import generate_box, generate_sphere, generate_torus


def block_partition_2d(res=30, blocks=3):
    """Synthetic exact partition of the unit square into blocks^2 tiles."""
    g = build_grid(unit_box(2), res)
    pts = g.coordinates()
    ix = np.minimum((pts[:, 0] * blocks).astype(int), blocks - 1)
    iy = np.minimum((pts[:, 1] * blocks).astype(int), blocks - 1)
    labels = ix + blocks * iy
    n = blocks * blocks
    values = np.zeros((n, g.n_nodes))
    values[labels, np.arange(g.n_nodes)] = 1.0
    return g, values


class TestNeighborCounting:
    def test_3x3_blocks(self):
        g, values = block_partition_2d()
        graph = count_cell_neighbors(values, adjacency(g))
        counts = [graph.neighbor_counts[i] for i in range(9)]
        # corner tiles touch 2 tiles, edge tiles 3, the center 4
        assert sorted(counts) == [2, 2, 2, 2, 3, 3, 3, 3, 4]
        assert counts[4] == 4

    def test_symmetry(self):
        g, values = block_partition_2d()
        graph = count_cell_neighbors(values, adjacency(g))
        for i, j in graph.edges:
            assert (j, i) in graph.edges or (i, j) in graph.edges
            assert i != j

    def test_two_halves(self):
        g = build_grid(unit_box(2), 16)
        pts = g.coordinates()
        phi = (pts[:, 0] <= 0.5).astype(float)
        values = np.stack([phi, 1.0 - phi])
        graph = count_cell_neighbors(values, adjacency(g))
        assert graph.neighbor_counts == {0: 1, 1: 1}

    def test_empty_cell_flagged(self):
        g = build_grid(unit_box(2), 16)
        values = np.zeros((2, g.n_nodes))
        values[0] = 1.0
        graph = count_cell_neighbors(values, adjacency(g))
        assert graph.empty_cells == [1]


class TestIsosurface:
    def ball_density(self, res=48, radius=0.3, width=0.04):
        g = build_grid(unit_box(3), res)
        pts = g.coordinates()
        d = np.linalg.norm(pts - 0.5, axis=1)
        phi = 0.5 * (1.0 - np.tanh((d - radius) / width))
        return g, phi

    def test_sphere_area(self):
        g, phi = self.ball_density()
        mesh = extract_isosurface(phi, g)
        assert mesh.area() == pytest.approx(4 * np.pi * 0.09, rel=0.03)

    def test_sphere_volume(self):
        g, phi = self.ball_density()
        mesh = extract_isosurface(phi, g)
        assert mesh.enclosed_volume() == pytest.approx(
            4 / 3 * np.pi * 0.027, rel=0.03)

    def test_euler_characteristic(self):
        g, phi = self.ball_density(res=32)
        mesh = extract_isosurface(phi, g)
        assert mesh.euler_characteristic() == 2
        assert mesh.is_closed()

    def test_empty_level_set_raises(self):
        g = build_grid(unit_box(3), 16)
        with pytest.raises(ClassificationError):
            extract_isosurface(np.zeros(g.n_nodes), g)


class TestSpectralSignature:
    def test_same_mesh_distance_zero(self):
        m = generate_sphere(3)
        s = spectral_signature(m, k=10)
        assert s.distance(s) == 0.0

    def test_scale_invariance(self):
        from specpart.surface_fem import TriMesh
        m1 = generate_sphere(3)
        m2 = TriMesh(2.0 * m1.vertices, m1.triangles)
        s1 = spectral_signature(m1, k=10)
        s2 = spectral_signature(m2, k=10)
        assert s1.distance(s2) <= 1e-3

    def test_sphere_vs_torus(self):
        s_sphere = spectral_signature(generate_sphere(3), k=10)
        s_torus = spectral_signature(generate_torus(1.0, 0.6, 48, 24), k=10)
        assert s_sphere.distance(s_torus) > 0.05

    def test_open_mesh_rejected(self):
        m = generate_sphere(1)
        open_mesh = m.__class__(m.vertices, m.triangles[:-1])
        with pytest.raises(ClassificationError):
            spectral_signature(open_mesh, k=5)


class TestClassifyCells:
    def box_set(self):
        # 6 congruent boxes of one shape plus 2 of another
        type_a = [generate_box(1.0, 1.0, 0.5, n=6) for _ in range(6)]
        type_b = [generate_box(1.0, 1.0, 1.0, n=6) for _ in range(2)]
        return [spectral_signature(m, k=10) for m in type_a + type_b]

    def test_weaire_phelan_counts(self):
        classes = classify_cells(self.box_set(), epsilon=0.01)
        assert classes.class_sizes == [6, 2]

    def test_permutation_invariance(self):
        sigs = self.box_set()
        rng = np.random.default_rng(0)
        perm = rng.permutation(len(sigs))
        classes = classify_cells([sigs[i] for i in perm], epsilon=0.01)
        assert classes.class_sizes == [6, 2]

    def test_epsilon_monotone_refinement(self):
        sigs = self.box_set()
        fine = classify_cells(sigs, epsilon=1e-6)
        coarse = classify_cells(sigs, epsilon=0.5)
        # classes under the smaller epsilon refine classes under the larger
        for cls in set(fine.labels):
            members = np.flatnonzero(fine.labels == cls)
            assert len(set(coarse.labels[members])) == 1

    def test_congruent_cells_one_class(self):
        sigs = [spectral_signature(generate_box(1, 1, 1, n=5), k=8)
                for _ in range(4)]
        classes = classify_cells(sigs, epsilon=0.01)
        assert classes.class_sizes == [4]

    def test_mismatched_k_rejected(self):
        a = spectral_signature(generate_sphere(2), k=6)
        b = spectral_signature(generate_sphere(2), k=8)
        with pytest.raises(ClassificationError):
            classify_cells([a, b])


class TestScaleInvariant:
    def test_unit_cube_value(self):
        # lambda_1 = 3 pi^2 and volume 1
        val = scale_invariant_eigenvalue(3 * np.pi ** 2, 1.0)
        assert val == pytest.approx(29.608, abs=0.01)

    def test_scaling_law(self):
        lam, vol = 3 * np.pi ** 2, 1.0
        scaled = scale_invariant_eigenvalue(lam / 4.0, vol * 8.0)
        assert scaled == pytest.approx(scale_invariant_eigenvalue(lam, vol),
                                       rel=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ClassificationError):
            scale_invariant_eigenvalue(-1.0, 1.0)
        with pytest.raises(ClassificationError):
            scale_invariant_eigenvalue(1.0, 0.0)
