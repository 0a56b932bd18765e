import numpy as np
import pytest

from specpart.grid import build_grid, unit_box
from specpart.neighborhood import CellVanishedError
from specpart.partition_opt import (DensitySet, cell_areas,
                                    circle_packing_mode, descent_step,
                                    energy_and_gradients, equivalent_radii,
                                    grid_problem, optimize,
                                    optimize_multigrid, project_to_partition,
                                    random_init, refine)

J01 = 2.4048255576957727


@pytest.fixture(scope="module")
def square16():
    g = build_grid(unit_box(2), 16)
    return g, grid_problem(g)


@pytest.fixture(scope="module")
def square32():
    g = build_grid(unit_box(2), 32)
    return g, grid_problem(g)


class TestProjection:
    def test_partition_constraint(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(size=(3, 50))
        in_domain = np.ones(50, dtype=bool)
        proj, ndeg = project_to_partition(values, in_domain)
        assert np.abs(proj.sum(axis=0) - 1.0).max() <= 1e-12
        assert ndeg == 0

    def test_fixed_point(self):
        values = np.array([[0.25, 0.5], [0.75, 0.5]])
        in_domain = np.ones(2, dtype=bool)
        proj, _ = project_to_partition(values, in_domain)
        assert proj == pytest.approx(values)

    def test_degenerate_node_gets_uniform(self):
        values = np.zeros((4, 3))
        values[:, 0] = [0.1, 0.2, 0.3, 0.4]
        in_domain = np.ones(3, dtype=bool)
        proj, ndeg = project_to_partition(values, in_domain)
        assert ndeg == 2
        assert proj[:, 1] == pytest.approx(0.25)

    def test_masked_nodes_zero(self):
        rng = np.random.default_rng(1)
        values = rng.uniform(size=(2, 10))
        in_domain = np.ones(10, dtype=bool)
        in_domain[4:7] = False
        proj, _ = project_to_partition(values, in_domain)
        assert np.abs(proj[:, 4:7]).max() == 0.0

    def test_negative_values_folded(self):
        values = np.array([[-0.5, 0.2], [0.5, 0.2]])
        in_domain = np.ones(2, dtype=bool)
        proj, _ = project_to_partition(values, in_domain)
        assert proj[0, 0] == pytest.approx(0.5)
        assert (proj >= 0).all()


class TestRandomInit:
    def test_deterministic(self, square16):
        _, prob = square16
        a = random_init(prob, 3, seed=7)
        b = random_init(prob, 3, seed=7)
        assert np.array_equal(a.values, b.values)

    def test_seed_changes_values(self, square16):
        _, prob = square16
        a = random_init(prob, 3, seed=7)
        b = random_init(prob, 3, seed=8)
        assert not np.array_equal(a.values, b.values)

    def test_projected(self, square16):
        _, prob = square16
        d = random_init(prob, 4, seed=0)
        assert np.abs(d.values.sum(axis=0) - 1.0).max() <= 1e-12

    def test_multiphase_adds_void(self, square16):
        _, prob = square16
        d = random_init(prob, 2, seed=0, multiphase=True)
        assert d.values.shape[0] == 3
        assert d.n_cells == 2
        assert d.cells.shape[0] == 2


class TestEnergyAndGradients:
    def test_single_cell_full_domain(self, square32):
        g, prob = square32
        values = np.ones((1, prob.n_nodes))
        d = DensitySet(values, 1, False)
        info = energy_and_gradients(prob, d, C=1e4, p=6)
        assert info.energy == pytest.approx(2 * np.pi ** 2, rel=0.02)
        # gradient is -C u^2 scaled to unit Euclidean eigenvector norm
        assert info.gradients.max() <= 0.0
        assert info.gradients.sum() == pytest.approx(-1e4, rel=1e-8)

    def test_far_cells_gradients_disjoint(self, square32):
        g, prob = square32
        pts = g.coordinates()
        phi0 = (np.linalg.norm(pts - [0.2, 0.2], axis=1) <= 0.1).astype(float)
        phi1 = (np.linalg.norm(pts - [0.8, 0.8], axis=1) <= 0.1).astype(float)
        d = DensitySet(np.stack([phi0, phi1]), 2, False)
        info = energy_and_gradients(prob, d, C=1e4, p=3)
        support0 = info.gradients[0] != 0
        support1 = info.gradients[1] != 0
        assert not (support0 & support1).any()

    def test_vanished_cell_raises(self, square16):
        _, prob = square16
        values = np.zeros((2, prob.n_nodes))
        values[0] = 1.0
        d = DensitySet(values, 2, False)
        with pytest.raises(CellVanishedError):
            energy_and_gradients(prob, d, C=1e4, p=6)


class TestDescentStep:
    def test_zero_step_fixed_point(self, square16):
        _, prob = square16
        d = random_init(prob, 2, seed=1)
        info = energy_and_gradients(prob, d, C=1e4, p=6)
        cand = descent_step(d, info.gradients, 0.0, prob.in_domain)
        assert cand.values == pytest.approx(d.values)

    def test_candidate_satisfies_constraint(self, square16):
        _, prob = square16
        d = random_init(prob, 2, seed=1)
        info = energy_and_gradients(prob, d, C=1e4, p=6)
        for alpha in (1e-4, 1e-1, 10.0):
            cand = descent_step(d, info.gradients, alpha, prob.in_domain)
            sums = cand.values.sum(axis=0)[prob.in_domain]
            assert np.abs(sums - 1.0).max() <= 1e-12

    def test_small_step_decreases_energy(self, square16):
        _, prob = square16
        d = random_init(prob, 2, seed=2)
        info = energy_and_gradients(prob, d, C=1e4, p=6)
        cand = descent_step(d, info.gradients, 1e-3, prob.in_domain)
        cand_info = energy_and_gradients(prob, cand, C=1e4, p=6)
        assert cand_info.energy < info.energy


class TestOptimize:
    def test_single_cell_recovers_square(self, square32):
        _, prob = square32
        r = optimize(prob, n=1, seed=0, C=1e4, p=6, alpha0=1.0, max_iter=30)
        assert r.energy == pytest.approx(2 * np.pi ** 2, rel=0.02)

    def test_trace_non_increasing_on_accepts(self, square16):
        _, prob = square16
        r = optimize(prob, n=2, seed=0, C=1e4, p=6, alpha0=1.0, max_iter=60)
        energies = [h["energy"] for h in r.history if h["accepted"]]
        assert all(a >= b for a, b in zip(energies, energies[1:]))

    def test_deterministic(self, square16):
        _, prob = square16
        a = optimize(prob, n=2, seed=5, C=1e4, p=6, alpha0=1.0, max_iter=40)
        b = optimize(prob, n=2, seed=5, C=1e4, p=6, alpha0=1.0, max_iter=40)
        assert a.energy == b.energy
        assert np.array_equal(a.densities.values, b.densities.values)
        assert [h["energy"] for h in a.history] == \
            [h["energy"] for h in b.history]

    def test_rejected_steps_halve_alpha(self, square16):
        _, prob = square16
        r = optimize(prob, n=2, seed=0, C=1e4, p=6, alpha0=1e6, max_iter=25)
        alphas = [h["alpha"] for h in r.history]
        rejected = [h for h in r.history[1:] if not h["accepted"]]
        assert rejected  # a huge step must get rejected
        assert alphas[-1] < 1e6

    def test_two_cell_square_energy_bound(self):
        g = build_grid(unit_box(2), 64)
        prob = grid_problem(g)
        r = optimize(prob, n=2, seed=3, C=1e4, p=6, alpha0=4.0, max_iter=250)
        assert r.energy <= 1.05 * 2 * 5 * np.pi ** 2


class TestRefine:
    def test_shape_and_constraint(self):
        dom = unit_box(2)
        g32 = build_grid(dom, 32)
        g64 = build_grid(dom, 64)
        prob = grid_problem(g32)
        d = random_init(prob, 2, seed=0)
        fine = refine(d, g32, g64)
        assert fine.values.shape[1] == g64.n_nodes
        assert np.abs(fine.values.sum(axis=0) - 1.0).max() <= 1e-12

    def test_locality(self):
        # an indicator of the left half stays (approximately) the left half
        dom = unit_box(2)
        g32 = build_grid(dom, 32)
        g64 = build_grid(dom, 64)
        pts32 = g32.coordinates()
        phi = (pts32[:, 0] <= 0.5).astype(float)
        d = DensitySet(np.stack([phi, 1.0 - phi]), 2, False)
        fine = refine(d, g32, g64)
        pts64 = g64.coordinates()
        left = pts64[:, 0] <= 0.45
        right = pts64[:, 0] >= 0.55
        assert fine.values[0][left].min() > 0.9
        assert fine.values[0][right].max() < 0.1


class TestMultigrid:
    def test_rejects_non_doubling(self):
        with pytest.raises(ValueError):
            optimize_multigrid(unit_box(2), (16, 48), n=2)

    def test_energy_continuation(self):
        g, prob, results = optimize_multigrid(
            unit_box(2), (16, 32), n=2, seed=3, alpha0=1.0,
            max_iter=[120, 60], C=1e4, p=6)
        assert len(results) == 2
        assert g.shape == (32, 32)
        # refined level keeps a two-cell partition with finite energy
        assert results[-1].energy < results[0].energy * 1.5


class TestCirclePacking:
    def test_radius_law(self):
        # alpha_area = 1e4: optimal disk radius (j01^2 / (alpha pi))^(1/4)
        g = build_grid(unit_box(2), 96)
        prob = grid_problem(g)
        alpha_area = 1e4
        r = circle_packing_mode(prob, 1, alpha_area, C=1e4, p=6, alpha0=0.3,
                                max_iter=150, seed=0)
        for _ in range(6):
            r = optimize(prob, densities=r.densities, C=1e4, p=6, alpha0=0.3,
                         max_iter=150, alpha_area=alpha_area, multiphase=True)
        expected = (J01 ** 2 / (alpha_area * np.pi)) ** 0.25
        radius = equivalent_radii(prob, r.densities)[0]
        assert radius == pytest.approx(expected, rel=0.05)

    def test_area_decreases_with_alpha_area(self):
        g = build_grid(unit_box(2), 48)
        prob = grid_problem(g)
        areas = []
        for alpha_area in (2e3, 1e4, 5e4):
            r = circle_packing_mode(prob, 1, alpha_area, C=1e4, p=6,
                                    alpha0=0.3, max_iter=150, seed=0)
            for _ in range(3):
                r = optimize(prob, densities=r.densities, C=1e4, p=6,
                             alpha0=0.3, max_iter=150,
                             alpha_area=alpha_area, multiphase=True)
            areas.append(cell_areas(prob, r.densities)[0])
        assert areas[0] > areas[1] > areas[2]

    def test_requires_positive_alpha_area(self, square16):
        _, prob = square16
        with pytest.raises(ValueError):
            circle_packing_mode(prob, 1, 0.0)


class TestVanishPolicy:
    def test_reinit_recovers(self, square16):
        # start with one cell nearly vanished; reinit policy must survive
        _, prob = square16
        values = np.ones((2, prob.n_nodes))
        values[1] = 0.0
        values, _ = project_to_partition(values, prob.in_domain)
        d = DensitySet(values, 2, False)
        r = optimize(prob, densities=d, C=1e4, p=6, alpha0=1.0, max_iter=10,
                     vanish_policy="reinit")
        assert r.energy > 0

    def test_abort_raises(self, square16):
        _, prob = square16
        values = np.ones((2, prob.n_nodes))
        values[1] = 0.0
        values, _ = project_to_partition(values, prob.in_domain)
        d = DensitySet(values, 2, False)
        with pytest.raises(CellVanishedError):
            optimize(prob, densities=d, C=1e4, p=6, alpha0=1.0, max_iter=10)
