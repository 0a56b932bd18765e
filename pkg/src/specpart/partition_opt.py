"""Projected gradient optimization of spectral partitions.

Cells are density functions phi_i in [0, 1] on the nodes of a discretization,
constrained by sum_i phi_i = 1 pointwise (with an extra void phase when cells
are allowed to not cover the domain). The objective is the sum of penalized
first eigenvalues, optionally plus an area term. Descent uses the exact
eigenvalue gradient -C u^2 with step halving on energy increase.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import grid as grid_mod
from .eigensolve import penalized_eigenvalue
from .neighborhood import CellVanishedError, computational_neighborhood

ALPHA_MIN = 1e-6


@dataclass(frozen=True)
class Problem:
    """Discretization-independent inputs of the optimization loop.

    Grids and triangulated surfaces both reduce to: a symmetric operator
    (Laplacian or stiffness), an optional mass matrix, an order-1 node
    adjacency, a per-node quadrature weight, and an in-domain mask.
    """

    operator: object
    adjacency: object
    node_weight: np.ndarray
    in_domain: np.ndarray
    mass: object = None
    kind: str = "grid"
    geometry: object = None

    @property
    def n_nodes(self):
        return self.operator.shape[0]

    @property
    def n_inside(self):
        return int(self.in_domain.sum())


def grid_problem(grid):
    """Wrap a finite-difference grid as an optimization problem."""
    L = grid_mod.assemble_laplacian(grid)
    adj = grid_mod.adjacency(grid)
    w = np.full(grid.n_nodes, grid.h**grid.dim)
    return Problem(operator=L, adjacency=adj, node_weight=w,
                   in_domain=np.asarray(grid.mask, dtype=bool),
                   mass=None, kind="grid", geometry=grid)


@dataclass
class DensitySet:
    """n density functions plus an optional void phase (multiphase mode)."""

    values: np.ndarray  # (n_phases, n_nodes); void phase is the last row
    n_cells: int
    multiphase: bool = False

    @property
    def cells(self):
        return self.values[:self.n_cells]

    @property
    def n_phases(self):
        return self.values.shape[0]

    def copy(self):
        return DensitySet(self.values.copy(), self.n_cells, self.multiphase)


def project_to_partition(values, in_domain):
    """Project onto {phi_i >= 0, sum_i phi_i = 1} via phi -> |phi| / sum|phi|.

    Nodes where every phase is zero get the uniform value 1/n_phases;
    out-of-domain nodes are forced to zero. Returns the projected array and
    the number of degenerate (all-zero) in-domain nodes encountered.
    """
    v = np.abs(np.asarray(values, dtype=float))
    total = v.sum(axis=0)
    degenerate = in_domain & (total == 0)
    n_deg = int(degenerate.sum())
    if n_deg:
        v[:, degenerate] = 1.0 / v.shape[0]
        total = v.sum(axis=0)
    safe = np.where(total > 0, total, 1.0)
    v = v / safe
    v[:, ~in_domain] = 0.0
    return v, n_deg


def random_init(problem, n, seed=0, multiphase=False):
    """I.i.d. uniform densities, masked and projected; deterministic in seed."""
    if n < 1:
        raise ValueError("need at least one cell")
    rng = np.random.default_rng(seed)
    n_phases = n + 1 if multiphase else n
    values = rng.uniform(size=(n_phases, problem.n_nodes))
    values, _ = project_to_partition(values, problem.in_domain)
    return DensitySet(values=values, n_cells=n, multiphase=multiphase)


@dataclass
class EnergyInfo:
    """Per-state evaluation: energy, eigen data and cell gradients."""

    energy: float
    gradients: np.ndarray
    eigenvalues: list
    vectors: list
    nb_sizes: list


def energy_and_gradients(problem, densities, C=1e4, p=6, alpha_area=0.0,
                         threshold=0.01, tol=1e-8, max_iter=None):
    """Evaluate the objective and its per-cell gradient fields.

    Each cell's eigenproblem is restricted to its computational neighborhood
    and the eigenvector is zero-extended, so the gradient -C u^2 vanishes
    outside the neighborhood. In multiphase mode the area term alpha * |omega|
    adds alpha times the node weight to the gradient on in-domain nodes.
    """
    n = densities.n_cells
    gradients = np.zeros((n, problem.n_nodes))
    eigenvalues, vectors, nb_sizes = [], [], []
    energy = 0.0
    for i in range(n):
        phi = densities.values[i]
        nb = computational_neighborhood(phi, problem.adjacency, p=p,
                                        threshold=threshold, cell=i)
        res = penalized_eigenvalue(
            problem.operator, phi, C, nb, mass_op=problem.mass,
            node_weight=(None if problem.mass is not None
                         else problem.node_weight[nb.indices]),
            tol=tol, max_iter=max_iter)
        # gradient in the Euclidean inner product on the phi vector: with
        # sum(u^2) = 1 the directional derivative of lambda is exactly g . d
        # on grids; keeps the pointwise update alpha*C*u^2 bounded by alpha*C
        usq = res.vector**2
        gradients[i] = -C * usq / usq.sum()
        energy += res.value
        eigenvalues.append(res.value)
        vectors.append(res.vector)
        nb_sizes.append(nb.size)
        if alpha_area > 0:
            w = problem.node_weight
            energy += alpha_area * float(w[problem.in_domain]
                                         @ phi[problem.in_domain])
            gradients[i, problem.in_domain] += \
                alpha_area * w[problem.in_domain]
    return EnergyInfo(energy=energy, gradients=gradients,
                      eigenvalues=eigenvalues, vectors=vectors,
                      nb_sizes=nb_sizes)


def descent_step(densities, gradients, alpha, in_domain):
    """phi_i <- phi_i - alpha * g_i (i.e. + alpha C u_i^2), then project."""
    values = densities.values.copy()
    values[:densities.n_cells] -= alpha * gradients
    values, _ = project_to_partition(values, in_domain)
    return DensitySet(values=values, n_cells=densities.n_cells,
                      multiphase=densities.multiphase)


@dataclass
class OptResult:
    densities: DensitySet
    energy: float
    eigenvalues: list
    history: list = field(default_factory=list)
    iterations: int = 0
    alpha: float = 0.0
    wall_time: float = 0.0


def _reinit_cell(densities, cell, in_domain):
    values = densities.values.copy()
    values[cell] = np.where(in_domain, 1.0 / densities.n_phases, 0.0)
    values, _ = project_to_partition(values, in_domain)
    return DensitySet(values, densities.n_cells, densities.multiphase)


def optimize(problem, densities=None, n=None, seed=0, C=1e4, p=6,
             alpha0=None, alpha_min=ALPHA_MIN, max_iter=200,
             alpha_area=0.0, multiphase=False, vanish_policy="abort",
             threshold=0.01, tol=1e-8, callback=None):
    """Projected gradient descent with step halving.

    Accepted steps keep the step size; a step that does not strictly decrease
    the energy is rejected, the step is halved and the previous state is kept.
    Terminates when alpha drops below `alpha_min` or after `max_iter` trial
    iterations. The full iteration history is recorded.
    """
    t0 = time.perf_counter()
    if densities is None:
        if n is None:
            raise ValueError("either densities or n must be given")
        densities = random_init(problem, n, seed=seed, multiphase=multiphase)
    if alpha0 is None:
        alpha0 = 1.0 / C
    kwargs = dict(C=C, p=p, alpha_area=alpha_area, threshold=threshold,
                  tol=tol)

    def evaluate(state):
        while True:
            try:
                return state, energy_and_gradients(problem, state, **kwargs)
            except CellVanishedError as exc:
                if vanish_policy != "reinit":
                    raise
                state = _reinit_cell(state, exc.cell, problem.in_domain)

    densities, info = evaluate(densities)
    alpha = float(alpha0)
    history = [{"iteration": 0, "accepted": True, "alpha": alpha,
                "energy": info.energy,
                "eigenvalues": list(info.eigenvalues),
                "nb_sizes": list(info.nb_sizes)}]
    it = 0
    while it < max_iter and alpha >= alpha_min:
        it += 1
        candidate = descent_step(densities, info.gradients, alpha,
                                 problem.in_domain)
        candidate, cand_info = evaluate(candidate)
        accepted = cand_info.energy < info.energy
        if accepted:
            densities, info = candidate, cand_info
        else:
            alpha *= 0.5
        history.append({"iteration": it, "accepted": accepted,
                        "alpha": alpha, "energy": info.energy,
                        "eigenvalues": list(info.eigenvalues),
                        "nb_sizes": list(info.nb_sizes)})
        if callback is not None:
            callback(it, densities, alpha, info)
    return OptResult(densities=densities, energy=info.energy,
                     eigenvalues=list(info.eigenvalues), history=history,
                     iterations=it, alpha=alpha,
                     wall_time=time.perf_counter() - t0)


def cell_areas(problem, densities):
    """Weighted area/volume of each cell: sum_x w(x) phi_i(x)."""
    w = problem.node_weight
    return np.array([float(w @ phi) for phi in densities.cells])


def equivalent_radii(problem, densities):
    return np.sqrt(cell_areas(problem, densities) / np.pi)


def circle_packing_mode(problem, n, alpha_area, **kwargs):
    """Multiphase run minimizing sum of eigenvalues plus alpha * area.

    Adds the void phase automatically; large alpha_area shrinks cells toward
    disks of radius (lambda_1(B_1) / (alpha * pi))^(1/4).
    """
    if alpha_area <= 0:
        raise ValueError("circle packing mode needs alpha_area > 0")
    kwargs.pop("multiphase", None)
    return optimize(problem, n=n, alpha_area=alpha_area, multiphase=True,
                    **kwargs)


def refine(densities, coarse_grid, fine_grid):
    """Interpolate densities from a grid onto its doubled refinement.

    Componentwise multilinear interpolation (with linear extrapolation at the
    box boundary in Dirichlet mode, periodic padding otherwise), followed by
    the partition projection on the fine mask.
    """
    if fine_grid.dim != coarse_grid.dim:
        raise ValueError("incompatible grids: dimension mismatch")
    for a in range(coarse_grid.dim):
        if abs(fine_grid.shape[a] - 2 * coarse_grid.shape[a]) > 1:
            raise ValueError("incompatible grids: fine resolution must be "
                             "twice the coarse resolution per axis")
    periodic = coarse_grid.boundary_mode == "periodic"
    fine_pts = fine_grid.coordinates()
    fine_values = np.empty((densities.n_phases, fine_grid.n_nodes))
    for i in range(densities.n_phases):
        arr = coarse_grid.reshape_field(densities.values[i])
        coords = [coarse_grid.axis_coords(a) for a in range(coarse_grid.dim)]
        if periodic:
            arr = np.pad(arr, 1, mode="wrap")
            coords = [np.concatenate(([c[0] - coarse_grid.h], c,
                                      [c[-1] + coarse_grid.h]))
                      for c in coords]
        interp = RegularGridInterpolator(coords, arr, method="linear",
                                         bounds_error=False, fill_value=None)
        fine_values[i] = np.clip(interp(fine_pts), 0.0, 1.0)
    fine_values, _ = project_to_partition(fine_values,
                                          np.asarray(fine_grid.mask))
    return DensitySet(values=fine_values, n_cells=densities.n_cells,
                      multiphase=densities.multiphase)


def optimize_multigrid(domain, resolutions, n, boundary_mode="dirichlet",
                       seed=0, max_iter=200, alpha0=None, callback=None,
                       **kwargs):
    """Continuation over doubling resolutions: optimize, interpolate, repeat.

    `resolutions` is an increasing sequence where each entry doubles the
    previous one, e.g. (32, 64, 128). `max_iter` and `alpha0` may be
    per-level sequences; the natural step scale grows like h^-2 between
    levels, so a scalar `alpha0` is doubled twice per refinement by default.
    Returns (final grid, final problem, list of per-level OptResults).
    """
    resolutions = list(resolutions)
    for lo, hi in zip(resolutions, resolutions[1:]):
        if hi != 2 * lo:
            raise ValueError("continuation schedule must double resolutions")
    results = []
    densities = None
    prev_grid = None
    problem = None
    grid = None
    for level, res in enumerate(resolutions):
        grid = grid_mod.build_grid(domain, res, boundary_mode)
        problem = grid_problem(grid)
        if densities is not None:
            densities = refine(densities, prev_grid, grid)
        level_iters = max_iter[level] if isinstance(max_iter, (list, tuple)) \
            else max_iter
        if alpha0 is None:
            level_alpha = None
        elif isinstance(alpha0, (list, tuple)):
            level_alpha = alpha0[level]
        else:
            level_alpha = alpha0 * 4.0 ** level
        cb = (lambda it, d, a, info, _lvl=level:
              callback(_lvl, it, d, a, info)) if callback else None
        opt_kwargs = dict(kwargs)
        if level_alpha is not None:
            opt_kwargs["alpha0"] = level_alpha
        result = optimize(problem, densities=densities, n=n, seed=seed,
                          max_iter=level_iters, callback=cb, **opt_kwargs)
        densities = result.densities
        results.append(result)
        prev_grid = grid
    return grid, problem, results
