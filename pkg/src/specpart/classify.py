"""Automatic classification of partition cells.

In 2D and on surfaces, cells are characterized by how many neighbors they
have in the partition. In 3D the half-level set of each density is extracted
as a closed triangle mesh and fingerprinted by its normalized vector of
smallest Laplace-Beltrami eigenvalues; cells whose fingerprints are closer
than a threshold fall into the same similarity class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from skimage.measure import marching_cubes

from .eigensolve import smallest_eigvals_generalized
from .surface_fem import TriMesh, assemble_mass_stiffness


class ClassificationError(RuntimeError):
    pass


@dataclass
class CellAdjacencyGraph:
    """Which cells touch which in the converged partition."""

    n_cells: int
    edges: list            # sorted (i, j) pairs, i < j
    neighbor_counts: dict  # cell -> count, only for non-empty cells
    empty_cells: list      # cells with no node above the level


def count_cell_neighbors(cell_values, adjacency, level=0.5):
    """Cells i, j are adjacent iff some node of {phi_i > level} is an order-1
    neighbor of some node of {phi_j > level}."""
    cell_values = np.asarray(cell_values)
    n = len(cell_values)
    adjacency = sp.csr_matrix(adjacency)
    supports = [np.flatnonzero(phi > level) for phi in cell_values]
    empty = [i for i, s in enumerate(supports) if s.size == 0]
    live = [i for i in range(n) if supports[i].size]
    reach = {}
    for i in live:
        ind = np.zeros(adjacency.shape[0], dtype=np.int32)
        ind[supports[i]] = 1
        reach[i] = adjacency.dot(ind) > 0
    edges = []
    for a, i in enumerate(live):
        for j in live[a + 1:]:
            if reach[i][supports[j]].any():
                edges.append((i, j))
    counts = {i: 0 for i in live}
    for i, j in edges:
        counts[i] += 1
        counts[j] += 1
    return CellAdjacencyGraph(n_cells=n, edges=edges, neighbor_counts=counts,
                              empty_cells=empty)


def extract_isosurface(density, grid, level=0.5):
    """Triangulate the level set {density = level} on a structured 3D grid.

    Marching cubes with linear interpolation of edge crossings. The nodal
    field is padded with one layer of zeros (the implicit Dirichlet boundary
    values) so level sets that reach the box close along its faces.
    """
    if grid.dim != 3:
        raise ClassificationError("isosurface extraction needs a 3D grid")
    if not 0.0 < level < 1.0:
        raise ClassificationError("level must be strictly between 0 and 1")
    vol = grid.reshape_field(density)
    if vol.max() <= level:
        raise ClassificationError("level set is empty")
    vol = np.pad(vol, 1)
    verts, faces, _, _ = marching_cubes(vol, level=level,
                                        spacing=(grid.h,) * 3)
    verts = verts + np.asarray(grid.origin) - grid.h
    mesh = TriMesh(vertices=verts, triangles=faces.astype(np.int64))
    if not mesh.is_closed():
        raise ClassificationError("extracted surface is not watertight")
    if mesh.enclosed_volume() < 0:
        # orient outward so divergence-theorem volumes come out positive
        mesh = TriMesh(vertices=verts,
                       triangles=faces[:, ::-1].astype(np.int64))
    return mesh


@dataclass
class SpectralSignature:
    """Unit-norm vector of the k smallest Laplace-Beltrami eigenvalues."""

    values: np.ndarray

    @property
    def k(self):
        return len(self.values)

    def distance(self, other):
        return float(np.linalg.norm(self.values - other.values))


def spectral_signature(mesh, k=10):
    """Shape fingerprint: normalized k smallest eigenvalues of (K, M).

    Normalization cancels dilations, since the eigenvalues of a scaled
    surface all change by the same factor.
    """
    if k < 2:
        raise ClassificationError("need k >= 2 eigenvalues")
    if not mesh.is_closed():
        raise ClassificationError("spectral signature needs a closed surface")
    fem = assemble_mass_stiffness(mesh)
    vals = smallest_eigvals_generalized(fem.K, fem.M, k)
    norm = np.linalg.norm(vals)
    if norm == 0:
        raise ClassificationError("degenerate (all-zero) spectrum")
    return SpectralSignature(values=vals / norm)


@dataclass
class ClassPartition:
    """Similarity classes and the pairwise signature distance matrix."""

    labels: np.ndarray        # class index per cell
    distance_matrix: np.ndarray
    epsilon: float

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    @property
    def class_sizes(self):
        return sorted(np.bincount(self.labels).tolist(), reverse=True)


def classify_cells(signatures, epsilon=0.01):
    """Similarity classes: connected components of the graph {dist < eps}."""
    n = len(signatures)
    if n == 0:
        return ClassPartition(labels=np.empty(0, dtype=int),
                              distance_matrix=np.empty((0, 0)),
                              epsilon=epsilon)
    ks = {s.k for s in signatures}
    if len(ks) != 1:
        raise ClassificationError("signatures must share the same k")
    vecs = np.array([s.values for s in signatures])
    dist = np.linalg.norm(vecs[:, None, :] - vecs[None, :, :], axis=2)
    graph = sp.csr_matrix((dist < epsilon).astype(np.int8))
    _, labels = connected_components(graph, directed=False)
    return ClassPartition(labels=labels, distance_matrix=dist,
                          epsilon=epsilon)


def scale_invariant_eigenvalue(eigenvalue, volume):
    """lambda_1 * Vol^(2/3): dimensionless comparison of 3D cell shapes."""
    if eigenvalue <= 0 or volume <= 0:
        raise ClassificationError("eigenvalue and volume must be positive")
    return float(eigenvalue) * float(volume) ** (2.0 / 3.0)
