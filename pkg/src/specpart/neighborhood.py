"""Computational neighborhoods: order-p grid reachability and restriction.

A cell's eigenproblem only needs the nodes within p adjacency hops of its
support {phi > threshold}. This module computes that node set and extracts
the principal submatrix of an operator on it. The production path expands
the support by breadth-first search, which is equivalent to the order-p
reachability matrix but never materializes it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class CellVanishedError(RuntimeError):
    """Raised when a density has no support above the threshold."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


def neighbors_up_to_order(adj, p):
    """Reachability matrix: (i, j) nonzero iff 1 <= hop distance <= p.

    Implemented as p rounds of boolean frontier expansion of the order-1
    adjacency (sparse product semantics). Self-pairs are excluded so that
    p=1 reproduces the adjacency exactly.
    """
    if p < 1:
        raise ValueError("order p must be >= 1")
    A = sp.csr_matrix(adj, dtype=bool)
    reach = A.copy()
    for _ in range(p - 1):
        reach = ((reach + A @ reach) > 0).tocsr()
    reach = sp.lil_matrix(reach)
    reach.setdiag(False)
    reach = sp.csr_matrix(reach, dtype=bool)
    reach.eliminate_zeros()
    return reach


def hop_ball(adj, seeds, p):
    """Nodes within p hops of any seed node (seeds included), sorted.

    Breadth-first search using the CSR structure of the adjacency directly.
    """
    A = sp.csr_matrix(adj)
    n = A.shape[0]
    seeds = np.asarray(seeds)
    if seeds.dtype == bool:
        visited = seeds.copy()
    else:
        visited = np.zeros(n, dtype=bool)
        visited[seeds] = True
    frontier = visited.copy()
    for _ in range(p):
        reached = A.dot(frontier.astype(np.int32)) > 0
        new = reached & ~visited
        if not new.any():
            break
        visited |= new
        frontier = new
    return np.flatnonzero(visited)


@dataclass(frozen=True)
class Neighborhood:
    """Sorted global node indices R with the local<->global index maps."""

    indices: np.ndarray          # sorted global indices, local i -> global
    global_to_local: np.ndarray  # dense map, -1 outside R

    @property
    def size(self):
        return len(self.indices)

    @classmethod
    def from_indices(cls, indices, n_nodes):
        idx = np.asarray(np.sort(indices), dtype=np.int64)
        g2l = np.full(n_nodes, -1, dtype=np.int64)
        g2l[idx] = np.arange(len(idx))
        return cls(indices=idx, global_to_local=g2l)


def computational_neighborhood(density, adj, p=6, threshold=0.01, cell=None):
    """Union of order-<=p neighborhoods of the support {density > threshold}."""
    density = np.asarray(density)
    support = np.flatnonzero(density > threshold)
    if support.size == 0:
        raise CellVanishedError(
            f"cell vanished: no node with density > {threshold}", cell=cell)
    indices = hop_ball(adj, support, p)
    return Neighborhood.from_indices(indices, adj.shape[0])


def restrict_operator(op, nb):
    """Principal submatrix of `op` on the neighborhood, local indexing."""
    if nb.indices.size and nb.indices[-1] >= op.shape[0]:
        raise IndexError("neighborhood index out of operator range")
    sub = op.tocsr()[nb.indices][:, nb.indices]
    return sp.csr_matrix(sub)
