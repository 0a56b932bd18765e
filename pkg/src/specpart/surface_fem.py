"""P1 finite elements on triangulated surfaces.

Provides the triangle mesh container with validation, generators for the
icosahedral sphere and the parametric torus, OFF/OBJ/PLY input and output,
and assembly of the consistent mass matrix and the stiffness matrix used for
Laplace-Beltrami eigenproblems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .neighborhood import computational_neighborhood
from .partition_opt import Problem


class MeshError(ValueError):
    """Invalid or unsupported mesh data."""


@dataclass
class TriMesh:
    """Triangulated surface: vertex coordinates and triangle index triples."""

    vertices: np.ndarray  # (V, 3) float
    triangles: np.ndarray  # (T, 3) int

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be an (V, 3) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be a (T, 3) index array")
        if self.triangles.size and (self.triangles.min() < 0 or
                                    self.triangles.max() >= len(self.vertices)):
            raise MeshError("triangle index out of range")
        bbox2 = max(np.ptp(self.vertices, axis=0).max() ** 2, 1e-300)
        if (self.triangle_areas() <= 1e-14 * bbox2).any():
            raise MeshError("degenerate triangle (area below tolerance)")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def triangle_areas(self):
        v = self.vertices[self.triangles]
        cross = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def area(self):
        return float(self.triangle_areas().sum())

    def edges(self):
        """Unique undirected edges as a sorted (E, 2) array."""
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def edge_triangle_counts(self):
        """How many triangles share each undirected edge."""
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_closed(self):
        return bool((self.edge_triangle_counts() == 2).all())

    def euler_characteristic(self):
        return self.n_vertices - len(self.edges()) + self.n_triangles

    def vertex_adjacency(self):
        """Boolean CSR matrix: vertices sharing an edge."""
        e = self.edges()
        n = self.n_vertices
        data = np.ones(2 * len(e), dtype=bool)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def enclosed_volume(self):
        """Signed volume via the divergence theorem (x . n / 3 integral)."""
        v = self.vertices[self.triangles]
        return float(np.einsum("ij,ij->", v[:, 0],
                               np.cross(v[:, 1], v[:, 2])) / 6.0)


@dataclass(frozen=True)
class FemPair:
    """Consistent P1 mass matrix M and stiffness matrix K of a mesh."""

    M: sp.csr_matrix
    K: sp.csr_matrix


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def generate_sphere(subdivisions):
    """Icosahedral unit sphere: 10 * 4^s + 2 vertices after s subdivisions."""
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    tris = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    for _ in range(subdivisions):
        edge_mid = {}
        new_verts = list(verts)

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in edge_mid:
                m = verts[a] + verts[b]
                m /= np.linalg.norm(m)
                edge_mid[key] = len(new_verts)
                new_verts.append(m)
            return edge_mid[key]

        new_tris = []
        for a, b, c in tris:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_tris += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.asarray(new_verts)
        tris = np.asarray(new_tris, dtype=np.int64)
    return TriMesh(vertices=verts, triangles=tris)


def generate_torus(R, r, nu=64, nv=32):
    """Structured triangulation of the torus with major/minor radii R > r."""
    if not R > r > 0:
        raise MeshError("torus radii must satisfy R > r > 0")
    u = 2 * np.pi * np.arange(nu) / nu
    v = 2 * np.pi * np.arange(nv) / nv
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = (R + r * np.cos(vv)) * np.cos(uu)
    y = (R + r * np.cos(vv)) * np.sin(uu)
    z = r * np.sin(vv)
    verts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])

    def vid(i, j):
        return (i % nu) * nv + (j % nv)

    tris = []
    for i in range(nu):
        for j in range(nv):
            tris.append([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)])
            tris.append([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)])
    return TriMesh(vertices=verts, triangles=np.asarray(tris, dtype=np.int64))


def generate_box(a, b, c, n=8):
    """Closed triangulated surface of an axis-aligned box of sides a, b, c.

    Used by the classification tests as a source of synthetic closed shapes.
    """
    sides = np.array([a, b, c], dtype=float)
    grids = [np.linspace(0.0, s, n + 1) for s in sides]
    verts = []
    tris = []
    index = {}

    def vertex(p):
        key = tuple(np.round(p, 12))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    for axis in range(3):
        u_axis, v_axis = [(1, 2), (0, 2), (0, 1)][axis]
        # u x v points along +axis for axes 0 and 2 but along -axis for 1
        for fixed, flip in ((0.0, axis != 1), (sides[axis], axis == 1)):
            for i in range(n):
                for j in range(n):
                    corners = []
                    for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = np.zeros(3)
                        p[axis] = fixed
                        p[u_axis] = grids[u_axis][i + du]
                        p[v_axis] = grids[v_axis][j + dv]
                        corners.append(vertex(p))
                    q = corners if not flip else corners[::-1]
                    tris.append([q[0], q[1], q[2]])
                    tris.append([q[0], q[2], q[3]])
    return TriMesh(vertices=np.asarray(verts),
                   triangles=np.asarray(tris, dtype=np.int64))


# ---------------------------------------------------------------------------
# Mesh I/O
# ---------------------------------------------------------------------------


def load_mesh(path):
    """Load a triangle mesh from an OFF or OBJ file."""
    path = str(path)
    if path.lower().endswith(".off"):
        return _load_off(path)
    if path.lower().endswith(".obj"):
        return _load_obj(path)
    raise MeshError(f"unsupported mesh format: {path}")


def _load_off(path):
    with open(path) as f:
        tokens = []
        for line in f:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise MeshError("not an OFF file")
    nv, nt = int(tokens[1]), int(tokens[2])
    pos = 4
    verts = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
    pos += 3 * nv
    tris = []
    for _ in range(nt):
        k = int(tokens[pos])
        if k != 3:
            raise MeshError("triangles only")
        tris.append([int(t) for t in tokens[pos + 1:pos + 4]])
        pos += k + 1
    return TriMesh(vertices=verts, triangles=np.asarray(tris, dtype=np.int64))


def _load_obj(path):
    verts, tris = [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                if len(idx) != 3:
                    raise MeshError("triangles only")
                tris.append(idx)
    if not verts:
        raise MeshError("no vertices found")
    return TriMesh(vertices=np.asarray(verts, dtype=float),
                   triangles=np.asarray(tris, dtype=np.int64))


def save_obj(mesh, path):
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def save_ply(mesh, path, vertex_labels=None):
    """ASCII PLY export, optionally with a per-vertex integer label."""
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {mesh.n_vertices}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        if vertex_labels is not None:
            f.write("property int label\n")
        f.write(f"element face {mesh.n_triangles}\n")
        f.write("property list uchar int vertex_indices\nend_header\n")
        for i, v in enumerate(mesh.vertices):
            line = f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}"
            if vertex_labels is not None:
                line += f" {int(vertex_labels[i])}"
            f.write(line + "\n")
        for t in mesh.triangles:
            f.write(f"3 {t[0]} {t[1]} {t[2]}\n")


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def assemble_mass_stiffness(mesh):
    """Consistent P1 mass matrix and stiffness matrix of a triangle mesh.

    Per triangle the stiffness entries are grad(phi_i) . grad(phi_j) * area
    with the P1 gradients computed from the edge vectors; the consistent mass
    contribution is area / 12 * (1 + delta_ij).
    """
    tris = mesh.triangles
    v = mesh.vertices[tris]  # (T, 3, 3)
    e0 = v[:, 2] - v[:, 1]
    e1 = v[:, 0] - v[:, 2]
    e2 = v[:, 1] - v[:, 0]
    normal = np.cross(e2, -e1)
    double_area = np.linalg.norm(normal, axis=1)
    area = 0.5 * double_area
    # P1 basis gradients: grad phi_k = (n x e_k) / (2 area), with e_k the
    # edge opposite vertex k
    nhat = normal / double_area[:, None]
    grads = np.stack([np.cross(nhat, e0), np.cross(nhat, e1),
                      np.cross(nhat, e2)], axis=1) / double_area[:, None, None]

    rows, cols, k_data, m_data = [], [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(tris[:, i])
            cols.append(tris[:, j])
            k_data.append(np.einsum("td,td->t", grads[:, i], grads[:, j])
                          * area)
            m_data.append(area / 12.0 * (2.0 if i == j else 1.0)
                          * np.ones_like(area))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    n = mesh.n_vertices
    K = sp.csr_matrix((np.concatenate(k_data), (rows, cols)), shape=(n, n))
    M = sp.csr_matrix((np.concatenate(m_data), (rows, cols)), shape=(n, n))
    return FemPair(M=M, K=K)


def surface_neighborhood(density, adjacency, hops=5, threshold=0.01,
                         cell=None):
    """Computational neighborhood by edge-hop distance on the triangulation."""
    return computational_neighborhood(density, adjacency, p=hops,
                                      threshold=threshold, cell=cell)


def surface_problem(mesh, fem=None):
    """Wrap a closed surface mesh as an optimization problem.

    Node weights are the lumped mass (row sums of M), so cell areas and the
    multiphase area term integrate densities over the surface.
    """
    if fem is None:
        fem = assemble_mass_stiffness(mesh)
    lumped = np.asarray(fem.M.sum(axis=1)).ravel()
    return Problem(operator=fem.K, adjacency=mesh.vertex_adjacency(),
                   node_weight=lumped,
                   in_domain=np.ones(mesh.n_vertices, dtype=bool),
                   mass=fem.M, kind="surface", geometry=mesh)
