"""Structured finite-difference grids on 2D/3D boxes with optional masks.

The computational domain is always a rectangular bounding box carrying a
uniform grid. General domains are handled through a per-node mask: nodes of
the box that fall outside the actual domain are kept in all matrices and are
forced to full penalization downstream, which is equivalent to a homogeneous
Dirichlet condition there.

Node ordering is lexicographic with x fastest, so the flat index of node
(i, j, k) on a grid of shape (nx, ny, nz) is ``i + nx*(j + ny*k)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.io import mmwrite


class DomainError(ValueError):
    """Raised for domain specs that cannot produce a valid grid."""


# ---------------------------------------------------------------------------
# Domain specifications
# ---------------------------------------------------------------------------


def _as_bounds(bounds):
    b = tuple((float(lo), float(hi)) for lo, hi in bounds)
    for lo, hi in b:
        if not hi > lo:
            raise DomainError(f"empty bounding box axis: ({lo}, {hi})")
    return b


@dataclass(frozen=True)
class BoxDomain:
    """Rectangular box; the domain equals its own bounding box."""

    bounds: tuple  # ((xmin, xmax), (ymin, ymax)[, (zmin, zmax)])

    def __post_init__(self):
        object.__setattr__(self, "bounds", _as_bounds(self.bounds))

    @property
    def dim(self):
        return len(self.bounds)

    def contains(self, points):
        return np.ones(len(points), dtype=bool)


@dataclass(frozen=True)
class DiskDomain:
    """Disk (2D) or ball (3D) inside a bounding box."""

    center: tuple
    radius: float
    bounds: tuple = None

    def __post_init__(self):
        c = tuple(float(x) for x in self.center)
        object.__setattr__(self, "center", c)
        if self.bounds is None:
            b = tuple((x - self.radius, x + self.radius) for x in c)
        else:
            b = self.bounds
        object.__setattr__(self, "bounds", _as_bounds(b))

    @property
    def dim(self):
        return len(self.center)

    def contains(self, points):
        d2 = np.sum((points - np.asarray(self.center)) ** 2, axis=1)
        return d2 < self.radius**2


def _points_in_polygon(points, vertices):
    """Even-odd rule point-in-polygon test, vectorized over points."""
    x, y = points[:, 0], points[:, 1]
    vx, vy = vertices[:, 0], vertices[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    j = len(vertices) - 1
    for i in range(len(vertices)):
        crosses = (vy[i] > y) != (vy[j] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (vx[j] - vx[i]) * (y - vy[i]) / (vy[j] - vy[i]) + vx[i]
        inside ^= crosses & (x < xint)
        j = i
    return inside


@dataclass(frozen=True)
class PolygonDomain:
    """Simple polygon in 2D given by its vertex loop."""

    vertices: tuple

    def __post_init__(self):
        v = tuple(tuple(float(x) for x in p) for p in self.vertices)
        if len(v) < 3:
            raise DomainError("polygon needs at least 3 vertices")
        object.__setattr__(self, "vertices", v)

    @property
    def dim(self):
        return 2

    @property
    def bounds(self):
        v = np.asarray(self.vertices)
        return tuple((v[:, a].min(), v[:, a].max()) for a in range(2))

    def contains(self, points):
        return _points_in_polygon(points, np.asarray(self.vertices))


@dataclass(frozen=True)
class ImplicitDomain:
    """Domain {f < 0} for a callable f evaluated on (N, dim) point arrays."""

    fn: Callable
    bounds: tuple
    dim_: int = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "bounds", _as_bounds(self.bounds))
        object.__setattr__(self, "dim_", len(self.bounds))

    @property
    def dim(self):
        return self.dim_

    def contains(self, points):
        return np.asarray(self.fn(points)) < 0


def triangle_domain(vertices):
    """Convenience constructor: a triangle is a 3-vertex polygon."""
    if len(vertices) != 3:
        raise DomainError("triangle needs exactly 3 vertices")
    return PolygonDomain(tuple(vertices))


def unit_box(dim=2):
    return BoxDomain(tuple((0.0, 1.0) for _ in range(dim)))


_IMPLICIT_NAMESPACE = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "pi",
                 "minimum", "maximum", "hypot")
}


def domain_from_config(spec):
    """Build a domain object from a plain dict (as read from a run config)."""
    kind = spec.get("type")
    if kind == "box":
        return BoxDomain(tuple(spec["bounds"]))
    if kind in ("disk", "ball"):
        return DiskDomain(tuple(spec["center"]), float(spec["radius"]),
                          tuple(spec["bounds"]) if "bounds" in spec else None)
    if kind == "triangle":
        return triangle_domain([tuple(v) for v in spec["vertices"]])
    if kind == "polygon":
        return PolygonDomain(tuple(tuple(v) for v in spec["vertices"]))
    if kind == "implicit":
        expr = spec["expr"]
        bounds = tuple(tuple(b) for b in spec["bounds"])

        def fn(points, _expr=expr, _nb=len(bounds)):
            names = dict(_IMPLICIT_NAMESPACE)
            names["x"] = points[:, 0]
            names["y"] = points[:, 1]
            if _nb == 3:
                names["z"] = points[:, 2]
            return eval(_expr, {"__builtins__": {}}, names)

        return ImplicitDomain(fn, bounds)
    raise DomainError(f"unknown domain type: {kind!r}")


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform finite-difference grid over a bounding box.

    Attributes
    ----------
    dim : int
        2 or 3.
    shape : tuple of int
        Nodes per axis.
    h : float
        Grid spacing, shared by all axes.
    boundary_mode : str
        'dirichlet' (box boundary value 0, only interior nodes stored) or
        'periodic'.
    origin : tuple of float
        Coordinate of the node with index 0 along each axis.
    mask : ndarray of bool
        Flat per-node in-domain flag in lexicographic order (x fastest).
    """

    dim: int
    shape: tuple
    h: float
    boundary_mode: str
    origin: tuple
    mask: np.ndarray

    def __post_init__(self):
        self.mask.setflags(write=False)

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    @property
    def n_inside(self):
        return int(self.mask.sum())

    def axis_coords(self, axis):
        n = self.shape[axis]
        return self.origin[axis] + self.h * np.arange(n)

    def coordinates(self):
        """All node coordinates, shape (n_nodes, dim), lexicographic order."""
        axes = [self.axis_coords(a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        # 'ij' meshgrid with F-order ravel makes axis 0 (x) vary fastest
        return np.column_stack([m.ravel(order="F") for m in mesh])

    def flat_index(self, multi_index):
        idx = 0
        stride = 1
        for a in range(self.dim):
            idx += multi_index[a] * stride
            stride *= self.shape[a]
        return idx

    def reshape_field(self, values):
        """View a flat nodal field as a (nx, ny[, nz]) array."""
        return np.asarray(values).reshape(self.shape, order="F")

    def flatten_field(self, array):
        return np.asarray(array).ravel(order="F")

    def descriptor(self):
        """JSON-serializable grid summary (used in checkpoints/reports)."""
        return {
            "dim": self.dim,
            "shape": list(self.shape),
            "h": self.h,
            "boundary_mode": self.boundary_mode,
            "origin": list(self.origin),
            "n_inside": self.n_inside,
        }


def build_grid(domain, resolution, boundary_mode="dirichlet"):
    """Discretize the bounding box of `domain` with a uniform grid.

    `resolution` is the number of nodes along the first axis; the other
    axes get node counts matching the common spacing h. In dirichlet mode
    nodes cover only the interior of the box (zero boundary values are
    implicit); in periodic mode nodes tile the box with wrap-around.
    """
    if resolution < 3:
        raise DomainError("resolution must be at least 3 nodes per axis")
    if boundary_mode not in ("dirichlet", "periodic"):
        raise DomainError(f"unknown boundary mode: {boundary_mode!r}")
    bounds = domain.bounds
    dim = domain.dim
    if dim not in (2, 3):
        raise DomainError("only 2D and 3D domains are supported")
    lengths = [hi - lo for lo, hi in bounds]

    if boundary_mode == "dirichlet":
        h = lengths[0] / (resolution + 1)
        shape = tuple(max(3, round(length / h) - 1) for length in lengths)
        origin = tuple(lo + h for lo, _ in bounds)
    else:
        h = lengths[0] / resolution
        shape = tuple(max(3, round(length / h)) for length in lengths)
        origin = tuple(lo for lo, _ in bounds)

    grid = Grid(dim=dim, shape=shape, h=h, boundary_mode=boundary_mode,
                origin=origin, mask=np.ones(int(np.prod(shape)), dtype=bool))
    mask = np.asarray(domain.contains(grid.coordinates()), dtype=bool)
    if not mask.any():
        raise DomainError("domain does not intersect grid")
    return Grid(dim=dim, shape=shape, h=h, boundary_mode=boundary_mode,
                origin=origin, mask=mask)


def _laplacian_1d(n, h, periodic):
    main = np.full(n, 2.0 / h**2)
    off = np.full(n - 1, -1.0 / h**2)
    L = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if periodic:
        L[0, n - 1] += -1.0 / h**2
        L[n - 1, 0] += -1.0 / h**2
    return sp.csr_matrix(L)


def assemble_laplacian(grid):
    """Assemble the (2*dim)/h^2 five/seven-point Laplacian as a CSR matrix.

    Dirichlet rows simply drop out-of-box neighbors; periodic rows wrap.
    """
    periodic = grid.boundary_mode == "periodic"
    ops = [_laplacian_1d(n, grid.h, periodic) for n in grid.shape]
    eyes = [sp.identity(n, format="csr") for n in grid.shape]
    L = sp.csr_matrix((grid.n_nodes, grid.n_nodes))
    for axis in range(grid.dim):
        factors = [ops[a] if a == axis else eyes[a] for a in range(grid.dim)]
        term = factors[0]
        for f in factors[1:]:
            term = sp.kron(f, term, format="csr")  # x fastest => x innermost
        # only the second-derivative part along `axis` contributes off the
        # diagonal; the 1D operators already carry the full 2/h^2 diagonal,
        # which sums to (2*dim)/h^2 as required
        L = L + term
    L.sum_duplicates()
    return sp.csr_matrix(L)


def adjacency(grid):
    """Order-1 neighbor relation: (i, j) adjacent iff L_ij != 0 and i != j."""
    L = assemble_laplacian(grid)
    A = sp.csr_matrix((np.ones_like(L.data, dtype=bool), L.indices, L.indptr),
                      shape=L.shape)
    A = sp.lil_matrix(A)
    A.setdiag(False)
    A = sp.csr_matrix(A, dtype=bool)
    A.eliminate_zeros()
    return A


def save_matrix_market(op, path, comment=""):
    """Export a sparse operator as MatrixMarket coordinate text."""
    mmwrite(str(path), sp.coo_matrix(op), comment=comment)
