"""Finite element spaces on triangles.

Displacement lives in a continuous vector P2 space (nodes at vertices and
edge midpoints, two components interleaved), pressure in a discontinuous
P1 space with three nodes per cell. Only these two spaces exist, so the
dof maps are built directly instead of through a generic element layer.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

# Dunavant rule, exact for polynomials of degree <= 4 on the triangle.
# Barycentric points; weights sum to one, so integrals carry the cell area.
_A1, _A2 = 0.445948490915965, 0.091576213509771
_W1, _W2 = 0.223381589678011, 0.109951743655322
TRI_QP_BARY = np.array([
    [1.0 - 2.0 * _A1, _A1, _A1],
    [_A1, 1.0 - 2.0 * _A1, _A1],
    [_A1, _A1, 1.0 - 2.0 * _A1],
    [1.0 - 2.0 * _A2, _A2, _A2],
    [_A2, 1.0 - 2.0 * _A2, _A2],
    [_A2, _A2, 1.0 - 2.0 * _A2],
])
TRI_QW = np.array([_W1, _W1, _W1, _W2, _W2, _W2])

# 3-point Gauss on [0,1], exact through degree 5
_S = np.sqrt(0.6)
EDGE_QP = np.array([0.5 * (1.0 - _S), 0.5, 0.5 * (1.0 + _S)])
EDGE_QW = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])


def p2_values(bary):
    """P2 shape values at barycentric points (q,3) -> (q,6).

    Local node order: vertices 0..2, then midpoint opposite each vertex
    (node 3 between vertices 1-2, node 4 between 0-2, node 5 between 0-1).
    """
    b = np.asarray(bary, dtype=float)
    l0, l1, l2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([
        l0 * (2.0 * l0 - 1.0),
        l1 * (2.0 * l1 - 1.0),
        l2 * (2.0 * l2 - 1.0),
        4.0 * l1 * l2,
        4.0 * l0 * l2,
        4.0 * l0 * l1,
    ], axis=-1)


def p2_bary_gradients(bary):
    """dN/dlambda at barycentric points: (q,3) -> (q,6,3)."""
    b = np.asarray(bary, dtype=float)
    q = b.shape[0]
    l0, l1, l2 = b[:, 0], b[:, 1], b[:, 2]
    g = np.zeros((q, 6, 3))
    g[:, 0, 0] = 4.0 * l0 - 1.0
    g[:, 1, 1] = 4.0 * l1 - 1.0
    g[:, 2, 2] = 4.0 * l2 - 1.0
    g[:, 3, 1] = 4.0 * l2
    g[:, 3, 2] = 4.0 * l1
    g[:, 4, 0] = 4.0 * l2
    g[:, 4, 2] = 4.0 * l0
    g[:, 5, 0] = 4.0 * l1
    g[:, 5, 1] = 4.0 * l0
    return g


def p1_values(bary):
    """DG1 is nodal P1 per cell: shape values are the barycentric coords."""
    return np.asarray(bary, dtype=float)


@dataclass
class CellGeometry:
    """Per-cell affine data shared by all assembly routines."""

    grad_lambda: np.ndarray   # (nc, 3, 2) gradients of barycentric coords
    areas: np.ndarray         # (nc,)

    @classmethod
    def from_mesh(cls, mesh):
        p = mesh.vertices[mesh.cells]          # (nc, 3, 2)
        areas = mesh.cell_areas
        # grad(lambda_i) is the inward normal of the opposite edge over 2A
        g = np.empty((mesh.n_cells, 3, 2))
        for i in range(3):
            a = p[:, (i + 1) % 3]
            b = p[:, (i + 2) % 3]
            t = b - a
            g[:, i, 0] = -t[:, 1]
            g[:, i, 1] = t[:, 0]
        g /= (2.0 * areas)[:, None, None]
        return cls(grad_lambda=g, areas=areas)

    def p2_physical_gradients(self, bary):
        """Physical P2 gradients at barycentric points: (nc, q, 6, 2)."""
        gb = p2_bary_gradients(np.atleast_2d(bary))   # (q,6,3)
        return np.einsum("qal,nld->nqad", gb, self.grad_lambda)


def barycentric_coords(mesh, geom, cells, points):
    """Barycentric coordinates of physical points inside given cells.

    cells (k,) int and points (k,2) are paired; lambda_i is affine with
    gradient grad_lambda[i] and value 1 at vertex i.
    """
    verts = mesh.vertices[mesh.cells[cells]]        # (k,3,2)
    g = geom.grad_lambda[cells]                     # (k,3,2)
    d = points[:, None, :] - verts                  # (k,3,2)
    return 1.0 + np.einsum("kid,kid->ki", g, d)


@dataclass
class DofMap:
    kind: str                 # "cg2-vector" or "dg1"
    cell_dofs: np.ndarray     # (nc, 12) or (nc, 3)
    n_dofs: int


def build_cg2_vector_dofmap(mesh):
    """Vector P2: scalar nodes are vertices then edge midpoints; the dof of
    node g, component c is 2 g + c. Twelve local dofs, node-major."""
    nv = mesh.n_vertices
    scalar = np.hstack([mesh.cells, nv + mesh.cell_edges])   # (nc, 6)
    cd = np.empty((mesh.n_cells, 12), dtype=np.int64)
    cd[:, 0::2] = 2 * scalar
    cd[:, 1::2] = 2 * scalar + 1
    return DofMap("cg2-vector", cd, 2 * (nv + mesh.n_edges))


def build_dg1_dofmap(mesh):
    nc = mesh.n_cells
    cd = 3 * np.arange(nc, dtype=np.int64)[:, None] + np.arange(3)
    return DofMap("dg1", cd, 3 * nc)


def cg2_scalar_node_coords(mesh):
    mids = mesh.vertices[mesh.edges].mean(axis=1)
    return np.vstack([mesh.vertices, mids])


def interpolate_cg2_vector(mesh, func):
    """Nodal interpolation of a callable (x,y) -> (2,) onto the vector P2 space."""
    nodes = cg2_scalar_node_coords(mesh)
    vals = np.asarray([func(x, y) for x, y in nodes], dtype=float)
    return vals.reshape(-1)


def _scatter_add(rows, cols, vals, shape):
    m = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape)
    return m.tocsr()


def cg2_vector_mass(mesh, geom=None, dofmap=None):
    """Mass matrix of the vector P2 space (block-identical per component)."""
    geom = geom or CellGeometry.from_mesh(mesh)
    dofmap = dofmap or build_cg2_vector_dofmap(mesh)
    vals = p2_values(TRI_QP_BARY)                     # (q,6)
    m_ref = np.einsum("q,qa,qb->ab", TRI_QW, vals, vals)   # scalar block
    nc = mesh.n_cells
    loc = np.zeros((nc, 12, 12))
    loc[:, 0::2, 0::2] = geom.areas[:, None, None] * m_ref
    loc[:, 1::2, 1::2] = geom.areas[:, None, None] * m_ref
    rows = np.repeat(dofmap.cell_dofs, 12, axis=1)
    cols = np.tile(dofmap.cell_dofs, (1, 12))
    return _scatter_add(rows, cols, loc, (dofmap.n_dofs, dofmap.n_dofs))


def dg1_mass(mesh, dofmap=None):
    """Block-diagonal DG1 mass matrix; the P1 block is A/12 * (1 + delta_ij)."""
    dofmap = dofmap or build_dg1_dofmap(mesh)
    block = (np.ones((3, 3)) + np.eye(3)) / 12.0
    loc = mesh.cell_areas[:, None, None] * block
    rows = np.repeat(dofmap.cell_dofs, 3, axis=1)
    cols = np.tile(dofmap.cell_dofs, (1, 3))
    return _scatter_add(rows, cols, loc, (dofmap.n_dofs, dofmap.n_dofs))


def locate_cells(mesh, geom, points, tol=1e-12):
    """Cell containing each point; ties on shared facets go to the lowest
    cell index. Raises if a point falls outside the mesh."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    found = np.full(points.shape[0], -1, dtype=np.int64)
    verts = mesh.vertices[mesh.cells]               # (nc,3,2)
    g = geom.grad_lambda                            # (nc,3,2)
    for k, pt in enumerate(points):
        lam = 1.0 + np.einsum("nid,nid->ni", g, pt[None, None, :] - verts)
        inside = np.all(lam >= -tol, axis=1)
        idx = np.nonzero(inside)[0]
        if idx.size == 0:
            raise ValueError(f"point {pt} lies outside the mesh")
        found[k] = idx[0]
    return found


def interpolate_at_points(mesh, dofmap, dofs, points, geom=None):
    """Evaluate a dof vector at physical points.

    Returns (k,2) for the vector P2 space and (k,) for DG1.
    """
    geom = geom or CellGeometry.from_mesh(mesh)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    cells = locate_cells(mesh, geom, points)
    bary = barycentric_coords(mesh, geom, cells, points)
    if dofmap.kind == "dg1":
        local = dofs[dofmap.cell_dofs[cells]]        # (k,3)
        return np.einsum("ki,ki->k", p1_values(bary), local)
    if dofmap.kind == "cg2-vector":
        vals = p2_values(bary)                       # (k,6)
        local = dofs[dofmap.cell_dofs[cells]]        # (k,12)
        out = np.empty((points.shape[0], 2))
        out[:, 0] = np.einsum("ka,ka->k", vals, local[:, 0::2])
        out[:, 1] = np.einsum("ka,ka->k", vals, local[:, 1::2])
        return out
    raise ValueError(f"unknown dof map kind {dofmap.kind!r}")
