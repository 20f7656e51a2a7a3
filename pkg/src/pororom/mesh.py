"""Structured triangulations of the unit square with facet topology.

The solver needs more than vertices and cells: interior-penalty assembly
works facet by facet, so the mesh carries explicit interior/boundary facet
arrays with orientations, lengths and unit normals precomputed.
"""

from dataclasses import dataclass, field

import numpy as np

BOUNDARY_LABELS = ("Left", "Top", "Right", "Bottom")
LEFT, TOP, RIGHT, BOTTOM = range(4)

LOWER, UPPER = 0, 1


@dataclass
class Mesh:
    """Triangulation of (0,1)^2. Arrays are frozen after construction."""

    vertices: np.ndarray        # (nv, 2) float
    cells: np.ndarray           # (nc, 3) int, counterclockwise
    edges: np.ndarray           # (ne, 2) int, sorted vertex pairs
    cell_edges: np.ndarray      # (nc, 3) int, edge opposite local vertex j
    # interior facets: T+ is the lower cell index, normal points T+ -> T-
    if_edges: np.ndarray        # (nif,) int
    if_cells: np.ndarray        # (nif, 2) int, [plus, minus]
    if_normals: np.ndarray      # (nif, 2) float, unit
    if_lengths: np.ndarray      # (nif,) float
    # boundary facets: normal is outward
    bf_edges: np.ndarray        # (nbf,) int
    bf_cells: np.ndarray        # (nbf,) int
    bf_labels: np.ndarray       # (nbf,) int, index into BOUNDARY_LABELS
    bf_normals: np.ndarray      # (nbf, 2) float, unit
    bf_lengths: np.ndarray      # (nbf,) float
    cell_areas: np.ndarray = field(repr=False, default=None)
    cell_centroids: np.ndarray = field(repr=False, default=None)
    subdomain: np.ndarray = field(repr=False, default=None)  # (nc,) LOWER/UPPER

    def __post_init__(self):
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.any(signed <= 0.0):
            raise ValueError("cells must be counterclockwise with positive area")
        self.cell_areas = signed
        self.cell_centroids = p.mean(axis=1)
        self.subdomain = np.where(self.cell_centroids[:, 1] < 0.5, LOWER, UPPER)
        for a in (self.vertices, self.cells, self.edges, self.cell_edges,
                  self.if_edges, self.if_cells, self.if_normals, self.if_lengths,
                  self.bf_edges, self.bf_cells, self.bf_labels, self.bf_normals,
                  self.bf_lengths, self.cell_areas, self.cell_centroids,
                  self.subdomain):
            a.flags.writeable = False

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    @property
    def n_edges(self):
        return self.edges.shape[0]

    @property
    def h(self):
        """Largest cell diameter (longest edge)."""
        ev = self.vertices[self.edges]
        return float(np.max(np.hypot(ev[:, 0, 0] - ev[:, 1, 0],
                                     ev[:, 0, 1] - ev[:, 1, 1])))

    def cell_diameters(self):
        p = self.vertices[self.cells]
        e0 = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        e1 = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        e2 = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        return np.maximum(e0, np.maximum(e1, e2))


def _edge_table(cells):
    """Edge list plus per-cell edge ids; edge j sits opposite local vertex j."""
    nc = cells.shape[0]
    raw = np.empty((3 * nc, 2), dtype=np.int64)
    raw[0::3] = cells[:, [1, 2]]
    raw[1::3] = cells[:, [2, 0]]
    raw[2::3] = cells[:, [0, 1]]
    raw.sort(axis=1)
    edges, inverse = np.unique(raw, axis=0, return_inverse=True)
    cell_edges = inverse.reshape(nc, 3)
    return edges, cell_edges


def build_unit_square_mesh(n_x, split_at_half=True, pattern="right"):
    """Triangulate (0,1)^2 on an n_x-by-n_x grid of squares.

    pattern "right" splits each square along one diagonal (2 cells per
    square), "crossed" along both (4 cells, one center vertex per square).
    With split_at_half the grid line y = 0.5 must be resolved, so n_x has
    to be even; every cell then lies entirely in one subdomain.
    """
    if n_x < 2:
        raise ValueError("n_x must be at least 2")
    if split_at_half and n_x % 2 != 0:
        raise ValueError(
            "split_at_half needs an even n_x so the line y=0.5 is a mesh line "
            "and no cell straddles the subdomain interface")
    if pattern not in ("right", "crossed"):
        raise ValueError(f"unknown pattern {pattern!r}")

    n = n_x
    g = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(g, g, indexing="xy")
    verts = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    cells = []
    if pattern == "right":
        for j in range(n):
            for i in range(n):
                a, b = vid(i, j), vid(i + 1, j)
                c, d = vid(i + 1, j + 1), vid(i, j + 1)
                cells.append((a, b, c))
                cells.append((a, c, d))
    else:
        centers = []
        for j in range(n):
            for i in range(n):
                centers.append(((g[i] + g[i + 1]) / 2.0, (g[j] + g[j + 1]) / 2.0))
        centers = np.asarray(centers)
        base = verts.shape[0]
        verts = np.vstack([verts, centers])
        for j in range(n):
            for i in range(n):
                a, b = vid(i, j), vid(i + 1, j)
                c, d = vid(i + 1, j + 1), vid(i, j + 1)
                m = base + j * n + i
                cells.append((a, b, m))
                cells.append((b, c, m))
                cells.append((c, d, m))
                cells.append((d, a, m))
    cells = np.asarray(cells, dtype=np.int64)
    return _finish_mesh(verts, cells)


def _finish_mesh(verts, cells):
    edges, cell_edges = _edge_table(cells)
    ne = edges.shape[0]

    # incidence: which cells touch each edge (at most two)
    inc = np.full((ne, 2), -1, dtype=np.int64)
    count = np.zeros(ne, dtype=np.int64)
    for c in range(cells.shape[0]):
        for e in cell_edges[c]:
            inc[e, count[e]] = c
            count[e] += 1
    if np.any(count > 2):
        raise ValueError("non-manifold edge: more than two incident cells")

    interior = np.nonzero(count == 2)[0]
    boundary = np.nonzero(count == 1)[0]

    ev = verts[edges]
    tang = ev[:, 1] - ev[:, 0]
    lengths = np.linalg.norm(tang, axis=1)
    if np.any(lengths <= 0.0):
        raise ValueError("degenerate zero-length edge")
    # rotate tangent by -90 degrees; orientation fixed per facet below
    nrm = np.column_stack([tang[:, 1], -tang[:, 0]]) / lengths[:, None]
    mids = 0.5 * (ev[:, 0] + ev[:, 1])

    centroids = verts[cells].mean(axis=1)

    if_cells = np.sort(inc[interior], axis=1)       # T+ = lower cell index
    if_normals = nrm[interior].copy()
    toward = centroids[if_cells[:, 1]] - mids[interior]
    flip = np.einsum("ij,ij->i", if_normals, toward) < 0.0
    if_normals[flip] *= -1.0

    bf_cells = inc[boundary, 0]
    bf_normals = nrm[boundary].copy()
    outward = mids[boundary] - centroids[bf_cells]
    flip = np.einsum("ij,ij->i", bf_normals, outward) < 0.0
    bf_normals[flip] *= -1.0

    mb = mids[boundary]
    tol = 1e-12
    bf_labels = np.full(boundary.shape[0], -1, dtype=np.int64)
    bf_labels[np.abs(mb[:, 0]) < tol] = LEFT
    bf_labels[np.abs(mb[:, 0] - 1.0) < tol] = RIGHT
    bf_labels[np.abs(mb[:, 1]) < tol] = BOTTOM
    bf_labels[np.abs(mb[:, 1] - 1.0) < tol] = TOP
    if np.any(bf_labels < 0):
        raise ValueError("boundary facet not on any side of the unit square")

    return Mesh(
        vertices=np.ascontiguousarray(verts, dtype=np.float64),
        cells=cells,
        edges=edges,
        cell_edges=cell_edges,
        if_edges=interior,
        if_cells=if_cells,
        if_normals=if_normals,
        if_lengths=lengths[interior],
        bf_edges=boundary,
        bf_cells=bf_cells,
        bf_labels=bf_labels,
        bf_normals=bf_normals,
        bf_lengths=lengths[boundary],
    )


def facet_length_scale(area_plus, area_minus, facet_length):
    """h_e = (|T+| + |T-|) / (2 |e|); pass area_minus=None on the boundary,
    where the one-sided value |T| / |e| is used."""
    facet_length = np.asarray(facet_length, dtype=float)
    if np.any(facet_length <= 0.0):
        raise ValueError("facet length must be positive")
    if area_minus is None:
        return np.asarray(area_plus, dtype=float) / facet_length
    return (np.asarray(area_plus, dtype=float) + np.asarray(area_minus, dtype=float)) \
        / (2.0 * facet_length)


def interior_length_scales(mesh):
    return facet_length_scale(mesh.cell_areas[mesh.if_cells[:, 0]],
                              mesh.cell_areas[mesh.if_cells[:, 1]],
                              mesh.if_lengths)


def boundary_length_scales(mesh):
    return facet_length_scale(mesh.cell_areas[mesh.bf_cells], None, mesh.bf_lengths)


def export_text(mesh, path):
    """Plain-text mesh dump: vertex block, cell block, labeled boundary block."""
    lines = [f"vertices {mesh.n_vertices}"]
    for x, y in mesh.vertices:
        lines.append(f"{float(x)!r} {float(y)!r}")
    lines.append(f"cells {mesh.n_cells}")
    for a, b, c in mesh.cells:
        lines.append(f"{a} {b} {c}")
    lines.append(f"boundary {mesh.bf_edges.shape[0]}")
    for e, lab in zip(mesh.bf_edges, mesh.bf_labels):
        v0, v1 = mesh.edges[e]
        lines.append(f"{v0} {v1} {BOUNDARY_LABELS[lab]}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
