"""Flat triangulations with vertices on the surface, and their uniform refinement."""
from dataclasses import dataclass, field

import numpy as np

__all__ = ["SurfaceMesh", "icosphere", "torus_base", "refine", "base_mesh", "read_off", "write_off"]


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Conforming triangulation of a polyhedral surface.

    Local edge ``i`` of a triangle ``(v0, v1, v2)`` runs from ``v_i`` to
    ``v_{i+1 mod 3}``.  For every interior edge the incident triangle with the
    smaller index is the ``+`` side.

    Attributes
    ----------
    vertices : (nV, 3) float array
    triangles : (nF, 3) int array
    edge_elems : (nE, 2) int array
        ``(elem+, elem-)`` for each interior edge.
    edge_local : (nE, 2) int array
        Local edge index of the edge inside ``elem+`` and ``elem-``.
    edge_verts : (nE, 2) int array
        Vertex pair in the traversal order of ``elem+``.
    elem_edges : (nF, 3) int array
        Global edge index of each local edge, ``-1`` on a boundary.
    boundary : (nB, 2) int array
        ``(elem, local edge)`` of boundary edges; empty for closed surfaces.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    allow_boundary: bool = False
    edge_elems: np.ndarray = field(init=False, repr=False)
    edge_local: np.ndarray = field(init=False, repr=False)
    edge_verts: np.ndarray = field(init=False, repr=False)
    elem_edges: np.ndarray = field(init=False, repr=False)
    boundary: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("vertices must be (n, 3) and triangles (m, 3)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        self._build_edges()
        for name in ("vertices", "triangles", "edge_elems", "edge_local",
                     "edge_verts", "elem_edges", "boundary"):
            getattr(self, name).setflags(write=False)

    def _build_edges(self):
        t = self.triangles
        nf = len(t)
        start = t.reshape(-1)
        end = np.roll(t, -1, axis=1).reshape(-1)
        key = np.sort(np.stack([start, end], axis=1), axis=1)
        uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            raise ValueError("non-manifold mesh: an edge borders more than two triangles")
        if np.any(counts == 1) and not self.allow_boundary:
            raise ValueError("mesh is not closed: some edges border a single triangle")
        # occurrences sorted by (unique edge, element) so the + side comes first
        occ = np.arange(3 * nf)
        order = np.lexsort((occ // 3, inverse))
        inv_sorted = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = inv_sorted[1:] != inv_sorted[:-1]
        interior_ids = np.flatnonzero(counts == 2)
        plus = order[first & (counts[inv_sorted] == 2)]
        minus = order[~first]
        ne = len(interior_ids)
        edge_elems = np.stack([plus // 3, minus // 3], axis=1)
        edge_local = np.stack([plus % 3, minus % 3], axis=1)
        edge_verts = np.stack([start[plus], end[plus]], axis=1)
        if ne and not np.array_equal(np.stack([end[minus], start[minus]], axis=1), edge_verts):
            raise ValueError("inconsistent orientation: a shared edge is traversed "
                             "in the same direction by both triangles")
        renumber = -np.ones(len(uniq), dtype=np.int64)
        renumber[interior_ids] = np.arange(ne)
        elem_edges = renumber[inverse].reshape(nf, 3)
        bocc = order[first & (counts[inv_sorted] == 1)]
        boundary = np.stack([bocc // 3, bocc % 3], axis=1).reshape(-1, 2)
        object.__setattr__(self, "edge_elems", edge_elems)
        object.__setattr__(self, "edge_local", edge_local)
        object.__setattr__(self, "edge_verts", edge_verts)
        object.__setattr__(self, "elem_edges", elem_edges)
        object.__setattr__(self, "boundary", boundary)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edge_elems) + len(self.boundary)

    @property
    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_elements

    def corners(self):
        """Vertex coordinates per triangle, shape (nF, 3, 3)."""
        return self.vertices[self.triangles]

    def element_diameters(self):
        c = self.corners()
        return np.linalg.norm(c - np.roll(c, -1, axis=1), axis=2).max(axis=1)

    @property
    def h(self):
        """Mesh size: the largest element diameter."""
        return float(self.element_diameters().max())

    def element_areas(self):
        c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def element_normals(self):
        c = self.corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1)[:, None]

    def shape_regularity(self):
        """Minimum over triangles of inradius / diameter."""
        c = self.corners()
        perimeter = np.linalg.norm(c - np.roll(c, -1, axis=1), axis=2).sum(axis=1)
        inradius = 2.0 * self.element_areas() / perimeter
        return float((inradius / self.element_diameters()).min())


_PHI = (1.0 + 5.0 ** 0.5) / 2.0

_ICO_VERTS = np.array([
    [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
    [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
    [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
], dtype=float)

_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def icosphere(surface, level=0):
    """Icosahedron projected onto a sphere and refined ``level`` times."""
    if surface.kind != "sphere":
        raise ValueError("icosphere needs a sphere")
    if level < 0:
        raise ValueError("level must be non-negative")
    verts = _ICO_VERTS / np.linalg.norm(_ICO_VERTS, axis=1)[:, None] * surface.radius
    mesh = SurfaceMesh(surface.closest_point(verts), _ICO_FACES)
    for _ in range(level):
        mesh = refine(mesh, surface)
    return mesh


def torus_base(surface, n_major=8, n_minor=4):
    """Structured triangulation of a torus from its angular parametrisation."""
    if surface.kind != "torus":
        raise ValueError("torus_base needs a torus")
    if n_major < 3 or n_minor < 3:
        raise ValueError("n_major and n_minor must be at least 3")
    ti, pj = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    theta = 2.0 * np.pi * ti / n_major
    phi = 2.0 * np.pi * pj / n_minor
    verts = surface.parametrize(theta, phi).reshape(-1, 3)

    def vid(i, j):
        return (i % n_major) * n_minor + (j % n_minor)

    a, b = vid(ti, pj), vid(ti + 1, pj)
    c, d = vid(ti + 1, pj + 1), vid(ti, pj + 1)
    tris = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3),
                           np.stack([a, c, d], -1).reshape(-1, 3)])
    return SurfaceMesh(verts, tris)


def refine(mesh, surface):
    """Split every triangle into four, projecting the edge midpoints onto the surface."""
    t = mesh.triangles
    nv = mesh.n_vertices
    # one new vertex per (interior or boundary) edge
    edge_id = mesh.elem_edges.copy()
    n_int = len(mesh.edge_elems)
    if len(mesh.boundary):
        edge_id[mesh.boundary[:, 0], mesh.boundary[:, 1]] = n_int + np.arange(len(mesh.boundary))
    n_edges = n_int + len(mesh.boundary)
    pairs = np.zeros((n_edges, 2), dtype=np.int64)
    pairs[edge_id.reshape(-1)] = np.stack([t.reshape(-1), np.roll(t, -1, axis=1).reshape(-1)], 1)
    mid = 0.5 * (mesh.vertices[pairs[:, 0]] + mesh.vertices[pairs[:, 1]])
    verts = np.concatenate([mesh.vertices, surface.closest_point(mid)])
    m = nv + edge_id  # midpoint of local edge i: between v_i and v_{i+1}
    v0, v1, v2 = t[:, 0], t[:, 1], t[:, 2]
    m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
    children = np.stack([
        np.stack([v0, m01, m20], 1),
        np.stack([m01, v1, m12], 1),
        np.stack([m20, m12, v2], 1),
        np.stack([m01, m12, m20], 1),
    ], axis=1).reshape(-1, 3)
    return SurfaceMesh(verts, children, allow_boundary=mesh.allow_boundary)


def base_mesh(surface, level):
    """Mesh of refinement ``level`` for a sphere (icosphere) or torus.

    Torus level 0 is the 16 x 4 structured grid; every level refines once.
    """
    if surface.kind == "sphere":
        return icosphere(surface, level)
    if surface.kind == "torus":
        if level < 0:
            raise ValueError("level must be non-negative")
        mesh = torus_base(surface, 16, 4)
        for _ in range(level):
            mesh = refine(mesh, surface)
        return mesh
    raise ValueError(f"no built-in mesh for surface kind {surface.kind!r}")


def read_off(path, surface):
    """Load an ASCII OFF triangle mesh, projecting vertices onto ``surface``.

    Triangles whose normal points inward are flipped so the result is
    oriented outward.
    """
    with open(path, encoding="utf-8") as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise ValueError(f"{path}: not an OFF file")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4
    verts = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
    pos += 3 * nv
    tris = []
    for _ in range(nf):
        n = int(tokens[pos])
        if n != 3:
            raise ValueError(f"{path}: only triangular faces are supported")
        tris.append([int(s) for s in tokens[pos + 1:pos + 4]])
        pos += 4
    verts = surface.closest_point(verts)
    tris = np.array(tris, dtype=np.int64)
    c = verts[tris]
    normals = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    # exact normals at the corners: coarse centroids may leave the tube
    inward = np.einsum("ij,ij->i", normals, surface.normal(c).sum(axis=1)) < 0
    tris[inward] = tris[inward][:, ::-1]
    return SurfaceMesh(verts, tris)


def write_off(path, mesh):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"OFF\n{mesh.n_vertices} {mesh.n_elements} 0\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for tri in mesh.triangles:
            fh.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
