"""Degree-k isoparametric approximation of the surface.

The flat triangulation is lifted elementwise by Lagrange interpolation of
the closest point map: the geometry nodes of each curved triangle are the
projections of the uniform lattice nodes of the flat triangle.  Nodes on
shared edges are computed once per edge so neighbouring elements see
bitwise identical positions.

Reference triangle: vertices (0,0), (1,0), (0,1); local edge ``i`` runs from
vertex ``i`` to vertex ``i+1 mod 3``.
"""
from dataclasses import dataclass
from functools import cached_property
from math import comb, ceil

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import DegenerateJacobian
from .geometry import projector

__all__ = [
    "ReferenceElement",
    "QuadratureRule",
    "make_quadrature",
    "CurvedMesh",
    "build_curved",
    "GeoDiagnostics",
    "geometric_diagnostics",
    "export_vtk",
    "subdivision_lattice",
]

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _lattice(k):
    """Integer lattice ``(a, b)`` with ``a + b <= k``; the node is ``(a/k, b/k)``."""
    return np.array([(a, b) for b in range(k + 1) for a in range(k + 1 - b)], dtype=np.int64)


class ReferenceElement:
    """Nodal Lagrange basis of degree ``k`` on the uniform lattice of the reference triangle."""

    def __init__(self, k):
        if k < 1:
            raise ValueError("degree must be at least 1")
        self.k = k
        self.lattice = _lattice(k)
        self.nodes = self.lattice / k
        self.n = len(self.nodes)
        self._powers = np.array([(p, q) for q in range(k + 1) for p in range(k + 1 - q)])
        vander = self._monomials(self.nodes)
        self._coeffs = np.linalg.inv(vander)

    def _monomials(self, pts):
        pts = np.asarray(pts, dtype=float)
        return pts[..., None, 0] ** self._powers[:, 0] * pts[..., None, 1] ** self._powers[:, 1]

    def _monomial_grads(self, pts):
        pts = np.asarray(pts, dtype=float)
        p, q = self._powers[:, 0], self._powers[:, 1]
        x, y = pts[..., None, 0], pts[..., None, 1]
        dx = np.where(p > 0, p * x ** np.maximum(p - 1, 0), 0.0) * y ** q
        dy = x ** p * np.where(q > 0, q * y ** np.maximum(q - 1, 0), 0.0)
        return np.stack([dx, dy], axis=-1)

    def eval(self, pts):
        """Basis values, shape ``(..., n)``."""
        return self._monomials(pts) @ self._coeffs

    def grad(self, pts):
        """Reference gradients, shape ``(..., n, 2)``."""
        g = self._monomial_grads(pts)
        return np.einsum("...mc,mj->...jc", g, self._coeffs)

    def edge_nodes(self, i):
        """Local node indices on edge ``i``, ordered along the edge direction."""
        a, b = self.lattice[:, 0], self.lattice[:, 1]
        c = self.k - a - b
        if i == 0:
            sel, pos = b == 0, a
        elif i == 1:
            sel, pos = c == 0, b
        else:
            sel, pos = a == 0, self.k - b
        idx = np.flatnonzero(sel)
        return idx[np.argsort(pos[idx])]

    def interior_nodes(self):
        a, b = self.lattice[:, 0], self.lattice[:, 1]
        return np.flatnonzero((a > 0) & (b > 0) & (a + b < self.k))


@dataclass(frozen=True)
class QuadratureRule:
    """Element and edge quadrature.

    ``points`` are reference-triangle coordinates, weights sum to 1/2.
    ``edge_points`` lie in [0, 1] with weights summing to 1.
    """

    points: np.ndarray
    weights: np.ndarray
    edge_points: np.ndarray
    edge_weights: np.ndarray
    degree: int


def _gauss01(n):
    t, w = roots_legendre(n)
    return 0.5 * (t + 1.0), 0.5 * w


def _triangle_rule(n):
    """Collapsed (Duffy) product rule with ``n`` points per direction, exact to degree 2n-1."""
    u, wu = _gauss01(n)
    t, wt = roots_jacobi(n, 1.0, 0.0)
    v, wv = 0.5 * (t + 1.0), wt / 4.0
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.stack([(uu * (1.0 - vv)).ravel(), vv.ravel()], axis=1)
    wts = np.outer(wu, wv).ravel()
    return pts, wts


def make_quadrature(k, degree=None):
    """Quadrature for degree-``k`` elements, exact to at least ``2k+2`` (or ``degree``)."""
    if k < 1:
        raise ValueError("degree must be at least 1")
    if degree is None:
        degree = 2 * k + 2
    n = ceil((degree + 1) / 2)
    pts, wts = _triangle_rule(n)
    s, ws = _gauss01(ceil((2 * k + 3) / 2) if degree == 2 * k + 2 else n)
    return QuadratureRule(pts, wts, s, ws, 2 * n - 1)


@dataclass
class ElementGeometry:
    """Map data at element quadrature points; arrays have leading shape (nE, nq)."""

    x: np.ndarray
    jac: np.ndarray
    ginv: np.ndarray
    sqrt_det: np.ndarray
    nu_h: np.ndarray
    dA: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray

    @cached_property
    def pinv_t(self):
        """Transpose of the left pseudo-inverse, ``J (J^T J)^-1``, shape (nE, nq, 3, 2)."""
        return self.jac @ self.ginv

    @cached_property
    def grad_phi(self):
        """Tangential gradients of the basis, shape (nE, nq, nk, 3)."""
        return np.einsum("eqdc,qjc->eqjd", self.pinv_t, self.dphi)


@dataclass
class EdgeGeometry:
    """Map data at edge quadrature points; arrays have leading shape (nEdge, 2, ng).

    Axis 1 is the side: 0 for ``+``, 1 for ``-``.  ``ds`` (nEdge, ng) includes the
    quadrature weights and is taken from the ``+`` side.
    """

    elem: np.ndarray
    local: np.ndarray
    x: np.ndarray
    jac: np.ndarray
    ginv: np.ndarray
    nu_h: np.ndarray
    tangent: np.ndarray
    conormal: np.ndarray
    speed: np.ndarray
    ds: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray

    @cached_property
    def pinv_t(self):
        return self.jac @ self.ginv

    @cached_property
    def grad_phi(self):
        """Tangential basis gradients, shape (nEdge, 2, ng, nk, 3)."""
        return np.einsum("esqdc,esqjc->esqjd", self.pinv_t, self.dphi)


def edge_reference_points(i, s):
    """Reference coordinates of parameter values ``s`` on local edge ``i``."""
    a, b = REF_VERTICES[i], REF_VERTICES[(i + 1) % 3]
    return a + np.asarray(s)[..., None] * (b - a)


def _frame(nodes, ref, phi, dphi):
    """Positions, Jacobians, inverse metric, sqrt(det G) and unit normal."""
    x = np.einsum("...j,...jd->...d", phi, nodes)
    jac = np.einsum("...jc,...jd->...dc", dphi, nodes)
    g = np.swapaxes(jac, -1, -2) @ jac
    det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]
    if np.any(~(det > 0)):
        raise DegenerateJacobian("element map with non-positive metric determinant")
    ginv = np.stack([np.stack([g[..., 1, 1], -g[..., 0, 1]], -1),
                     np.stack([-g[..., 1, 0], g[..., 0, 0]], -1)], -2) / det[..., None, None]
    cross = np.cross(jac[..., 0], jac[..., 1])
    sqrt_det = np.sqrt(det)
    return x, jac, ginv, sqrt_det, cross / sqrt_det[..., None]


class CurvedMesh:
    """Degree-``k`` curved triangulation built from a flat :class:`SurfaceMesh`.

    Attributes
    ----------
    base : SurfaceMesh
    surface : ImplicitSurface
    k : int
    ref : ReferenceElement
    quad : QuadratureRule
    nodes : (nE, nk, 3) array of geometry nodes (all on the surface)
    node_ids : (nE, nk) int array, global numbering of geometry nodes
    """

    def __init__(self, base, surface, k, quad=None):
        self.base = base
        self.surface = surface
        self.k = int(k)
        self.ref = ReferenceElement(self.k)
        self.quad = make_quadrature(self.k) if quad is None else quad
        self.node_ids, self.global_nodes = self._number_nodes()
        self.nodes = self.global_nodes[self.node_ids]
        self.nodes.setflags(write=False)

    def _number_nodes(self):
        base, ref, k = self.base, self.ref, self.k
        tri = base.triangles
        ne = base.n_elements
        ids = np.empty((ne, ref.n), dtype=np.int64)
        corner = [int(np.flatnonzero((ref.lattice == (0, 0)).all(1))[0]),
                  int(np.flatnonzero((ref.lattice == (k, 0)).all(1))[0]),
                  int(np.flatnonzero((ref.lattice == (0, k)).all(1))[0])]
        for i in range(3):
            ids[:, corner[i]] = tri[:, i]
        positions = [base.vertices]
        offset = base.n_vertices
        if k > 1:
            # edge ids covering interior and boundary edges
            edge_id = base.elem_edges.copy()
            n_int = len(base.edge_elems)
            is_plus = np.zeros((ne, 3), dtype=bool)
            is_plus[:, :] = True
            if n_int:
                is_plus[base.edge_elems[:, 1], base.edge_local[:, 1]] = False
            if len(base.boundary):
                edge_id[base.boundary[:, 0], base.boundary[:, 1]] = n_int + np.arange(len(base.boundary))
            n_edges = n_int + len(base.boundary)
            start = np.zeros((n_edges, 2), dtype=np.int64)
            pl = np.argwhere(is_plus)
            start[edge_id[pl[:, 0], pl[:, 1]]] = np.stack(
                [tri[pl[:, 0], pl[:, 1]], tri[pl[:, 0], (pl[:, 1] + 1) % 3]], 1)
            m = np.arange(1, k)
            va, vb = base.vertices[start[:, 0]], base.vertices[start[:, 1]]
            flat = ((k - m)[None, :, None] * va[:, None, :] + m[None, :, None] * vb[:, None, :]) / k
            positions.append(self.surface.closest_point(flat).reshape(-1, 3))
            for i in range(3):
                loc = ref.edge_nodes(i)[1:-1]
                gm = np.where(is_plus[:, i][:, None], np.arange(k - 1)[None, :],
                              (k - 2 - np.arange(k - 1))[None, :])
                ids[:, loc] = offset + edge_id[:, i][:, None] * (k - 1) + gm
            offset += n_edges * (k - 1)
        inner = ref.interior_nodes()
        if len(inner):
            lam = np.stack([k - ref.lattice[inner].sum(1), ref.lattice[inner, 0],
                            ref.lattice[inner, 1]], axis=1) / k
            flat = np.einsum("ni,eid->end", lam, base.corners())
            positions.append(self.surface.closest_point(flat).reshape(-1, 3))
            ids[:, inner] = offset + np.arange(ne * len(inner)).reshape(ne, len(inner))
        return ids, np.concatenate(positions)

    @property
    def n_elements(self):
        return self.base.n_elements

    @property
    def n_edges(self):
        return len(self.base.edge_elems)

    @property
    def h(self):
        return self.base.h

    def map_points(self, ref_points, elems=None):
        """Frames at reference points for all (or the given) elements.

        Returns ``(x, J, G^-1, sqrt(det G), nu_h)`` with leading shape (nE, npts).
        """
        nodes = self.nodes if elems is None else self.nodes[elems]
        phi = self.ref.eval(ref_points)
        dphi = self.ref.grad(ref_points)
        return _frame(nodes[:, None], ref_points, phi[None], dphi[None])

    @cached_property
    def elements(self):
        q = self.quad
        phi = self.ref.eval(q.points)
        dphi = self.ref.grad(q.points)
        x, jac, ginv, sqrt_det, nu_h = self.map_points(q.points)
        return ElementGeometry(x, jac, ginv, sqrt_det, nu_h, sqrt_det * q.weights, phi, dphi)

    @cached_property
    def edges(self):
        base, q = self.base, self.quad
        s = q.edge_points
        elem = base.edge_elems
        local = base.edge_local
        # tables for (local edge, flipped)
        ref_pts = np.stack([np.stack([edge_reference_points(i, s), edge_reference_points(i, 1.0 - s)])
                            for i in range(3)])           # (3, 2, ng, 2)
        phi_t = self.ref.eval(ref_pts)                      # (3, 2, ng, nk)
        dphi_t = self.ref.grad(ref_pts)                     # (3, 2, ng, nk, 2)
        flip = np.array([0, 1])[None, :]
        phi = phi_t[local, flip]
        dphi = dphi_t[local, flip]
        nodes = self.nodes[elem]                            # (nEd, 2, nk, 3)
        x, jac, ginv, _, nu_h = _frame(nodes[:, :, None], None, phi, dphi)
        direction = (REF_VERTICES[(np.arange(3) + 1) % 3] - REF_VERTICES)[local]  # (nEd, 2, 2)
        vel = np.einsum("esqdc,esc->esqd", jac, direction)
        speed = np.linalg.norm(vel, axis=-1)
        tangent = vel / speed[..., None]
        conormal = np.cross(tangent, nu_h)
        return EdgeGeometry(elem, local, x, jac, ginv, nu_h, tangent, conormal, speed,
                            speed[:, 0] * q.edge_weights, phi, dphi)

    @cached_property
    def edge_lengths(self):
        """Arc length of each curved interior edge."""
        return self.edges.ds.sum(axis=1)

    def area(self):
        return float(self.elements.dA.sum())

    def lifted_area(self, degree=None):
        """Integral of the area deformation factor, i.e. the area of the exact surface.

        ``delta_h`` is smooth but not polynomial, so by default a rule exact to
        degree ``max(2k+2, 12)`` is used in place of the assembly rule.
        """
        if degree is None:
            degree = max(2 * self.k + 2, 12)
        q = make_quadrature(self.k, degree)
        x, jac, _, sqrt_det, _ = self.map_points(q.points)
        return float((self._delta(x, jac, sqrt_det) * sqrt_det * q.weights).sum())

    def _delta(self, x, jac, sqrt_det):
        _, d, nu, hess = self.surface.geometry(x)
        jl = (projector(nu) - d[..., None, None] * hess) @ jac
        gl = np.swapaxes(jl, -1, -2) @ jl
        return np.sqrt(np.linalg.det(gl)) / sqrt_det

    def area_factor(self):
        """Area deformation ``delta_h`` at the element quadrature points."""
        el = self.elements
        return self._delta(el.x, el.jac, el.sqrt_det)

    def element_frame(self, elem, ref_point):
        """Frame at one reference point of one element.

        Returns ``(x, J, J_pinv, nu_h, dA_weight)`` where ``J_pinv`` is the 2x3
        left pseudo-inverse and ``dA_weight = sqrt(det J^T J)``.
        """
        ref_point = np.asarray(ref_point, dtype=float).reshape(1, 2)
        x, jac, ginv, sqrt_det, nu_h = self.map_points(ref_point, elems=[elem])
        return (x[0, 0], jac[0, 0], (ginv @ np.swapaxes(jac, -1, -2))[0, 0],
                nu_h[0, 0], float(sqrt_det[0, 0]))

    def edge_frame(self, edge, s, side=0):
        """Frame at parameter ``s`` of an interior edge, as seen from ``side`` (0 = +, 1 = -).

        ``s`` runs along the edge in the traversal direction of the ``+`` element.
        Returns ``(x, unit tangent, unit conormal, ds_weight)``.
        """
        elem = int(self.base.edge_elems[edge, side])
        i = int(self.base.edge_local[edge, side])
        param = s if side == 0 else 1.0 - s
        ref_pt = edge_reference_points(i, np.array([param]))
        phi, dphi = self.ref.eval(ref_pt), self.ref.grad(ref_pt)
        x, jac, _, _, nu_h = _frame(self.nodes[elem][None], None, phi, dphi)
        vel = jac[0] @ (REF_VERTICES[(i + 1) % 3] - REF_VERTICES[i])
        speed = float(np.linalg.norm(vel))
        tangent = vel / speed
        return x[0], tangent, np.cross(tangent, nu_h[0]), speed


def build_curved(base, surface, k):
    return CurvedMesh(base, surface, k)


@dataclass(frozen=True)
class GeoDiagnostics:
    """Sup-norms over quadrature points of the geometric error quantities."""

    d: float
    delta_h: float
    nu: float
    p_rh: float
    delta_e: float
    p_re: float
    conormal: float
    conormal_sum: float

    FIELDS = ("d", "delta_h", "nu", "p_rh", "delta_e", "p_re", "conormal")

    def as_dict(self):
        return {name: getattr(self, name) for name in self.FIELDS + ("conormal_sum",)}


def geometric_diagnostics(curved, surface=None):
    """Measure the distance, area, normal, metric and conormal errors of ``curved``."""
    surface = curved.surface if surface is None else surface
    el = curved.elements
    _, d, nu, hess = surface.geometry(el.x)
    p = projector(nu)
    p_h = projector(el.nu_h)
    i_dh = np.eye(3) - d[..., None, None] * hess
    dpi = p - d[..., None, None] * hess
    jl = dpi @ el.jac
    delta_h = np.sqrt(np.linalg.det(np.swapaxes(jl, -1, -2) @ jl)) / el.sqrt_det
    r_h = (p @ i_dh @ p_h @ i_dh @ p) / delta_h[..., None, None]

    ed = curved.edges
    _, de, nue, hesse = surface.geometry(ed.x)
    pe = projector(nue)
    pe_h = projector(ed.nu_h)
    ie_dh = np.eye(3) - de[..., None, None] * hesse
    lifted_t = np.einsum("...ij,...j->...i", pe - de[..., None, None] * hesse, ed.tangent)
    delta_e = np.linalg.norm(lifted_t, axis=-1)
    # R_e acts on tangential gradients of lifted functions, hence the trailing P
    r_e = (pe @ ie_dh @ pe_h @ ie_dh @ pe) / delta_e[..., None, None]
    n_exact = np.cross(lifted_t / delta_e[..., None], nue)
    pn_h = np.einsum("...ij,...j->...i", pe, ed.conormal)

    def spec(a):
        return np.linalg.norm(a, ord=2, axis=(-2, -1))

    def sup(a):
        return float(np.max(a)) if np.size(a) else 0.0

    return GeoDiagnostics(
        d=sup(np.abs(d)),
        delta_h=sup(np.abs(1.0 - delta_h)),
        nu=sup(np.linalg.norm(nu - el.nu_h, axis=-1)),
        p_rh=sup(spec(p - r_h)),
        delta_e=sup(np.abs(1.0 - delta_e)),
        p_re=sup(spec(pe - r_e)),
        conormal=sup(np.linalg.norm(n_exact - pn_h, axis=-1)),
        conormal_sum=sup(np.linalg.norm(ed.conormal[:, 0] + ed.conormal[:, 1], axis=-1)),
    )


def subdivision_lattice(depth):
    """Points and triangles of the uniform ``4**depth`` subdivision of the reference triangle."""
    n = 2 ** depth
    pts = np.array([(a / n, b / n) for b in range(n + 1) for a in range(n + 1 - b)])

    def idx(a, b):
        return b * (n + 1) - b * (b - 1) // 2 + a

    tris = []
    for b in range(n):
        for a in range(n - b):
            tris.append((idx(a, b), idx(a + 1, b), idx(a, b + 1)))
            if a + b < n - 1:
                tris.append((idx(a + 1, b), idx(a + 1, b + 1), idx(a, b + 1)))
    return pts, np.array(tris, dtype=np.int64)


def export_vtk(path, curved, depth=2, values=None, name="u"):
    """Write the curved mesh as legacy ASCII VTK POLYDATA.

    Each element is sampled on a ``4**depth`` triangle subdivision.  ``values``
    are optional degree-k nodal coefficients of shape (nE, nk), exported as the
    point scalar ``name``.
    """
    pts, tris = subdivision_lattice(depth)
    phi = curved.ref.eval(pts)
    xyz = np.einsum("pj,ejd->epd", phi, curved.nodes).reshape(-1, 3)
    npts = len(pts)
    ne = curved.n_elements
    cells = (tris[None] + npts * np.arange(ne)[:, None, None]).reshape(-1, 3)
    lines = ["# vtk DataFile Version 3.0", "surface-dg curved mesh", "ASCII", "DATASET POLYDATA",
             f"POINTS {len(xyz)} double"]
    lines.extend(f"{p[0]:.12g} {p[1]:.12g} {p[2]:.12g}" for p in xyz)
    lines.append(f"POLYGONS {len(cells)} {4 * len(cells)}")
    lines.extend(f"3 {c[0]} {c[1]} {c[2]}" for c in cells)
    if values is not None:
        u = np.einsum("pj,ej->ep", phi, np.asarray(values)).reshape(-1)
        lines.extend([f"POINT_DATA {len(xyz)}", f"SCALARS {name} double 1", "LOOKUP_TABLE default"])
        lines.extend(f"{v:.12g}" for v in u)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return len(cells)
