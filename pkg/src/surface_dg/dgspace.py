"""Broken polynomial spaces on the curved mesh, traces, liftings and DG norms.

Scalar fields live in the space of mapped degree-k polynomials.  Vector
fields live in the mapped space ``J (J^T J)^-1 tau_hat`` with two reference
components per node, which keeps them tangent to the discrete surface.

Edge traces follow the conventions

    [q] = q+ - q-                 {q} = (q+ + q-) / 2
    [phi; n] = phi+.n+ + phi-.n-  {phi; n} = (phi+.n+ - phi-.n-) / 2

with ``n+`` and ``n-`` the (generally not opposite) unit conormals of the two
curved elements sharing the edge.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import SingularMass

__all__ = [
    "DoFMap",
    "DGSpace",
    "DGField",
    "VectorDGField",
    "EdgeTraces",
    "jump",
    "average",
    "normal_jump",
    "normal_average",
    "magic_formula_residual",
    "interpolate",
    "lifting_r",
    "lifting_l",
    "sigma_reconstruct",
    "sigma_residual",
    "dg_norm",
]


@dataclass(frozen=True)
class DoFMap:
    """Contiguous per-element blocks of ``nk`` coefficients."""

    n_elements: int
    nk: int

    @property
    def total_dofs(self):
        return self.n_elements * self.nk

    def block(self, elem):
        return slice(elem * self.nk, (elem + 1) * self.nk)

    def dofs(self, elems):
        """Global dof indices of the given elements, shape (len(elems), nk)."""
        return np.asarray(elems)[..., None] * self.nk + np.arange(self.nk)


def jump(q):
    """``q+ - q-`` for traces stacked on axis 1 (side)."""
    return q[:, 0] - q[:, 1]


def average(q):
    return 0.5 * (q[:, 0] + q[:, 1])


def normal_jump(phi, n):
    """``phi+.n+ + phi-.n-`` for vector traces of shape (nEdge, 2, ..., 3)."""
    dots = np.einsum("es...d,es...d->es...", phi, n)
    return dots[:, 0] + dots[:, 1]


def normal_average(phi, n):
    dots = np.einsum("es...d,es...d->es...", phi, n)
    return 0.5 * (dots[:, 0] - dots[:, 1])


class DGSpace:
    """Discontinuous degree-k space on a :class:`~surface_dg.curved.CurvedMesh`.

    All per-element and per-edge tables used by the assembly are built lazily
    and cached here.
    """

    def __init__(self, curved):
        self.curved = curved
        self.k = curved.k
        self.nk = curved.ref.n
        self.dofmap = DoFMap(curved.n_elements, self.nk)

    @property
    def n_elements(self):
        return self.curved.n_elements

    @property
    def total_dofs(self):
        return self.dofmap.total_dofs

    # element tables ---------------------------------------------------------
    @cached_property
    def mass_blocks(self):
        el = self.curved.elements
        return np.einsum("eq,qi,qj->eij", el.dA, el.phi, el.phi)

    @cached_property
    def stiffness_blocks(self):
        el = self.curved.elements
        g = el.grad_phi
        return np.einsum("eq,eqid,eqjd->eij", el.dA, g, g)

    @cached_property
    def sigma_mass_blocks(self):
        """Mass matrices of the vector space; dof ``(i, c)`` has index ``2 i + c``."""
        el = self.curved.elements
        pp = el.phi[:, :, None] * el.phi[:, None, :]
        m = np.einsum("eqij,eqcd->eicjd", pp[None] * el.dA[:, :, None, None], el.ginv, optimize=True)
        return m.reshape(self.n_elements, 2 * self.nk, 2 * self.nk)

    @cached_property
    def sigma_mass_inv(self):
        try:
            chol = np.linalg.cholesky(self.sigma_mass_blocks)
        except np.linalg.LinAlgError as exc:
            raise SingularMass("vector mass matrix is not positive definite") from exc
        linv = np.linalg.inv(chol)
        return np.swapaxes(linv, -1, -2) @ linv

    # edge tables ------------------------------------------------------------
    @cached_property
    def edge_dofs(self):
        """Dofs of ``(elem+, elem-)`` for every edge, shape (nEdge, 2 nk)."""
        return self.dofmap.dofs(self.curved.base.edge_elems).reshape(-1, 2 * self.nk)

    @cached_property
    def trace_jump(self):
        """Rows map local edge dofs to ``[u]`` at edge points, shape (nEdge, ng, 2 nk)."""
        phi = self.curved.edges.phi
        return np.concatenate([phi[:, 0], -phi[:, 1]], axis=-1)

    @cached_property
    def trace_avg(self):
        """Local edge dofs to ``{u}``."""
        phi = self.curved.edges.phi
        return 0.5 * np.concatenate([phi[:, 0], phi[:, 1]], axis=-1)

    @cached_property
    def trace_grad_n(self):
        """Basis gradient dotted with the own-side conormal, shape (nEdge, 2, ng, nk)."""
        ed = self.curved.edges
        return np.einsum("esqjd,esqd->esqj", ed.grad_phi, ed.conormal)

    @cached_property
    def trace_grad_avg(self):
        """Local edge dofs to ``{grad u; n}``."""
        g = self.trace_grad_n
        return 0.5 * np.concatenate([g[:, 0], -g[:, 1]], axis=-1)

    @cached_property
    def trace_grad_jump(self):
        """Local edge dofs to ``[grad u; n]``."""
        g = self.trace_grad_n
        return np.concatenate([g[:, 0], g[:, 1]], axis=-1)

    @cached_property
    def trace_sigma_n(self):
        """Vector basis dotted with the own-side conormal, shape (nEdge, 2, ng, 2 nk)."""
        ed = self.curved.edges
        a = np.einsum("esqcd,esqkd,esqk->esqc", ed.ginv, ed.jac, ed.conormal)
        t = ed.phi[..., :, None] * a[..., None, :]
        return t.reshape(t.shape[:3] + (2 * self.nk,))

    def lifting_rhs(self, data, kind="r"):
        """Right-hand sides of the lifting problems for edge data sampled at edge points.

        ``data`` has shape (nEdge, ng, ...) with trailing axes kept.  Returns an
        array (nEdge, 2, 2 nk, ...) of the edge functionals on each side element.
        """
        ds = self.curved.edges.ds
        tn = self.trace_sigma_n
        if kind == "r":
            sign = np.array([-0.5, 0.5])
        elif kind == "l":
            sign = np.array([-1.0, -1.0])
        else:
            raise ValueError("kind must be 'r' or 'l'")
        weighted = ds[:, None, :] * sign[None, :, None]
        return np.einsum("esq,esqi,eq...->esi...", weighted, tn, data, optimize=True)

    def lifting_blocks(self, weight=None, kind="r"):
        """Local matrices mapping edge dofs to lifting coefficients on each side.

        Returns (nEdge, 2, 2 nk_sigma, 2 nk) with ``out[e, s] @ u_local`` the
        coefficients of ``r_e([u])`` (``kind='r'``) or ``l_e(weight [u])``
        (``kind='l'``) on element ``edge_elems[e, s]``.
        """
        data = self.trace_jump if weight is None else self.trace_jump * weight[..., None]
        rhs = self.lifting_rhs(data, kind)
        minv = self.sigma_mass_inv[self.curved.base.edge_elems]
        return minv @ rhs

    # fields -------------------------------------------------------------------
    def zeros(self):
        return DGField(self, np.zeros((self.n_elements, self.nk)))

    def field(self, coeffs):
        return DGField(self, np.asarray(coeffs, dtype=float).reshape(self.n_elements, self.nk))

    def vector_zeros(self):
        return VectorDGField(self, np.zeros((self.n_elements, self.nk, 2)))


class DGField:
    """Scalar field of the broken space: nodal coefficients of shape (nE, nk)."""

    def __init__(self, space, coeffs):
        self.space = space
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.shape != (space.n_elements, space.nk):
            raise ValueError("coefficient array has the wrong shape")

    @property
    def vector(self):
        return self.coeffs.reshape(-1)

    def __mul__(self, c):
        return DGField(self.space, self.coeffs * c)

    __rmul__ = __mul__

    def __add__(self, other):
        return DGField(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return DGField(self.space, self.coeffs - other.coeffs)

    def evaluate(self, elem, ref_point):
        phi = self.space.curved.ref.eval(np.asarray(ref_point, dtype=float))
        return float(phi @ self.coeffs[elem])

    def tangential_gradient(self, elem, ref_point):
        """Gradient on the discrete surface, ``J (J^T J)^-1 grad_ref``."""
        curved = self.space.curved
        pt = np.asarray(ref_point, dtype=float).reshape(1, 2)
        _, jac, pinv, _, _ = curved.element_frame(elem, pt[0])
        gref = curved.ref.grad(pt)[0].T @ self.coeffs[elem]
        return pinv.T @ gref

    def at_quad(self):
        return self.coeffs @ self.space.curved.elements.phi.T

    def grad_at_quad(self):
        return np.einsum("eqjd,ej->eqd", self.space.curved.elements.grad_phi, self.coeffs)

    def traces(self):
        sp = self.space
        ed = sp.curved.edges
        c = self.coeffs[ed.elem]
        return EdgeTraces(
            u=np.einsum("esqj,esj->esq", ed.phi, c),
            grad=np.einsum("esqjd,esj->esqd", ed.grad_phi, c),
            conormal=ed.conormal,
            ds=ed.ds,
        )

    def gradient_field(self):
        """The tangential gradient as a :class:`VectorDGField` (exact, degree k-1)."""
        ref = self.space.curved.ref
        g = ref.grad(ref.nodes)                 # (node, basis, comp)
        return VectorDGField(self.space, np.einsum("nic,ei->enc", g, self.coeffs))


class VectorDGField:
    """Tangent vector field: reference components of shape (nE, nk, 2)."""

    def __init__(self, space, coeffs):
        self.space = space
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.shape != (space.n_elements, space.nk, 2):
            raise ValueError("coefficient array has the wrong shape")

    @property
    def vector(self):
        return self.coeffs.reshape(-1)

    def __add__(self, other):
        return VectorDGField(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return VectorDGField(self.space, self.coeffs - other.coeffs)

    def at_quad(self):
        el = self.space.curved.elements
        ref_vals = np.einsum("qj,ejc->eqc", el.phi, self.coeffs)
        return np.einsum("eqdc,eqc->eqd", el.pinv_t, ref_vals)

    def edge_values(self):
        """Values at edge points from both sides, shape (nEdge, 2, ng, 3)."""
        ed = self.space.curved.edges
        ref_vals = np.einsum("esqj,esjc->esqc", ed.phi, self.coeffs[ed.elem])
        return np.einsum("esqdc,esqc->esqd", ed.pinv_t, ref_vals)

    def l2_norm(self):
        v = self.vector.reshape(self.space.n_elements, -1)
        return float(np.sqrt(np.einsum("ei,eij,ej->", v, self.space.sigma_mass_blocks, v)))


@dataclass
class EdgeTraces:
    """Two-sided traces at edge points: ``u`` (nEdge, 2, ng), ``grad`` (nEdge, 2, ng, 3)."""

    u: np.ndarray
    grad: np.ndarray
    conormal: np.ndarray
    ds: np.ndarray

    def jump(self):
        return jump(self.u)

    def average(self):
        return average(self.u)

    def grad_jump(self):
        return normal_jump(self.grad, self.conormal)

    def grad_average(self):
        return normal_average(self.grad, self.conormal)


def interpolate(w, space):
    """Nodal interpolant of a function given on the surface.

    Geometry nodes lie on the surface, so ``w`` is sampled there directly and the
    result is continuous across edges.
    """
    return DGField(space, w(space.curved.nodes))


def _element_boundary_integral(psi, phi):
    """Sum over elements of the boundary integral of ``psi phi.n``, each element on its own."""
    from .curved import REF_VERTICES, edge_reference_points

    curved = psi.space.curved
    ref, quad = curved.ref, curved.quad
    total = 0.0
    scale = 0.0
    for i in range(3):
        pts = edge_reference_points(i, quad.edge_points)
        x, jac, ginv, _, nu_h = curved.map_points(pts)
        vel = jac @ (REF_VERTICES[(i + 1) % 3] - REF_VERTICES[i])
        speed = np.linalg.norm(vel, axis=-1)
        n = np.cross(vel / speed[..., None], nu_h)
        b = ref.eval(pts)
        psi_v = psi.coeffs @ b.T
        phi_v = np.einsum("eqdc,eqc->eqd", jac @ ginv, np.einsum("qj,ejc->eqc", b, phi.coeffs))
        integrand = psi_v * np.einsum("eqd,eqd->eq", phi_v, n) * speed * quad.edge_weights
        total += integrand.sum()
        scale += np.abs(integrand).sum()
    return total, scale


def magic_formula_residual(psi, phi, relative=True):
    """Discrepancy of the broken integration-by-parts identity.

    Compares the sum of element boundary integrals of ``psi phi.n_K`` with the
    edge sum of ``[phi; n]{psi} + {phi; n}[psi]``.
    """
    lhs, scale_l = _element_boundary_integral(psi, phi)
    tr = psi.traces()
    pv = phi.edge_values()
    integrand = (normal_jump(pv, tr.conormal) * average(tr.u)
                 + normal_average(pv, tr.conormal) * jump(tr.u)) * tr.ds
    rhs = integrand.sum()
    res = abs(lhs - rhs)
    if not relative:
        return res
    scale = max(scale_l, np.abs(integrand).sum())
    return res / scale if scale > 0 else res


def _scatter_lifting(space, edge_ids, rhs):
    """Solve the local mass systems for per-edge, per-side functionals and sum into a field."""
    elems = space.curved.base.edge_elems[edge_ids]
    coeffs = np.zeros((space.n_elements, 2 * space.nk))
    local = np.einsum("esij,esj->esi", space.sigma_mass_inv[elems], rhs)
    np.add.at(coeffs, elems.reshape(-1), local.reshape(-1, 2 * space.nk))
    return VectorDGField(space, coeffs.reshape(space.n_elements, space.nk, 2))


def lifting_r(space, edge, data):
    """Lifting ``r_e`` of data sampled at the edge quadrature points.

    ``edge`` is an edge index or array of indices; ``data`` has shape (ng,) or
    (len(edge), ng).  For several edges the sum of their liftings is returned.
    """
    edge = np.atleast_1d(edge)
    data = np.asarray(data, dtype=float).reshape(len(edge), -1)
    full = np.zeros((space.curved.n_edges,) + data.shape[1:])
    np.add.at(full, edge, data)
    rhs = space.lifting_rhs(full, "r")[edge]
    return _scatter_lifting(space, edge, rhs)


def lifting_l(space, edge, data):
    """Lifting ``l_e`` of scalar edge data; see :func:`lifting_r`."""
    edge = np.atleast_1d(edge)
    data = np.asarray(data, dtype=float).reshape(len(edge), -1)
    full = np.zeros((space.curved.n_edges,) + data.shape[1:])
    np.add.at(full, edge, data)
    rhs = space.lifting_rhs(full, "l")[edge]
    return _scatter_lifting(space, edge, rhs)


def flux_differences(u_h, method):
    """Edge samples of ``[u_hat - u_h]`` and ``{u_hat - u_h}`` for a scheme."""
    tr = u_h.traces()
    ju = tr.jump()
    scheme = method.scheme
    if scheme in ("IP", "BassiRebay", "BrezziEtAl", "BassiEtAl"):
        return -ju, np.zeros_like(ju)
    if scheme == "NIPG":
        return ju, np.zeros_like(ju)
    if scheme == "IIPG":
        return np.zeros_like(ju), np.zeros_like(ju)
    if scheme == "LDG":
        bn = method.beta_dot_n(u_h.space)
        return -ju, -bn * ju
    raise ValueError(f"unknown scheme {scheme!r}")


def sigma_reconstruct(u_h, method):
    """Auxiliary gradient of the mixed formulation expressed through ``u_h``.

    ``sigma = grad u_h - r_h([u_hat - u_h]) - l_h({u_hat - u_h})``.
    """
    space = u_h.space
    jump_diff, avg_diff = flux_differences(u_h, method)
    edges = np.arange(space.curved.n_edges)
    sigma = u_h.gradient_field()
    if np.any(jump_diff):
        sigma = sigma - lifting_r(space, edges, jump_diff)
    if np.any(avg_diff):
        sigma = sigma - lifting_l(space, edges, avg_diff)
    return sigma


def sigma_residual(u_h, sigma, method):
    """Largest relative defect of the discrete gradient equation over all vector basis functions."""
    space = u_h.space
    nk2 = 2 * space.nk
    jump_diff, avg_diff = flux_differences(u_h, method)
    m = space.sigma_mass_blocks
    lhs = np.einsum("eij,ej->ei", m, sigma.coeffs.reshape(-1, nk2))
    grad = np.einsum("eij,ej->ei", m, u_h.gradient_field().coeffs.reshape(-1, nk2))
    # edge terms: int [u_hat-u]{tau;n} + {u_hat-u}[tau;n]  = -(r and l functionals)
    edge = -(space.lifting_rhs(jump_diff, "r") + space.lifting_rhs(avg_diff, "l"))
    rhs = grad.copy()
    np.add.at(rhs, space.curved.base.edge_elems.reshape(-1), edge.reshape(-1, nk2))
    scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1e-300)
    return float(np.abs(lhs - rhs).max() / scale)


def stabilization_value(u_h, kind, alpha):
    """``S_h(u_h, u_h)`` for the jump (``S1``) or lifting (``S2``) stabilisation."""
    from .methods import penalty

    space = u_h.space
    tr = u_h.traces()
    ju = tr.jump()
    if kind == "S1":
        _, beta = penalty(alpha, space.k, space.curved.edge_lengths)
        return float(np.sum(beta[:, None] * ju ** 2 * tr.ds))
    if kind == "S2":
        eta, _ = penalty(alpha, space.k, space.curved.edge_lengths)
        rhs = space.lifting_rhs(ju, "r")
        minv = space.sigma_mass_inv[space.curved.base.edge_elems]
        # |r_e|^2 = b^T M^-1 b on each side
        energy = np.einsum("esi,esij,esj->e", rhs, minv, rhs)
        return float(np.sum(eta * energy))
    raise ValueError("stabilisation kind must be 'S1' or 'S2'")


def broken_h1_squared(u_h):
    v = u_h.coeffs
    sp = u_h.space
    return float(np.einsum("ei,eij,ej->", v, sp.mass_blocks + sp.stiffness_blocks, v))


def dg_norm(u_h, stab, alpha, k=None):
    """DG norm: broken H1 norm plus the chosen stabilisation (``'S1'`` or ``'S2'``)."""
    if k is not None and k != u_h.space.k:
        raise ValueError("degree does not match the field's space")
    return float(np.sqrt(broken_h1_squared(u_h) + stabilization_value(u_h, stab, alpha)))
