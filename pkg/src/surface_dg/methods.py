"""Flux schemes and global assembly of the surface DG bilinear forms.

Every scheme shares the volume part ``int grad u . grad v + u v``.  The edge
parts, written with test functions ``v`` and trial functions ``u``:

============  ==============================================================
IP            ``-[u]{grad v;n} - {grad u;n}[v] + beta_e [u][v]``
NIPG          ``+[u]{grad v;n} - {grad u;n}[v] + beta_e [u][v]``
IIPG          ``-{grad u;n}[v] + beta_e [u][v]``
BassiRebay    IP consistency terms ``+ r_h([u]) . r_h([v])``
BrezziEtAl    BassiRebay ``+ eta_e r_e([u]) . r_e([v])``
BassiEtAl     IP consistency terms ``+ eta_e r_e([u]) . r_e([v])``
LDG           IP consistency terms ``- [grad u;n] b [v] - b [u][grad v;n]``
              ``+ beta_e [u][v] + (r_h([u]) + l_h(b [u])) . (r_h([v]) + l_h(b [v]))``
============  ==============================================================

with ``b = beta . n+``.  The NIPG, IIPG and Bassi et al. forms follow from
substituting their numerical fluxes into the primal formulation.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp

from .dgspace import DGSpace

__all__ = [
    "SCHEMES",
    "MethodConfig",
    "LinearSystem",
    "penalty",
    "assemble",
    "stabilization_matrix",
    "export_matrix_market",
    "numerical_fluxes",
]

SCHEMES = ("IP", "NIPG", "IIPG", "LDG", "BassiRebay", "BrezziEtAl", "BassiEtAl")
LDG_SIGNS = ("symmetric", "as_printed")

# schemes whose DG norm uses the lifting stabilisation
_S2_SCHEMES = ("BassiRebay", "BrezziEtAl", "BassiEtAl")


def penalty(alpha, k, h_e):
    """Penalty coefficients ``(eta_e, beta_e) = (alpha, alpha k^2 / h_e)``.

    ``h_e`` may be an array of edge lengths; ``eta_e`` then has the same shape.
    """
    if not alpha > 0:
        raise ValueError("penalty parameter alpha must be positive")
    h_e = np.asarray(h_e, dtype=float)
    if np.any(~(h_e > 0)):
        raise ValueError("edge lengths must be positive")
    eta = np.full_like(h_e, float(alpha))
    beta = alpha * k * k / h_e
    if eta.ndim == 0:
        return float(eta), float(beta)
    return eta, beta


@dataclass(frozen=True)
class MethodConfig:
    """Scheme selection and penalty data.

    Parameters
    ----------
    scheme : one of :data:`SCHEMES`
    alpha : float
        Penalty parameter, ``> 0``.
    beta_vec : array_like, shape (3,) or (nEdge, 3)
        LDG switching vector, constant per edge.  Ignored by other schemes.
    ldg_sign : ``'symmetric'`` or ``'as_printed'``
        Sign of the ``{grad u;n}[v]`` term in the LDG form.
    eta, beta_e : float, optional
        Fixed values overriding the penalty formula (used to compare forms).
    """

    scheme: str = "IP"
    alpha: float = 10.0
    beta_vec: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ldg_sign: str = "symmetric"
    eta: float = None
    beta_e: float = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if not self.alpha > 0:
            raise ValueError("penalty parameter alpha must be positive")
        if self.ldg_sign not in LDG_SIGNS:
            raise ValueError(f"ldg_sign must be one of {LDG_SIGNS}")
        beta = np.array(self.beta_vec, dtype=float)
        if beta.shape[-1:] != (3,) or beta.ndim > 2:
            raise ValueError("beta_vec must have shape (3,) or (n_edges, 3)")
        beta.setflags(write=False)
        object.__setattr__(self, "beta_vec", beta)

    @property
    def symmetric(self):
        if self.scheme in ("NIPG", "IIPG"):
            return False
        if self.scheme == "LDG":
            return self.ldg_sign == "symmetric"
        return True

    @property
    def stabilization(self):
        return "S2" if self.scheme in _S2_SCHEMES else "S1"

    def penalties(self, space):
        """Per-edge ``(eta_e, beta_e)``."""
        eta, beta = penalty(self.alpha, space.k, space.curved.edge_lengths)
        if self.eta is not None:
            eta = np.full_like(eta, float(self.eta))
        if self.beta_e is not None:
            beta = np.full_like(beta, float(self.beta_e))
        return eta, beta

    def beta_dot_n(self, space):
        """``beta . n+`` at the edge points, shape (nEdge, ng)."""
        n_plus = space.curved.edges.conormal[:, 0]
        beta = self.beta_vec
        if beta.ndim == 1:
            return n_plus @ beta
        if len(beta) != len(n_plus):
            raise ValueError("per-edge beta_vec does not match the number of edges")
        return np.einsum("eqd,ed->eq", n_plus, beta)


@dataclass
class LinearSystem:
    """Assembled system ``A x = b`` with ``A`` in block (BSR) form."""

    matrix: sp.bsr_matrix
    rhs: np.ndarray
    symmetric: bool
    space: DGSpace = None
    method: MethodConfig = None

    @property
    def n_dofs(self):
        return self.matrix.shape[0]


def numerical_fluxes(scheme, u, grad, sigma, lift, n, beta_e=1.0, eta=1.0, beta_dot_n=0.0):
    """Trace values ``(u_hat+, u_hat-, sigma_hat+, sigma_hat-)`` of a scheme at edge points.

    Two-sided inputs stack the ``+`` and ``-`` traces on the first axis:
    ``u`` (2, ...); ``grad``, ``sigma``, ``lift`` and ``n`` (2, ..., 3), where
    ``lift`` is the trace of ``r_e([u])``.  ``beta_dot_n`` is ``beta . n+``.
    """
    jmp = u[0] - u[1]
    avg = 0.5 * (u[0] + u[1])

    def avg_n(phi):
        return 0.5 * (np.sum(phi[0] * n[0], -1) - np.sum(phi[1] * n[1], -1))

    def jump_n(phi):
        return np.sum(phi[0] * n[0], -1) + np.sum(phi[1] * n[1], -1)

    if scheme in ("IP", "BassiRebay", "BrezziEtAl", "BassiEtAl"):
        u_hat = (avg, avg)
    elif scheme == "NIPG":
        u_hat = (avg + jmp, avg - jmp)
    elif scheme == "IIPG":
        u_hat = (u[0], u[1])
    elif scheme == "LDG":
        u_hat = (avg - beta_dot_n * jmp,) * 2
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme == "BassiRebay":
        scalar = avg_n(sigma)
    elif scheme == "BrezziEtAl":
        scalar = avg_n(sigma + eta * lift)
    elif scheme == "BassiEtAl":
        scalar = avg_n(grad + eta * lift)
    elif scheme == "LDG":
        scalar = avg_n(sigma) - beta_e * jmp + beta_dot_n * jump_n(sigma)
    else:
        scalar = avg_n(grad) - beta_e * jmp
    scalar = np.asarray(scalar)[..., None]
    return u_hat[0], u_hat[1], scalar * n[0], -scalar * n[1]


def _bsr_from_blocks(rows, cols, blocks, n_blocks):
    """Sum duplicate ``(row, col)`` blocks and build a BSR matrix in sorted order."""
    rows = np.asarray(rows).reshape(-1)
    cols = np.asarray(cols).reshape(-1)
    bs = blocks.shape[-1]
    blocks = blocks.reshape(-1, bs, bs)
    key = rows * n_blocks + cols
    order = np.argsort(key, kind="stable")
    key = key[order]
    start = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    data = np.add.reduceat(blocks[order], start, axis=0)
    uk = key[start]
    urow, ucol = uk // n_blocks, uk % n_blocks
    indptr = np.searchsorted(urow, np.arange(n_blocks + 1))
    return sp.bsr_matrix((data, ucol, indptr), shape=(n_blocks * bs, n_blocks * bs))


def _edge_pairs(space, local):
    """Split (nEdge, 2nk, 2nk) edge matrices into four nk-blocks with element indices."""
    nk = space.nk
    ee = space.curved.base.edge_elems
    blocks = local.reshape(-1, 2, nk, 2, nk).transpose(0, 1, 3, 2, 4)
    rows = np.repeat(ee[:, :, None], 2, axis=2)
    cols = np.repeat(ee[:, None, :], 2, axis=1)
    return rows, cols, blocks


def _edge_matrix(space, method):
    """Edge-local part of the bilinear form, shape (nEdge, 2nk, 2nk)."""
    scheme = method.scheme
    ds = space.curved.edges.ds
    jmp, avg = space.trace_jump, space.trace_grad_avg
    eta, beta = method.penalties(space)
    # cross[i, j] = int [phi_i] {grad phi_j; n}: row = jump of v, column = flux of u
    cross = np.einsum("eq,eqi,eqj->eij", ds, jmp, avg)
    cross_t = np.swapaxes(cross, 1, 2)
    jj = np.einsum("eq,eqi,eqj->eij", ds, jmp, jmp)
    if scheme in ("IP", "BassiRebay", "BrezziEtAl", "BassiEtAl"):
        local = -cross - cross_t
    elif scheme == "NIPG":
        local = -cross + cross_t
    elif scheme == "IIPG":
        local = -cross
    else:
        local = -cross - cross_t if method.ldg_sign == "symmetric" else cross - cross_t
    if scheme in ("IP", "NIPG", "IIPG", "LDG"):
        local = local + beta[:, None, None] * jj
    if scheme == "LDG":
        bn = method.beta_dot_n(space)
        if np.any(bn):
            sm = np.einsum("eq,eqi,eqj->eij", ds * bn, jmp, space.trace_grad_jump)
            local = local - sm - np.swapaxes(sm, 1, 2)
    if scheme in ("BrezziEtAl", "BassiEtAl"):
        local = local + eta[:, None, None] * _lifting_gram(space)
    return local


def _lifting_gram(space):
    """``sum_s F_s^T M^-1 F_s``: the Gram matrix of ``r_e`` on the edge dofs."""
    rhs = space.lifting_rhs(space.trace_jump, "r")              # (nEdge, 2, 2nkS, 2nk)
    minv = space.sigma_mass_inv[space.curved.base.edge_elems]
    return (np.swapaxes(rhs, -1, -2) @ minv @ rhs).sum(axis=1)


def _neighbours(space):
    """Neighbour element across each local edge, shape (nE, 3); ``-1`` on a boundary."""
    base = space.curved.base
    nb = np.full((base.n_elements, 3), -1, dtype=np.int64)
    ee, el = base.edge_elems, base.edge_local
    nb[ee[:, 0], el[:, 0]] = ee[:, 1]
    nb[ee[:, 1], el[:, 1]] = ee[:, 0]
    return nb


def _global_lifting_blocks(space, method):
    """Element contributions ``L_K^T M_K^-1 L_K`` of ``r_h (+ l_h)`` products.

    ``L_K`` maps the dofs of ``K`` and its three neighbours to the functional
    of ``r_h([u])`` (plus ``l_h(b [u])`` for LDG) on ``K``.
    """
    nk, nk2 = space.nk, 2 * space.nk
    ne = space.n_elements
    base = space.curved.base
    data = space.trace_jump
    func = space.lifting_rhs(data, "r")
    if method.scheme == "LDG":
        bn = method.beta_dot_n(space)
        if np.any(bn):
            func = func + space.lifting_rhs(data * bn[..., None], "l")
    func = func.reshape(func.shape[:3] + (2, nk))               # (nEdge, side, 2nkS, side', nk)
    lk = np.zeros((ne, nk2, 4, nk))
    ee, el = base.edge_elems, base.edge_local
    for s in range(2):
        elems, loc = ee[:, s], el[:, s]
        np.add.at(lk, (elems, slice(None), 0), func[:, s, :, s])
        lk[elems, :, 1 + loc] = func[:, s, :, 1 - s]
    lk = lk.reshape(ne, nk2, 4 * nk)
    gram = np.swapaxes(lk, 1, 2) @ space.sigma_mass_inv @ lk    # (nE, 4nk, 4nk)
    ids = np.concatenate([np.arange(ne)[:, None], _neighbours(space)], axis=1)
    blocks = gram.reshape(ne, 4, nk, 4, nk).transpose(0, 1, 3, 2, 4)
    rows = np.repeat(ids[:, :, None], 4, axis=2)
    cols = np.repeat(ids[:, None, :], 4, axis=1)
    # boundary slots carry zero blocks
    keep = (rows >= 0) & (cols >= 0)
    return rows[keep], cols[keep], blocks[keep]


def _as_space(space_or_curved):
    return space_or_curved if isinstance(space_or_curved, DGSpace) else DGSpace(space_or_curved)


def load_vector(space, f):
    """``b_i = int f(pi(x)) phi_i dA_hk`` for ``f`` given on the surface."""
    el = space.curved.elements
    xi = space.curved.surface.closest_point(el.x)
    fq = np.asarray(f(xi), dtype=float)
    return np.einsum("eq,eq,qi->ei", el.dA, fq, el.phi).reshape(-1)


def assemble(method, space, f=None):
    """Assemble the matrix of ``method`` on ``space`` (or a curved mesh) and the load vector.

    Parameters
    ----------
    method : MethodConfig
    space : DGSpace or CurvedMesh
    f : callable, optional
        Right-hand side on the surface, mapping points (..., 3) to values (...).
        Sampled at the closest points of the quadrature nodes.

    Returns
    -------
    LinearSystem
    """
    space = _as_space(space)
    ne = space.n_elements
    diag = np.arange(ne)
    rows = [diag]
    cols = [diag]
    blocks = [space.mass_blocks + space.stiffness_blocks]
    er, ec, eb = _edge_pairs(space, _edge_matrix(space, method))
    rows.append(er)
    cols.append(ec)
    blocks.append(eb)
    if method.scheme in ("BassiRebay", "BrezziEtAl", "LDG"):
        gr, gc, gb = _global_lifting_blocks(space, method)
        rows.append(gr)
        cols.append(gc)
        blocks.append(gb)
    nk = space.nk
    matrix = _bsr_from_blocks(np.concatenate([r.reshape(-1) for r in rows]),
                              np.concatenate([c.reshape(-1) for c in cols]),
                              np.concatenate([b.reshape(-1, nk, nk) for b in blocks]), ne)
    rhs = np.zeros(space.total_dofs) if f is None else load_vector(space, f)
    return LinearSystem(matrix, rhs, method.symmetric, space, method)


def stabilization_matrix(kind, space, alpha=10.0, eta=None, beta_e=None):
    """Matrix of the jump (``'S1'``) or lifting (``'S2'``) stabilisation."""
    space = _as_space(space)
    e, b = penalty(alpha, space.k, space.curved.edge_lengths)
    if kind == "S1":
        if beta_e is not None:
            b = np.full_like(b, float(beta_e))
        ds, jmp = space.curved.edges.ds, space.trace_jump
        local = np.einsum("e,eq,eqi,eqj->eij", b, ds, jmp, jmp)
    elif kind == "S2":
        if eta is not None:
            e = np.full_like(e, float(eta))
        local = e[:, None, None] * _lifting_gram(space)
    else:
        raise ValueError("stabilisation kind must be 'S1' or 'S2'")
    rows, cols, blocks = _edge_pairs(space, local)
    return _bsr_from_blocks(rows, cols, blocks, space.n_elements)


def export_matrix_market(path, system_or_matrix, comment=""):
    """Write a matrix in MatrixMarket coordinate format."""
    matrix = getattr(system_or_matrix, "matrix", system_or_matrix)
    scipy.io.mmwrite(path, sp.coo_matrix(matrix), comment=comment)
