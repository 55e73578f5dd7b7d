import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from surface_dg import (SCHEMES, CurvedMesh, DGSpace, MethodConfig, assemble, icosphere,
                        interpolate, penalty, stabilization_matrix)
from surface_dg.methods import export_matrix_market, load_vector, numerical_fluxes

from conftest import two_element_patch

SYMMETRIC = ("IP", "BassiRebay", "BrezziEtAl", "BassiEtAl", "LDG")
BETA = np.array([0.4, -0.3, 0.25])


def dense(system):
    return system.matrix.toarray()


@pytest.fixture(scope="module")
def level0_spaces(sphere):
    return {k: DGSpace(CurvedMesh(icosphere(sphere, 0), sphere, k)) for k in (1, 2, 3)}


# penalty -------------------------------------------------------------------------
def test_penalty_example():
    assert penalty(10.0, 2, 0.5) == (10.0, 80.0)


def test_penalty_scales_with_h():
    assert penalty(10.0, 1, 0.25)[1] == 2 * penalty(10.0, 1, 0.5)[1]
    eta, beta = penalty(3.0, 2, np.array([0.5, 1.0]))
    np.testing.assert_array_equal(eta, [3.0, 3.0])
    np.testing.assert_array_equal(beta, [24.0, 12.0])


@pytest.mark.parametrize("alpha, h", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -2.0)])
def test_penalty_rejects_nonpositive(alpha, h):
    with pytest.raises(ValueError):
        penalty(alpha, 1, h)


def test_method_config_validation():
    with pytest.raises(ValueError, match="unknown scheme"):
        MethodConfig("SIPG")
    with pytest.raises(ValueError):
        MethodConfig("IP", alpha=0.0)
    with pytest.raises(ValueError):
        MethodConfig("LDG", ldg_sign="flipped")
    with pytest.raises(ValueError):
        MethodConfig("LDG", beta_vec=[1.0, 2.0])
    assert MethodConfig().scheme == "IP" and MethodConfig().alpha == 10.0
    assert MethodConfig("LDG", ldg_sign="as_printed").symmetric is False
    assert {s for s in SCHEMES if MethodConfig(s).symmetric} == set(SYMMETRIC)


def test_per_edge_beta_length_checked(level0_spaces):
    space = level0_spaces[1]
    method = MethodConfig("LDG", beta_vec=np.ones((3, 3)))
    with pytest.raises(ValueError):
        method.beta_dot_n(space)


# structure -----------------------------------------------------------------------
@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("scheme", SCHEMES)
def test_symmetry(sphere_spaces, scheme, k):
    method = MethodConfig(scheme, beta_vec=BETA)
    a = assemble(method, sphere_spaces[k]).matrix
    asym = abs(a - a.T).max() / abs(a).max()
    if method.symmetric:
        assert asym < 1e-12
    else:
        assert asym > 1e-3


def test_ldg_as_printed_is_not_symmetric(sphere_spaces):
    a = assemble(MethodConfig("LDG", ldg_sign="as_printed"), sphere_spaces[1]).matrix
    assert abs(a - a.T).max() / abs(a).max() > 1e-3


@pytest.mark.parametrize("k", [1, 2, 3])
def test_brezzi_without_eta_is_bassi_rebay(sphere_spaces, patch_sphere, sphere, k):
    for space in (sphere_spaces[k], DGSpace(CurvedMesh(patch_sphere, sphere, k))):
        br = assemble(MethodConfig("BassiRebay"), space).matrix
        brezzi = assemble(MethodConfig("BrezziEtAl", eta=0.0), space).matrix
        assert abs(br - brezzi).max() <= 1e-12 * abs(br).max()


@pytest.mark.parametrize("k", [1, 2, 3])
def test_ldg_without_penalties_is_bassi_rebay(sphere_spaces, patch_sphere, sphere, k):
    for space in (sphere_spaces[k], DGSpace(CurvedMesh(patch_sphere, sphere, k))):
        br = assemble(MethodConfig("BassiRebay"), space).matrix
        ldg = assemble(MethodConfig("LDG", beta_e=0.0), space).matrix
        assert abs(br - ldg).max() <= 1e-12 * abs(br).max()


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("scheme", SCHEMES)
def test_random_vector_coercivity(sphere_spaces, scheme, k):
    a = assemble(MethodConfig(scheme, alpha=10.0, beta_vec=BETA), sphere_spaces[k]).matrix
    v = np.random.default_rng(k).standard_normal((100, a.shape[0]))
    assert np.min(np.einsum("ni,ni->n", v, (a @ v.T).T)) > 0


@pytest.mark.parametrize("scheme", SCHEMES)
def test_symmetric_part_positive_definite(level0_spaces, scheme):
    a = dense(assemble(MethodConfig(scheme, beta_vec=BETA), level0_spaces[2]))
    assert np.linalg.eigvalsh(0.5 * (a + a.T)).min() > 0


def block_pattern(matrix, nk):
    coo = sp.coo_matrix(matrix)
    return set(zip((coo.row // nk).tolist(), (coo.col // nk).tolist()))


@pytest.mark.parametrize("scheme", SCHEMES)
def test_sparsity_pattern(sphere_spaces, scheme):
    space = sphere_spaces[1]
    a = assemble(MethodConfig(scheme, beta_vec=BETA), space).matrix
    assert isinstance(a, sp.bsr_matrix) and a.blocksize == (space.nk, space.nk)
    ee = space.curved.base.edge_elems
    adjacent = {(i, i) for i in range(space.n_elements)}
    adjacent |= {(int(a_), int(b_)) for a_, b_ in ee} | {(int(b_), int(a_)) for a_, b_ in ee}
    nbrs = {i: set() for i in range(space.n_elements)}
    for a_, b_ in ee:
        nbrs[int(a_)].add(int(b_))
        nbrs[int(b_)].add(int(a_))
    second = {(i, j) for m in nbrs for i in nbrs[m] for j in nbrs[m]}
    pattern = block_pattern(a, space.nk)
    if scheme in ("BassiRebay", "BrezziEtAl", "LDG"):
        assert pattern <= adjacent | second
        assert pattern - adjacent
    else:
        assert pattern <= adjacent


def test_assembly_deterministic(sphere_spaces):
    method = MethodConfig("LDG", beta_vec=BETA)
    a = assemble(method, sphere_spaces[2]).matrix
    b = assemble(method, sphere_spaces[2]).matrix
    assert np.array_equal(a.data, b.data) and np.array_equal(a.indices, b.indices)


def test_assemble_accepts_curved_mesh(sphere):
    curved = CurvedMesh(icosphere(sphere, 0), sphere, 1)
    system = assemble(MethodConfig(), curved, lambda x: x[..., 0])
    assert system.n_dofs == 60 and system.symmetric


def test_load_vector_of_one_is_discrete_area(sphere_spaces):
    for space in sphere_spaces.values():
        b = load_vector(space, lambda x: np.ones(x.shape[:-1]))
        assert b.sum() == pytest.approx(space.curved.area(), rel=1e-13)


# stabilisation -------------------------------------------------------------------
@pytest.mark.parametrize("k", [1, 2, 3])
def test_s1_unit_jump_on_two_elements(patch_sphere, sphere, k):
    space = DGSpace(CurvedMesh(patch_sphere, sphere, k))
    v = np.zeros(space.total_dofs)
    v[:space.nk] = 1.0
    s = stabilization_matrix("S1", space, alpha=10.0)
    # beta |e| with beta = alpha k^2 / |e|
    assert v @ (s @ v) == pytest.approx(10.0 * k * k, rel=1e-12)
    s_fixed = stabilization_matrix("S1", space, beta_e=3.0)
    assert v @ (s_fixed @ v) == pytest.approx(3.0 * space.curved.edge_lengths[0], rel=1e-12)


@pytest.mark.parametrize("kind", ["S1", "S2"])
@pytest.mark.parametrize("k", [1, 2])
def test_stabilization_psd_with_continuous_kernel(level0_spaces, kind, k):
    space = level0_spaces[k]
    s = stabilization_matrix(kind, space).toarray()
    np.testing.assert_allclose(s, s.T, atol=1e-13 * np.abs(s).max())
    assert np.linalg.eigvalsh(s).min() >= -1e-12 * np.abs(s).max()
    v = interpolate(lambda x: np.exp(x[..., 0]) * x[..., 1], space).vector
    # zero up to cancellation in the quadratic form
    assert abs(v @ s @ v) <= 1e-13 * np.abs(s).max() * (v @ v)


def test_stabilization_kind_checked(level0_spaces):
    with pytest.raises(ValueError):
        stabilization_matrix("S3", level0_spaces[1])


def test_s2_is_lifting_energy(level0_spaces):
    from surface_dg.dgspace import stabilization_value
    space = level0_spaces[2]
    u = space.field(np.random.default_rng(3).standard_normal((space.n_elements, space.nk)))
    s = stabilization_matrix("S2", space, alpha=7.0)
    assert u.vector @ (s @ u.vector) == pytest.approx(stabilization_value(u, "S2", 7.0), rel=1e-12)
    s1 = stabilization_matrix("S1", space, alpha=7.0)
    assert u.vector @ (s1 @ u.vector) == pytest.approx(stabilization_value(u, "S1", 7.0),
                                                       rel=1e-12)


# flux table ----------------------------------------------------------------------
vals = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(arrays(float, (2, 4), elements=vals), arrays(float, (3, 2, 4, 3), elements=vals),
       arrays(float, (2, 4, 3), elements=st.floats(-1, 1, allow_nan=False)),
       st.floats(0.1, 10), st.floats(0.1, 10), st.floats(-1, 1))
def test_flux_table(u, vecs, n_raw, beta_e, eta, bn):
    norms = np.linalg.norm(n_raw, axis=-1, keepdims=True)
    n = np.where(norms > 1e-3, n_raw / np.maximum(norms, 1e-3), [1.0, 0.0, 0.0])
    grad, sigma, lift = vecs
    jmp = u[0] - u[1]
    for scheme in SCHEMES:
        up, um, sp_, sm_ = numerical_fluxes(scheme, u, grad, sigma, lift, n, beta_e, eta, bn)
        # [sigma_hat; n] vanishes for every scheme
        flux_jump = np.sum(sp_ * n[0], -1) + np.sum(sm_ * n[1], -1)
        np.testing.assert_allclose(flux_jump, 0.0, atol=1e-12)
        if scheme == "NIPG":
            np.testing.assert_allclose(up - um, 2 * jmp, atol=1e-12)
        elif scheme == "IIPG":
            np.testing.assert_allclose(up - um, jmp, atol=1e-12)
        else:
            np.testing.assert_array_equal(up, um)


def test_flux_values_bassi_rebay_and_ip():
    u = np.array([[1.0], [0.0]])
    n = np.array([[[1.0, 0, 0]], [[-1.0, 0, 0]]])
    grad = np.array([[[2.0, 0, 0]], [[4.0, 0, 0]]])
    zeros = np.zeros_like(grad)
    up, um, sp_, _ = numerical_fluxes("IP", u, grad, zeros, zeros, n, beta_e=5.0)
    assert up[0] == um[0] == 0.5
    # {grad; n} - beta [u] = 3 - 5
    np.testing.assert_allclose(sp_[0], [-2.0, 0, 0])
    with pytest.raises(ValueError):
        numerical_fluxes("XX", u, grad, zeros, zeros, n)


# flat-limit oracle ---------------------------------------------------------------
class PlanarDG:
    """Classical planar DG forms on two coplanar triangles sharing one edge.

    Lagrange bases are built from monomials in the physical coordinates and
    integrated with a collapsed Gauss rule, independently of the library.
    """

    def __init__(self, nodes, corners, edge_pts, k, alpha, beta_vec, eta=None):
        self.k = k
        self.nk = nodes.shape[1]
        self.nodes = nodes[..., :2]
        self.corners = corners[..., :2]
        self.alpha = alpha
        self.powers = [(p, q) for p in range(k + 1) for q in range(k + 1 - p)]
        self.coef = [np.linalg.inv(self.mono(nd)) for nd in self.nodes]
        a, b = edge_pts
        self.edge = (a[:2], b[:2])
        self.length = np.linalg.norm(b - a)
        t = (b - a)[:2] / self.length
        c0 = self.corners[0].mean(0)
        n = np.array([t[1], -t[0]])
        self.n = n if n @ (a[:2] - c0) > 0 else -n
        self.beta_n = float(np.r_[self.n, 0.0] @ beta_vec)
        self.beta_e = alpha * k * k / self.length
        self.eta = alpha if eta is None else eta

    def mono(self, x):
        return np.stack([x[..., 0] ** p * x[..., 1] ** q for p, q in self.powers], -1)

    def mono_grad(self, x):
        gx = [p * x[..., 0] ** max(p - 1, 0) * x[..., 1] ** q if p else 0 * x[..., 0]
              for p, q in self.powers]
        gy = [q * x[..., 0] ** p * x[..., 1] ** max(q - 1, 0) if q else 0 * x[..., 0]
              for p, q in self.powers]
        return np.stack([np.stack(gx, -1), np.stack(gy, -1)], -1)

    def basis(self, e, x):
        return self.mono(x) @ self.coef[e], np.einsum("...mc,mj->...jc", self.mono_grad(x),
                                                      self.coef[e])

    def element_rule(self, e, n=8):
        g, w = np.polynomial.legendre.leggauss(n)
        g, w = 0.5 * (g + 1), 0.5 * w
        u, v = np.meshgrid(g, g, indexing="ij")
        wu, wv = np.meshgrid(w, w, indexing="ij")
        s, t = u.ravel(), (v * (1 - u)).ravel()
        wt = (wu * wv * (1 - u)).ravel()
        a, b, c = self.corners[e]
        jac = abs((b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0])
        return a + s[:, None] * (b - a) + t[:, None] * (c - a), wt * jac

    def edge_rule(self, n=8):
        g, w = np.polynomial.legendre.leggauss(n)
        s = 0.5 * (g + 1)
        a, b = self.edge
        return a + s[:, None] * (b - a), 0.5 * w * self.length

    def volume(self):
        out = np.zeros((2 * self.nk, 2 * self.nk))
        for e in range(2):
            x, w = self.element_rule(e)
            phi, dphi = self.basis(e, x)
            blk = np.einsum("q,qi,qj->ij", w, phi, phi) + np.einsum("q,qic,qjc->ij", w, dphi, dphi)
            out[e * self.nk:(e + 1) * self.nk, e * self.nk:(e + 1) * self.nk] = blk
        return out

    def edge_traces(self):
        x, w = self.edge_rule()
        (p0, g0), (p1, g1) = self.basis(0, x), self.basis(1, x)
        z = np.zeros_like(p0)
        jump = np.concatenate([p0, -p1], 1)
        avg = 0.5 * np.concatenate([p0, p1], 1)
        gn0, gn1 = g0 @ self.n, g1 @ self.n
        grad_avg = 0.5 * np.concatenate([gn0, gn1], 1)
        grad_jump = np.concatenate([gn0, -gn1], 1)
        return x, w, jump, avg, grad_avg, grad_jump, (p0, p1, z)

    def lifting(self, weight_avg):
        """Matrix mapping dofs to vector P_k coefficients of r([u]) (or l(b[u]) if False)."""
        x, w, jump, *_ = self.edge_traces()
        mats = []
        for e in range(2):
            xe, we = self.element_rule(e)
            phi, _ = self.basis(e, xe)
            m = np.kron(np.einsum("q,qi,qj->ij", we, phi, phi), np.eye(2))
            pe, _ = self.basis(e, x)
            # r: int r . tau = -int [u] {tau} . n ; l: int l . tau = -int b [u] [tau] . n
            tn = np.einsum("qi,c->qic", pe, self.n).reshape(len(x), -1)
            if weight_avg:
                tn, coef = 0.5 * tn, 1.0
            else:
                tn, coef = (tn if e == 0 else -tn), self.beta_n
            rhs = -np.einsum("q,qa,qj->aj", w, tn, coef * jump)
            mats.append((m, np.linalg.solve(m, rhs)))
        return mats

    def lifting_gram(self, mats_a, mats_b=None):
        mats_b = mats_a if mats_b is None else mats_b
        return sum(la.T @ m @ lb for (m, la), (_, lb) in zip(mats_a, mats_b))

    def matrix(self, scheme):
        x, w, jump, avg, grad_avg, grad_jump, _ = self.edge_traces()
        cross = np.einsum("q,qi,qj->ij", w, jump, grad_avg)
        jj = np.einsum("q,qi,qj->ij", w, jump, jump)
        a = self.volume()
        if scheme == "NIPG":
            return a - cross + cross.T + self.beta_e * jj
        if scheme == "IIPG":
            return a - cross + self.beta_e * jj
        a = a - cross - cross.T
        r = self.lifting(True)
        if scheme == "IP":
            return a + self.beta_e * jj
        if scheme == "BassiRebay":
            return a + self.lifting_gram(r)
        if scheme == "BrezziEtAl":
            return a + (1 + self.eta) * self.lifting_gram(r)
        if scheme == "BassiEtAl":
            return a + self.eta * self.lifting_gram(r)
        if scheme == "LDG":
            l_ = self.lifting(False)
            rl = [(m, lr + ll) for (m, lr), (_, ll) in zip(r, l_)]
            sm = self.beta_n * np.einsum("q,qi,qj->ij", w, jump, grad_jump)
            return a + self.beta_e * jj - sm - sm.T + self.lifting_gram(rl)
        raise ValueError(scheme)


@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("scheme", SCHEMES)
def test_flat_limit_matches_planar_forms(plane, scheme, k):
    mesh = two_element_patch(None, flat=True)
    space = DGSpace(CurvedMesh(mesh, plane, k))
    beta_vec = np.array([0.3, -0.7, 0.0])
    got = dense(assemble(MethodConfig(scheme, alpha=5.0, beta_vec=beta_vec), space))
    ev = mesh.edge_verts[0]
    ref = PlanarDG(space.curved.nodes, mesh.corners(), mesh.vertices[ev], k, 5.0, beta_vec)
    expected = ref.matrix(scheme)
    np.testing.assert_allclose(got, expected, atol=1e-11 * np.abs(expected).max())


# export --------------------------------------------------------------------------
def test_matrix_market_roundtrip(tmp_path, level0_spaces):
    system = assemble(MethodConfig("NIPG"), level0_spaces[2])
    path = tmp_path / "a.mtx"
    export_matrix_market(path, system)
    back = scipy.io.mmread(path)
    np.testing.assert_allclose(back.toarray(), dense(system), rtol=1e-15, atol=1e-300)
    assert path.read_text().startswith("%%MatrixMarket matrix coordinate real")
