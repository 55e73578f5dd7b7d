"""Acceptance criteria 1-7; each test prints one PASS/FAIL line at the stated tolerances."""
import numpy as np
import pytest

from surface_dg import (SCHEMES, CurvedMesh, DGSpace, MethodConfig, Sphere, Torus, assemble,
                        convergence_study, geometry_study, icosphere)
from surface_dg.analysis import dg_norm, lifted_dg_norm
from surface_dg.dgspace import (VectorDGField, lifting_l, lifting_r, magic_formula_residual,
                                normal_average, normal_jump, sigma_reconstruct, sigma_residual)
from surface_dg.manufactured import REGISTRY, oracle_check

from conftest import two_element_patch

OPTIMAL = ("IP", "BassiRebay", "BrezziEtAl", "BassiEtAl", "LDG")


@pytest.fixture
def report(capsys):
    def emit(criterion, failures, summary):
        status = "PASS" if not failures else "FAIL"
        with capsys.disabled():
            print(f"\n[criterion {criterion}] {status}: {summary}")
            for line in failures:
                print(f"    {line}")
        assert not failures, "; ".join(failures)
    return emit


@pytest.fixture(scope="module")
def unit_sphere():
    return Sphere(1.0)


@pytest.fixture(scope="module")
def level1_spaces(unit_sphere):
    return {k: DGSpace(CurvedMesh(icosphere(unit_sphere, 1), unit_sphere, k)) for k in (1, 2, 3)}


def test_criterion_1_optimal_rates(unit_sphere, report):
    failures, worst = [], []
    for scheme in OPTIMAL:
        for k in (1, 2, 3):
            rep = convergence_study(unit_sphere, MethodConfig(scheme, alpha=10.0), k, 4,
                                    "sphere_x1x2", base_level=1)
            l2, dg = rep.l2_eoc[-1], rep.dg_eoc[-1]
            worst.append(f"{scheme}/k={k}: L2 {l2:.2f} DG {dg:.2f}")
            if not k + 0.7 <= l2 <= k + 1.3:
                failures.append(f"{scheme} k={k}: final L2 EOC {l2:.3f} outside [{k + 0.7}, {k + 1.3}]")
            if not k - 0.3 <= dg <= k + 0.3:
                failures.append(f"{scheme} k={k}: final DG EOC {dg:.3f} outside [{k - 0.3}, {k + 0.3}]")
    report(1, failures, "sphere x1x2 levels 1-4; " + ", ".join(worst))


def test_criterion_2_suboptimal_rates(unit_sphere, report):
    failures, seen = [], []
    for scheme in ("NIPG", "IIPG"):
        for k in (1, 2):
            rep = convergence_study(unit_sphere, MethodConfig(scheme, alpha=10.0), k, 4,
                                    "sphere_x1x2", base_level=1)
            l2, dg = rep.l2_eoc[-1], rep.dg_eoc[-1]
            seen.append(f"{scheme}/k={k}: L2 {l2:.2f} DG {dg:.2f}")
            if not k - 0.3 <= dg <= k + 0.3:
                failures.append(f"{scheme} k={k}: final DG EOC {dg:.3f} outside [{k - 0.3}, {k + 0.3}]")
            if not l2 >= k - 0.3:
                failures.append(f"{scheme} k={k}: final L2 EOC {l2:.3f} < {k - 0.3}")
    report(2, failures, ", ".join(seen))


def test_criterion_3_geometric_estimates(report):
    failures, lowest = [], {}
    for surface in (Sphere(1.0), Torus(2.0, 0.5)):
        for k in (1, 2, 3):
            orders = geometry_study(surface, k, 4, base_level=1).final_orders()
            for name, order in orders.items():
                need = k - 0.3 if name == "nu" else k + 1 - 0.3
                lowest[name] = min(lowest.get(name, np.inf), order - (need + 0.3))
                if not order >= need:
                    failures.append(f"{surface.kind} k={k}: {name} order {order:.3f} < {need:.1f}")
    margins = ", ".join(f"{n} {v:+.2f}" for n, v in lowest.items())
    report(3, failures, f"sphere+torus k=1..3, 4 levels; min order minus nominal: {margins}")


def _basis_vector(space, elem, j):
    c = np.zeros((space.n_elements, space.nk, 2))
    c[elem, j // 2, j % 2] = 1.0
    return VectorDGField(space, c)


def _lifting_identity_defect(space, kind, edge, rng):
    ed = space.curved.edges
    data = rng.standard_normal(len(ed.ds[edge]))
    lift = (lifting_r if kind == "r" else lifting_l)(space, edge, data)
    lq = lift.at_quad()
    dA = space.curved.elements.dA
    worst = 0.0
    for elem in space.curved.base.edge_elems[edge]:
        for j in range(2 * space.nk):
            tau = _basis_vector(space, elem, j)
            tv = tau.edge_values()[edge:edge + 1]
            n = ed.conormal[edge:edge + 1]
            weight = (normal_average if kind == "r" else normal_jump)(tv, n)[0]
            expected = -np.sum(data * weight * ed.ds[edge])
            got = np.sum(np.einsum("qd,qd->q", lq[elem], tau.at_quad()[elem]) * dA[elem])
            worst = max(worst, abs(got - expected) / max(abs(expected), 1.0))
    return worst


def test_criterion_4_identities(unit_sphere, level1_spaces, report):
    rng = np.random.default_rng(2024)
    magic = 0.0
    for i in range(50):
        space = level1_spaces[1 + i % 3]
        psi = space.field(rng.standard_normal((space.n_elements, space.nk)))
        phi = VectorDGField(space, rng.standard_normal((space.n_elements, space.nk, 2)))
        magic = max(magic, magic_formula_residual(psi, phi))
    lift = 0.0
    for k, space in level1_spaces.items():
        for kind in ("r", "l"):
            for edge in rng.choice(space.curved.n_edges, 3, replace=False):
                lift = max(lift, _lifting_identity_defect(space, kind, int(edge), rng))
    sigma = 0.0
    for surface, flat in ((unit_sphere, False), (None, True)):
        mesh = two_element_patch(surface, flat=flat)
        geo = unit_sphere if not flat else _flat_plane()
        for k in (1, 2, 3):
            space = DGSpace(CurvedMesh(mesh, geo, k))
            u = space.field(rng.standard_normal((space.n_elements, space.nk)))
            for scheme in SCHEMES:
                method = MethodConfig(scheme, beta_vec=[0.4, 0.1, -0.3])
                sigma = max(sigma, sigma_residual(u, sigma_reconstruct(u, method), method))
    failures = [f"{name} defect {v:.2e} >= 1e-10"
                for name, v in (("integration by parts", magic), ("lifting", lift),
                                ("sigma reconstruction", sigma)) if not v < 1e-10]
    report(4, failures, f"integration by parts {magic:.1e} (50 pairs), lifting {lift:.1e}, "
                        f"sigma {sigma:.1e}")


def _flat_plane():
    from conftest import _plane
    return _plane()


def test_criterion_5_structure(unit_sphere, level1_spaces, report):
    failures = []
    asym_worst, coerc_min, equiv_worst = 0.0, np.inf, 0.0
    beta = [0.3, -0.2, 0.1]
    patch = DGSpace(CurvedMesh(two_element_patch(unit_sphere), unit_sphere, 2))
    for k, space in level1_spaces.items():
        rng = np.random.default_rng(k)
        for scheme in SCHEMES:
            a = assemble(MethodConfig(scheme, alpha=10.0, beta_vec=beta), space).matrix
            if scheme in OPTIMAL:
                asym = abs(a - a.T).max() / abs(a).max()
                asym_worst = max(asym_worst, asym)
                if not asym <= 1e-12:
                    failures.append(f"{scheme} k={k}: asymmetry {asym:.2e}")
            v = rng.standard_normal((100, a.shape[0]))
            quad = np.einsum("ni,ni->n", v, (a @ v.T).T) / np.einsum("ni,ni->n", v, v)
            coerc_min = min(coerc_min, quad.min())
            if not quad.min() > 0:
                failures.append(f"{scheme} k={k}: v^T A v = {quad.min():.2e} <= 0")
        for s in (space, patch):
            br = assemble(MethodConfig("BassiRebay"), s).matrix
            for other in (MethodConfig("BrezziEtAl", eta=0.0), MethodConfig("LDG", beta_e=0.0)):
                d = abs(br - assemble(other, s).matrix).max() / abs(br).max()
                equiv_worst = max(equiv_worst, d)
                if not d <= 1e-12:
                    failures.append(f"{other.scheme} k={k}: differs from BassiRebay by {d:.2e}")
    report(5, failures, f"asymmetry {asym_worst:.1e}, min Rayleigh quotient {coerc_min:.3g}, "
                        f"equivalence defect {equiv_worst:.1e}")


def test_criterion_6_area_and_norms(unit_sphere, report):
    failures = []
    area_err = 0.0
    mesh3 = icosphere(unit_sphere, 3)
    for k in (1, 2, 3, 4):
        err = abs(CurvedMesh(mesh3, unit_sphere, k).lifted_area() - 4 * np.pi)
        area_err = max(area_err, err)
        if not err <= 1e-8:
            failures.append(f"k={k}: lifted area off by {err:.2e}")
    ratio_margin = np.inf
    rng = np.random.default_rng(6)
    for k in (1, 2, 3):
        for lvl in (1, 2, 3):
            space = DGSpace(CurvedMesh(icosphere(unit_sphere, lvl), unit_sphere, k))
            h = space.curved.h
            for stab in ("S1", "S2"):
                u = space.field(rng.standard_normal((space.n_elements, space.nk)))
                dev = abs(lifted_dg_norm(u, stab) / dg_norm(u, stab, 10.0) - 1)
                ratio_margin = min(ratio_margin, 5 * h - dev)
                if not dev <= 5 * h:
                    failures.append(f"k={k} level {lvl} {stab}: |ratio - 1| = {dev:.2e} > 5h")
    report(6, failures, f"lifted area error {area_err:.1e} (level 3, k=1..4); "
                        f"norm ratio slack to 5h at least {ratio_margin:.3g}")


def test_criterion_7_oracle_gate(report):
    failures, seen = [], []
    for name in REGISTRY:
        surface = Sphere(1.0) if name.startswith("sphere") else Torus(2.0, 0.5)
        err = oracle_check(name, surface)
        seen.append(f"{name} {err:.1e}")
        if not err < 1e-6:
            failures.append(f"{name}: oracle relative error {err:.2e}")
    report(7, failures, ", ".join(seen))
