"""Linear solves, errors on the exact surface, convergence orders and studies."""
import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from . import manufactured
from .curved import CurvedMesh, GeoDiagnostics, edge_reference_points, REF_VERTICES, \
    geometric_diagnostics
from .dgspace import DGSpace, dg_norm, stabilization_value, interpolate
from .errors import DegenerateInput, IllConditionedLift, NoConvergence
from .geometry import projector
from .mesh import base_mesh, refine
from .methods import MethodConfig, assemble, penalty

__all__ = [
    "SolveOptions",
    "solve",
    "error_norms",
    "lifted_dg_norm",
    "eoc",
    "ErrorReport",
    "convergence_study",
    "GeometryReport",
    "geometry_study",
    "trace_constant",
    "inverse_constant",
    "lifting_constant",
    "galerkin_residual",
    "stability_ratio",
    "CSV_HEADER",
]

SOLVERS = ("auto", "conjugate-gradient", "stabilized-Krylov", "dense-direct")
DENSE_LIMIT = 5000
LIFT_COND_LIMIT = 1e6
CSV_HEADER = ("level", "h", "dofs", "l2_error", "l2_eoc", "dg_error", "dg_eoc",
              "assembly_s", "solve_s")


@dataclass(frozen=True)
class SolveOptions:
    """Linear solver choice; ``auto`` picks conjugate gradients for symmetric systems."""

    solver: str = "auto"
    rtol: float = 1e-10
    max_iter: int = None

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if not 0 < self.rtol < 1:
            raise ValueError("tolerance must lie in (0, 1)")


@dataclass
class SolveInfo:
    solver: str
    iterations: int
    residual: float


def _block_jacobi(matrix):
    """Preconditioner applying the inverses of the diagonal blocks of a BSR matrix."""
    bs = matrix.blocksize[0]
    nb = matrix.shape[0] // bs
    m = matrix.sorted_indices() if not matrix.has_sorted_indices else matrix
    rows = np.repeat(np.arange(nb), np.diff(m.indptr))
    pos = np.flatnonzero(m.indices == rows)
    diag = np.zeros((nb, bs, bs))
    diag[rows[pos]] = m.data[pos]
    inv = np.linalg.inv(diag)
    return spla.LinearOperator(matrix.shape, dtype=float,
                               matvec=lambda v: np.einsum("bij,bj->bi", inv, v.reshape(nb, bs)).ravel())


def solve(system, opts=None, return_info=False):
    """Solve ``A x = b``; the true relative residual is checked against ``opts.rtol``.

    Raises
    ------
    NoConvergence
        If the final relative residual exceeds the tolerance.
    """
    opts = SolveOptions() if opts is None else opts
    a = system.matrix
    b = np.asarray(system.rhs, dtype=float)
    n = a.shape[0]
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x = np.zeros(n)
        return (x, SolveInfo("trivial", 0, 0.0)) if return_info else x
    solver = opts.solver
    if solver == "auto":
        if system.symmetric:
            solver = "conjugate-gradient"
        else:
            solver = "dense-direct" if n < DENSE_LIMIT else "stabilized-Krylov"
    iters = [0]

    def count(_):
        iters[0] += 1

    if solver == "dense-direct":
        x = scipy.linalg.solve(a.toarray(), b)
    else:
        precond = _block_jacobi(a) if hasattr(a, "blocksize") else None
        maxiter = opts.max_iter if opts.max_iter is not None else max(10 * n, 1000)
        method = spla.cg if solver == "conjugate-gradient" else spla.bicgstab
        # iterate to well below the target so the true residual also meets it
        x, _ = method(a, b, rtol=0.1 * opts.rtol, atol=0.0, maxiter=maxiter, M=precond,
                      callback=count)
    res = float(np.linalg.norm(b - a @ x) / bnorm)
    if not res <= opts.rtol:
        raise NoConvergence(
            f"{solver} stopped at relative residual {res:.3e} > {opts.rtol:.1e} "
            f"after {iters[0]} iterations (penalty parameter may be too small)", residual=res)
    info = SolveInfo(solver, iters[0], res)
    return (x, info) if return_info else x


# error measurement ---------------------------------------------------------------
def _lifted_gradients(space, grad_h):
    """Solve ``P_h (I - dH) P g = grad_h`` for tangent ``g`` at element quadrature points."""
    curved = space.curved
    el = curved.elements
    _, d, nu, hess = curved.surface.geometry(el.x)
    b = projector(el.nu_h) @ (np.eye(3) - d[..., None, None] * hess) @ projector(nu)
    # the rank-one completion nu_h nu^T makes the map invertible without changing g
    full = b + el.nu_h[..., :, None] * nu[..., None, :]
    cond = np.linalg.cond(full)
    if np.any(~(cond <= LIFT_COND_LIMIT)):
        raise IllConditionedLift(f"lifted gradient system has condition number {cond.max():.3g}")
    return np.linalg.solve(full, grad_h[..., None])[..., 0]


def error_norms(u_exact, grad_exact, u_h, stab="S1", alpha=10.0, mode="lifted"):
    """Errors ``(L2, broken H1, DG)`` between exact data on the surface and ``u_h``.

    In ``lifted`` mode ``u_h`` is transported to the exact surface and the
    integrals use ``dA = delta_h dA_hk``.  The ``projected-exact`` mode
    compares on the discrete surface against ``u(pi(x))`` and the projected
    gradient ``P_h grad u(pi(x))``.  The jump part uses ``S_h(u_h, u_h)``, which
    coincides with its lifted counterpart because the exact solution has no jumps.
    """
    space = u_h.space
    curved = space.curved
    el = curved.elements
    xi = curved.surface.closest_point(el.x)
    uq = u_h.at_quad()
    gq = u_h.grad_at_quad()
    ue = np.asarray(u_exact(xi), dtype=float)
    ge = np.asarray(grad_exact(xi), dtype=float)
    if mode == "lifted":
        weights = el.dA * curved.area_factor()
        g_lift = _lifted_gradients(space, gq)
        grad_err = g_lift - ge
    elif mode == "projected-exact":
        weights = el.dA
        grad_err = gq - np.einsum("...ij,...j->...i", projector(el.nu_h), ge)
    else:
        raise ValueError("mode must be 'lifted' or 'projected-exact'")
    l2_sq = float(np.sum(weights * (uq - ue) ** 2))
    h1_sq = l2_sq + float(np.sum(weights * np.sum(grad_err ** 2, axis=-1)))
    s = stabilization_value(u_h, stab, alpha)
    return np.sqrt(l2_sq), np.sqrt(h1_sq), np.sqrt(h1_sq + s)


def lifted_dg_norm(u_h, stab, alpha=10.0):
    """DG norm of the lift of ``u_h`` to the exact surface."""
    curved = u_h.space.curved
    el = curved.elements
    weights = el.dA * curved.area_factor()
    g = _lifted_gradients(u_h.space, u_h.grad_at_quad())
    h1_sq = float(np.sum(weights * (u_h.at_quad() ** 2 + np.sum(g ** 2, axis=-1))))
    return float(np.sqrt(h1_sq + stabilization_value(u_h, stab, alpha)))


def eoc(errors, hs):
    """Observed orders ``log(e_{i-1}/e_i) / log(h_{i-1}/h_i)``, one per consecutive pair.

    A zero error (exact reproduction) yields ``inf``.

    Raises
    ------
    DegenerateInput
        For negative errors, non-positive mesh sizes or mismatched lengths.
    """
    e = np.asarray(errors, dtype=float)
    h = np.asarray(hs, dtype=float)
    if e.shape != h.shape or e.ndim != 1 or len(e) < 2:
        raise DegenerateInput("need matching error and mesh-size lists of length >= 2")
    if np.any(e < 0) or np.any(~np.isfinite(e)):
        raise DegenerateInput("errors must be finite and non-negative")
    if np.any(~(h > 0)):
        raise DegenerateInput("mesh sizes must be positive")
    out = []
    for i in range(1, len(e)):
        if e[i] == 0.0:
            out.append(np.inf)
        elif e[i - 1] == 0.0:
            out.append(-np.inf)
        else:
            out.append(float(np.log(e[i - 1] / e[i]) / np.log(h[i - 1] / h[i])))
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12g}"


@dataclass
class ErrorReport:
    """Per-level errors and observed orders of a convergence study."""

    scheme: str
    k: int
    rows: list = field(default_factory=list)

    def _orders(self, key):
        if len(self.rows) < 2:
            return [None] * len(self.rows)
        return [None] + eoc([r[key] for r in self.rows], [r["h"] for r in self.rows])

    @property
    def l2_eoc(self):
        return self._orders("l2_error")

    @property
    def dg_eoc(self):
        return self._orders("dg_error")

    def table(self):
        """Rows as dictionaries keyed by :data:`CSV_HEADER`."""
        out = []
        for r, l2o, dgo in zip(self.rows, self.l2_eoc, self.dg_eoc):
            out.append({"level": r["level"], "h": r["h"], "dofs": r["dofs"],
                        "l2_error": r["l2_error"], "l2_eoc": l2o,
                        "dg_error": r["dg_error"], "dg_eoc": dgo,
                        "assembly_s": r["assembly_s"], "solve_s": r["solve_s"]})
        return out

    def to_csv(self, timings=True):
        """CSV text; with ``timings=False`` the time columns are left empty (reproducible)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.table():
            if not timings:
                row["assembly_s"] = row["solve_s"] = None
            w.writerow([_fmt(row[c]) for c in CSV_HEADER])
        return buf.getvalue()


def convergence_study(surface, method, k, levels, solution, base_level=1, opts=None,
                      error_mode="lifted", progress=None):
    """Solve the manufactured problem on ``levels`` successive refinements.

    Parameters
    ----------
    surface : ImplicitSurface
    method : MethodConfig or scheme name
    k : int
    levels : int
    solution : Manufactured or registry name
    base_level : int
        Refinement level of the first mesh (see :func:`surface_dg.mesh.base_mesh`).
    progress : callable, optional
        Called with each finished row.
    """
    if isinstance(method, str):
        method = MethodConfig(method)
    if isinstance(solution, str):
        solution = manufactured.get(solution, surface)
    report = ErrorReport(method.scheme, k)
    mesh = base_mesh(surface, base_level)
    for i in range(levels):
        if i:
            mesh = refine(mesh, surface)
        t0 = time.perf_counter()
        space = DGSpace(CurvedMesh(mesh, surface, k))
        system = assemble(method, space, solution.f)
        t1 = time.perf_counter()
        x = solve(system, opts)
        t2 = time.perf_counter()
        u_h = space.field(x)
        l2, h1, dg = error_norms(solution.u, solution.grad, u_h, method.stabilization,
                                 method.alpha, error_mode)
        row = {"level": base_level + i, "h": mesh.h, "dofs": space.total_dofs,
               "l2_error": l2, "h1_error": h1, "dg_error": dg,
               "assembly_s": t1 - t0, "solve_s": t2 - t1}
        report.rows.append(row)
        if progress is not None:
            progress(row)
    return report


@dataclass
class GeometryReport:
    """Per-level :class:`GeoDiagnostics` with observed orders."""

    k: int
    levels: list = field(default_factory=list)
    hs: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def orders(self):
        """Observed orders per field, each a list aligned with the levels (first is None)."""
        out = {}
        for name in GeoDiagnostics.FIELDS:
            vals = [getattr(dg, name) for dg in self.diagnostics]
            out[name] = [None] + eoc(vals, self.hs) if len(vals) > 1 else [None]
        return out

    def final_orders(self):
        return {name: o[-1] for name, o in self.orders().items()}

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["level", "h"]
        for name in GeoDiagnostics.FIELDS:
            header += [name, f"{name}_eoc"]
        w.writerow(header)
        orders = self.orders()
        for i, (lev, h, dg) in enumerate(zip(self.levels, self.hs, self.diagnostics)):
            row = [_fmt(lev), _fmt(h)]
            for name in GeoDiagnostics.FIELDS:
                row += [_fmt(getattr(dg, name)), _fmt(orders[name][i])]
            w.writerow(row)
        return buf.getvalue()


def geometry_study(surface, k, levels, base_level=1):
    """Geometric error quantities of the degree-``k`` surface over ``levels`` refinements."""
    report = GeometryReport(k)
    mesh = base_mesh(surface, base_level)
    for i in range(levels):
        if i:
            mesh = refine(mesh, surface)
        report.levels.append(base_level + i)
        report.hs.append(mesh.h)
        report.diagnostics.append(geometric_diagnostics(CurvedMesh(mesh, surface, k)))
    return report


# inequality probes ---------------------------------------------------------------
def _boundary_gradient_blocks(space):
    """Per-element matrices of ``int_dK grad phi_i . grad phi_j ds``."""
    curved = space.curved
    ref, quad = curved.ref, curved.quad
    out = np.zeros((space.n_elements, space.nk, space.nk))
    for i in range(3):
        pts = edge_reference_points(i, quad.edge_points)
        _, jac, ginv, _, _ = curved.map_points(pts)
        speed = np.linalg.norm(jac @ (REF_VERTICES[(i + 1) % 3] - REF_VERTICES[i]), axis=-1)
        g = np.einsum("eqdc,qjc->eqjd", jac @ ginv, ref.grad(pts))
        out += np.einsum("eq,eqid,eqjd->eij", speed * quad.edge_weights, g, g)
    return out


def _random_ratio(num, den, samples, rng):
    """Largest ``v^T num v / v^T den v`` over random coefficient vectors, per element."""
    v = rng.standard_normal((samples,) + num.shape[:2])
    a = np.einsum("sei,eij,sej->se", v, num, v)
    b = np.einsum("sei,eij,sej->se", v, den, v)
    return float(np.max(a / b))


def trace_constant(space, samples=20, seed=0):
    """Sampled ``max h_K ||grad v||^2_{dK} / ||grad v||^2_K`` over random fields."""
    rng = np.random.default_rng(seed)
    hk = space.curved.base.element_diameters()
    num = hk[:, None, None] * _boundary_gradient_blocks(space)
    # the constant mode has no gradient; regularise the denominator by a tiny mass term
    den = space.stiffness_blocks + 1e-12 * space.mass_blocks
    return _random_ratio(num, den, samples, rng)


def inverse_constant(mesh, k, samples=20, seed=0):
    """Sampled ``max h_K |v|_{H1(K)} / ||v||_{L2(K)}`` on the flat elements of ``mesh``."""
    from .curved import ReferenceElement, make_quadrature

    rng = np.random.default_rng(seed)
    ref, quad = ReferenceElement(k), make_quadrature(k)
    c = mesh.corners()
    jac = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]], axis=-1)      # (nE, 3, 2)
    g = np.swapaxes(jac, 1, 2) @ jac
    ginv = np.linalg.inv(g)
    area = np.sqrt(np.linalg.det(g))
    phi, dphi = ref.eval(quad.points), ref.grad(quad.points)
    mass = np.einsum("e,q,qi,qj->eij", area, quad.weights, phi, phi)
    stiff = np.einsum("e,q,qic,ecd,qjd->eij", area, quad.weights, dphi, ginv, dphi)
    hk = mesh.element_diameters()
    return float(np.sqrt(_random_ratio(hk[:, None, None] ** 2 * stiff, mass, samples, rng)))


def lifting_constant(space, alpha=10.0, samples=20, seed=0):
    """Sampled ``max alpha ||r_e([v])||^2 / (beta_e ||[v]||^2_e)`` over edges and random fields."""
    rng = np.random.default_rng(seed)
    from .methods import _lifting_gram

    _, beta = penalty(alpha, space.k, space.curved.edge_lengths)
    gram = _lifting_gram(space)
    ds, jmp = space.curved.edges.ds, space.trace_jump
    jj = np.einsum("eq,eqi,eqj->eij", ds, jmp, jmp)
    num = alpha * gram
    den = beta[:, None, None] * jj + 1e-300
    v = rng.standard_normal((samples,) + gram.shape[:2])
    a = np.einsum("sei,eij,sej->se", v, num, v)
    b = np.einsum("sei,eij,sej->se", v, den, v)
    return float(np.max(a / b))


def galerkin_residual(method, space, solution, norm="max"):
    """Consistency residual ``r = A I_h u - b`` of the nodal interpolant of the exact solution.

    ``norm='max'`` returns ``||r||_inf / ||b||_inf``.  Each entry tests against
    one basis function, so this ratio carries an extra ``h^-1`` relative to the
    energy scaling.  ``norm='dual'`` returns ``sqrt(r^T N^-1 r) / sqrt(b^T M^-1 b)``
    with ``N`` the matrix of the DG norm, i.e. the residual in the dual DG norm
    relative to the dual L2 norm of the load.
    """
    system = assemble(method, space, solution.f)
    r = system.matrix @ interpolate(solution.u, space).vector - system.rhs
    if norm == "max":
        return float(np.abs(r).max() / np.abs(system.rhs).max())
    if norm != "dual":
        raise ValueError("norm must be 'max' or 'dual'")
    from .methods import stabilization_matrix, _bsr_from_blocks

    ne = space.n_elements
    n_mat = _bsr_from_blocks(np.arange(ne), np.arange(ne),
                             space.mass_blocks + space.stiffness_blocks, ne)
    n_mat = (n_mat + stabilization_matrix(method.stabilization, space, method.alpha)).tocsc()
    dual = float(np.sqrt(r @ spla.spsolve(n_mat, r)))
    b = system.rhs.reshape(ne, -1)
    load = float(np.sqrt(np.sum(b * np.linalg.solve(space.mass_blocks, b[..., None])[..., 0])))
    return dual / load


def stability_ratio(u_h, f, stab, alpha=10.0):
    """``||u_h||_DG / ||f_h||_{L2(Gamma_hk)}`` with ``f_h = f o pi``."""
    curved = u_h.space.curved
    el = curved.elements
    fq = np.asarray(f(curved.surface.closest_point(el.x)), dtype=float)
    return dg_norm(u_h, stab, alpha) / float(np.sqrt(np.sum(el.dA * fq ** 2)))
