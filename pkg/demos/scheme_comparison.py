"""Seven DG fluxes side by side on one sphere mesh.

All schemes solve the same problem on the same level-3 mesh with k = 1.
NIPG and IIPG are nonsymmetric, so the duality argument behind the optimal
L2 rate does not apply to them; on this smooth example their errors are
still close to the others.  We also print the symmetry defect of each matrix
and the solver it was given.

Run with ``python3 demos/scheme_comparison.py``.
"""
import numpy as np

from surface_dg import (SCHEMES, CurvedMesh, DGSpace, MethodConfig, Sphere, assemble,
                        error_norms, icosphere, manufactured, solve)

sphere = Sphere(1.0)
exact = manufactured.get("sphere_x1x2", sphere)
space = DGSpace(CurvedMesh(icosphere(sphere, 3), sphere, 1))
print(f"{space.total_dofs} unknowns, h = {space.curved.h:.4f}\n")
print(f"{'scheme':>11} {'L2 error':>11} {'DG error':>11} {'asymmetry':>10}  solver")

for scheme in SCHEMES:
    # a nonzero switch vector makes LDG differ from Bassi-Rebay
    method = MethodConfig(scheme, alpha=10.0, beta_vec=np.array([0.5, 0.0, 0.0]))
    system = assemble(method, space, exact.f)
    a = system.matrix
    asym = abs(a - a.T).max() / abs(a).max()
    x, info = solve(system, return_info=True)
    l2, _, dg = error_norms(exact.u, exact.grad, space.field(x.reshape(space.n_elements, -1)))
    print(f"{scheme:>11} {l2:11.3e} {dg:11.3e} {asym:10.1e}  {info.solver}")
