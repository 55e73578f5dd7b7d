"""Convergence of the interior penalty scheme on the unit sphere.

We solve -Lap u + u = f for u = x1 x2, whose source is f = 7 x1 x2, on
isoparametric icosphere meshes of degree k and watch the errors fall.  The L2
error should drop by about 2^(k+1) per refinement and the DG error by 2^k.

Run with ``python3 demos/sphere_convergence.py [k]``.
"""
import sys

from surface_dg import MethodConfig, Sphere, convergence_study

k = int(sys.argv[1]) if len(sys.argv) > 1 else 2
sphere = Sphere(1.0)
method = MethodConfig("IP", alpha=10.0)

print(f"Interior penalty, k = {k}, alpha = {method.alpha:g}")
print(f"{'level':>5} {'h':>8} {'dofs':>7} {'L2 error':>11} {'DG error':>11}")


def show(row):
    print(f"{row['level']:5d} {row['h']:8.4f} {row['dofs']:7d} "
          f"{row['l2_error']:11.3e} {row['dg_error']:11.3e}", flush=True)


report = convergence_study(sphere, method, k, 4, "sphere_x1x2", progress=show)

# orders between consecutive levels; the first level has none
print("\nObserved orders")
for i in range(1, len(report.rows)):
    print(f"  level {i} -> {i + 1}: L2 {report.l2_eoc[i]:.2f} (expect {k + 1}), "
          f"DG {report.dg_eoc[i]:.2f} (expect {k})")
