"""How well does a degree-k polynomial surface approximate the torus?

For each refinement we measure distance to the surface, the area element
ratio, the normal error and the conormal mismatch.  All of them except the
normal error shrink like h^(k+1); the normal is one order worse.

Run with ``python3 demos/geometry_errors.py``.
"""
from surface_dg import Torus, geometry_study

torus = Torus(2.0, 0.5)

for k in (1, 2, 3):
    report = geometry_study(torus, k, 4, base_level=1)
    final = report.final_orders()
    print(f"\nk = {k}: final observed orders")
    for name, order in final.items():
        expected = k if name == "nu" else k + 1
        print(f"  {name:>9}: {order:5.2f}   (nominal {expected})")

# the full table is plain CSV, ready for a spreadsheet
print("\nk = 3 table:")
print(report.to_csv())
