"""Run the closure audit on a family with linear g.

Prints every constraint/p/r combination with its residual aggregates,
then fits the closure directly on one fiber and compares.
"""
import sys

from coupled_eikonal import Family3D, ParamPoint, closure_audit, fiber_derive_closure
from coupled_eikonal.verify import closed_form_closure

g, k = (sys.argv[1], sys.argv[2]) if len(sys.argv) == 3 else ("1 + 0.1*z1 - 0.15*z2", "0.2*z1^2 - 0.1*z1*z2")
family = Family3D.from_text(g, k)
report = closure_audit(family, samples=12, seed=0)

print(f"g = {g}   k = {k}")
print(f"{'constraint':18} {'p':10} {'r':11} {'|u.u|':>9} {'|v.v|':>9} {'|u.v-1|':>9} {'mixed':>9}")
for row in report.variants:
    mark = "*" if row.key() == report.selected.key() else " "
    print(
        f"{row.constraint:18} {row.p:10} {row.r:11} {row.max_res_uu:9.1e} {row.max_res_vv:9.1e}"
        f" {row.max_res_uv:9.1e} {row.mixed_defect:9.1e} {mark}"
    )
print("gate passed" if report.passed else "no combination passes the gate")

z = ParamPoint.make(0.2, -0.1)
fit = fiber_derive_closure(family, z)
p, r1, r2 = closed_form_closure(family, z, report.selected.p, report.selected.r)
print(f"\nfiber fit at z = (0.2, -0.1): p = {fit.p:.8f}, r_z = ({fit.r_z1:.6f}, {fit.r_z2:.6f})")
print(f"selected closed form:        p = {p:.8f}, r_z = ({r1:.6f}, {r2:.6f})")
