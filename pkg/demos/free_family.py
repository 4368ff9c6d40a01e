"""Evaluate the constant-g family and compare with its closed form.

With g = 1 and k = 0 the envelope solution is the pair
u = -(x0 + |x|), v = (|x| - x0) / 2, which this script reproduces
on a handful of points and then checks u.u, v.v and u.v - 1.
"""
import numpy as np

from coupled_eikonal import Family3D, evaluate

family = Family3D.from_text("1", "0")
rng = np.random.default_rng(3)

print(f"{'x':>36}  {'u':>10} {'u exact':>10}  {'v':>10} {'v exact':>10}  max res")
for x in rng.uniform([-1, -1, -1, 0.2], [1, 1, 1, 1.5], size=(6, 4)):
    rho = np.linalg.norm(x[1:])
    for b in evaluate(family, x):
        worst = max(abs(b.residuals.res_uu), abs(b.residuals.res_vv), abs(b.residuals.res_uv_minus_1))
        print(
            f"{np.array2string(x, precision=3):>36}  {b.u:10.6f} {-(x[0] + rho):10.6f}"
            f"  {b.v:10.6f} {(rho - x[0]) / 2:10.6f}  {worst:.1e}"
        )
