"""Trace both branches of the g = z family in 2+1 dimensions along x0.

Roots appear once x0 exceeds 1; below that the implicit equation has none.
"""
import numpy as np

from coupled_eikonal import Family2D, evaluate2

family = Family2D.from_text("z", "0", h="0")
for x0 in np.linspace(0.5, 3.0, 6):
    found = evaluate2(family, (x0, 0.0, -1.0))
    if not found:
        print(f"x0 = {x0:4.2f}: no branch")
        continue
    for b in found:
        print(f"x0 = {x0:4.2f}: z = {b.z:+.6f}  u = {b.u:+.6f}  v = {b.v:+.6f}  |u.u| = {abs(b.residuals.res_uu):.1e}")
