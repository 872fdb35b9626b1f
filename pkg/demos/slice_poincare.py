"""Poincare-type inequality on slices around a stratum.

For a function vanishing on the boundary stratum, its norm on the level set
{d(x, S) = eta} is controlled by eta times the gradient norm in the tube, so
the ratio below should shrink linearly in eta.
"""
from conelab.cone import axis_stratum, point_stratum
from conelab.polydomain import Constraint, DomainSpec, Polynomial, ScalarField
from conelab.regularity import SliceSpec, slice_poincare_ratio, slice_slope

etas = tuple(2.0 ** -k for k in range(3, 9))

X, Y = Polynomial.variable(2, 0), Polynomial.variable(2, 1)
slit = DomainSpec(2, (0, 0), 1.0, exclusions=((Constraint(Y, "="), Constraint(X, ">=")),))
u = ScalarField.parse("sqrt(r)*sin(theta/2)", 2)
rows = slice_poincare_ratio(u, SliceSpec(point_stratum((0, 0)), 0.5, etas), slit)
print("slit tip")
for eta, num, den, ratio in rows:
    print(f"  eta = {eta:.5f}  ratio = {ratio:.5f}")
print("  log-log slope", round(slice_slope(rows), 3))

P = Polynomial.parse("x^3 + y^2 - z^2*x^2")
cusp = DomainSpec(3, (0, 0, 0), 1.0, (Constraint(P, "!="),), dirichlet_selector="variety",
                  neumann_selector="sphere")
bump = ScalarField.parse("(x^3 + y^2 - z^2*x^2)*(1 - x^2 - y^2 - z^2)^2", 3)
rows = slice_poincare_ratio(bump, SliceSpec(axis_stratum(2, 3, (-0.5, 0.5)), 0.5, etas), cusp)
print("cusp, z-axis stratum: log-log slope", round(slice_slope(rows), 3))
