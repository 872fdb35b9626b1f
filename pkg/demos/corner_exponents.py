"""Gradient integrability near reentrant corners.

Solve the Laplace equation on a slit disk and on an L-shaped disk with the
corner solution as boundary data, then read off the largest p for which
|grad u|^p stays integrable near the corner.
"""
import numpy as np

from conelab import fem
from conelab.mesh2d import build_mesh
from conelab.polydomain import Constraint, DomainSpec, Polynomial, ScalarField
from conelab.regularity import annulus_profile, critical_exponent, fit_scaling_exponent

X, Y = Polynomial.variable(2, 0), Polynomial.variable(2, 1)

# u ~ r^(pi/omega) near a corner of opening omega, so |grad u|^p is
# integrable iff p < 2 / (1 - pi/omega): 4 for the slit, 6 for the L-shape
cases = {
    "slit": (((Constraint(Y, "="), Constraint(X, ">=")),), "sqrt(r)*sin(theta/2)", 4.0),
    "L-shape": (((Constraint(X, ">="), Constraint(Y, "<=")),), "r^(2/3)*sin(2*(theta - pi/2)/3)", 6.0),
}

for name, (excl, g, expected) in cases.items():
    d = DomainSpec(2, (0, 0), 1.0, exclusions=excl, dirichlet_data=ScalarField.parse(g, 2))
    # radical grading towards the corner keeps the dyadic annuli resolved
    mesh = build_mesh(d, 0.03, (((0.0, 0.0), 3.0),))
    u = fem.solve(fem.assemble(mesh, d))
    prof = annulus_profile(u, (0, 0))
    print(f"{name}: {len(mesh.vertices)} nodes, {u.iterations} CG iterations")
    for p in (2.0, 3.0, expected, 8.0):
        fit = fit_scaling_exponent(prof, p)
        print(f"  p = {p:4.1f}  annulus mass ~ r^{fit.slope:+.3f}  (r2 = {fit.r2:.4f})")
    ce = critical_exponent(prof)
    print(f"  p* = {ce.p_star:.3f} (classical {expected}), confidence {ce.confidence}\n")

# A smooth boundary point has no singularity: the masses shrink like r^2 for every p
d = DomainSpec(2, (0, 0), 1.0, dirichlet_data=ScalarField.parse("x^2 - y^2 + x", 2))
u = fem.solve(fem.assemble(build_mesh(d, 0.05, (((1.0, 0.0), 3.0),)), d))
print("disk boundary point:", critical_exponent(annulus_profile(u, (1, 0))).p_star)
