"""Tangent-cone measure criterion on two cusp-shaped varieties.

For each point t on the z-axis we sample the link of the tangent cone of the
complement (clause 1) and of the boundary (clause 2) and compare their
measures with alpha.  The criterion holds if either clause does.
"""
import numpy as np

from conelab.cone import axis_stratum, check_criterion, check_product_decomposition
from conelab.polydomain import Constraint, DomainSpec, Polynomial

varieties = {
    "x^3 + y^2 - z^2 x^2": Polynomial.parse("x^3 + y^2 - z^2*x^2"),
    "y^2 + x^4 - z^4 x^2": Polynomial.parse("y^2 + x^4 - z^4*x^2"),
}
seeds = {"P > 0": (0.5, 0.5, 0.0), "P < 0": None}

for label, P in varieties.items():
    d = DomainSpec(3, (0, 0, 0), 1.0, (Constraint(P, "!="),), dirichlet_selector="variety",
                   neumann_selector="sphere")
    # pick a point of the negative component for the seed
    rng = np.random.default_rng(1)
    cand = rng.uniform(-0.9, 0.9, (4000, 3))
    cand = cand[(np.linalg.norm(cand, axis=1) < 0.9) & (P(cand) < -1e-3)]
    seeds["P < 0"] = tuple(cand[0])
    print(label)
    for comp, seed in seeds.items():
        for z0 in (0.0, 0.5):
            rep = check_criterion(d, (0, 0, z0), samples_per_radius=4000, component_seed=seed)
            print(f"  {comp} at (0,0,{z0}): clause1 {rep.clause1:6.3f}  clause2 {rep.clause2:6.3f}"
                  f"  alpha {rep.alpha:.3f}  -> {'holds' if rep.holds else 'fails'} ({rep.confidence})")

# Along the z-axis the tangent cone splits as (normal cone) x (axis direction)
P = varieties["x^3 + y^2 - z^2 x^2"]
dist = check_product_decomposition(P, axis_stratum(2), (0, 0, 1), samples=4000)
print(f"\nproduct decomposition at (0,0,1): Hausdorff distance {dist:.4f}")
