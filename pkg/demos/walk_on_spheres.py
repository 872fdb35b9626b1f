"""Walk-on-spheres on a spherical shell and on the cusp domain.

1/|x| is harmonic in the shell 0.5 < |x| < 1, so the Monte-Carlo estimate can
be compared with the exact value.  The second part mixes Dirichlet data on a
variety with a reflecting (zero-flux) outer sphere.
"""
import numpy as np

from conelab.polydomain import Constraint, DomainSpec, Polynomial, ScalarField
from conelab.wos import WosConfig, wos_estimate, wos_gradient

shell = DomainSpec(3, (0, 0, 0), 1.0, (Constraint(Polynomial.parse("x^2 + y^2 + z^2 - 0.25"), ">"),),
                   dirichlet_data=ScalarField.parse("1/sqrt(x^2 + y^2 + z^2)", 3))
x = np.array([0.75, 0.0, 0.0])
print("shell, exact u =", 1 / np.linalg.norm(x))
for m in (1000, 4000, 16000):
    r = wos_estimate(WosConfig(shell, walkers=m, seed=0), x)
    print(f"  M = {m:6d}: {r.mean:.5f} +- {r.stderr:.5f}  ({r.steps:.1f} steps per walk)")

# central differences with common random numbers
g = wos_gradient(WosConfig(shell, walkers=8000, seed=0), x, 0.05)
print("grad u:", np.round(g.value, 3), "+-", np.round(g.stderr, 3), " exact", -x / np.linalg.norm(x) ** 3)

cusp = DomainSpec(3, (0, 0, 0), 1.0, (Constraint(Polynomial.parse("x^3 + y^2 - z^2*x^2"), "!="),),
                  dirichlet_selector="variety", neumann_selector="sphere",
                  dirichlet_data=ScalarField.parse("x^2 + y", 3))
for pt in ([0.1, 0.01, 0.5], [0.11, 0.01, 0.5]):
    r = wos_estimate(WosConfig(cusp, walkers=4000, seed=3), pt)
    print(f"cusp domain u{tuple(pt)} = {r.mean:.4f} +- {r.stderr:.4f}, excluded {r.excluded}")
