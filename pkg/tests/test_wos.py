import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conelab.polydomain import CoefficientField, Constraint, DomainError, DomainSpec, Polynomial, ScalarField
from conelab.wos import WosConfig, _invert, wos_batch, wos_estimate, wos_gradient

A_IN = 0.5
B_SHELL = A_IN**3 / (2 * A_IN**3 + 1)
SPHERE_IN = Polynomial.parse(f"x^2 + y^2 + z^2 - {A_IN**2}")
INV_R = ScalarField.parse("1/sqrt(x^2 + y^2 + z^2)", 3)
CUSP = Polynomial.parse("x^3 + y^2 - z^2*x^2")


def shell(g=INV_R, **kw):
    return DomainSpec(3, (0, 0, 0), 1.0, (Constraint(SPHERE_IN, ">"),), dirichlet_selector="all",
                      dirichlet_data=g, **kw)


def neumann_shell():
    # u = B (2 + r^-3) z: equals z on the inner sphere, zero flux through the outer one
    return DomainSpec(3, (0, 0, 0), 1.0, (Constraint(SPHERE_IN, ">"),), dirichlet_selector="variety",
                      neumann_selector="sphere", dirichlet_data=ScalarField.parse("z", 3))


def plane(g, sign="!=", **kw):
    sel = dict(dirichlet_selector="variety", neumann_selector="sphere") if sign == "!=" else {}
    return DomainSpec(3, (0, 0, 0), 1.0, (Constraint(Polynomial.parse("z"), sign),),
                      dirichlet_data=g, **{**sel, **kw})


def test_constant_data_exact():
    r = wos_estimate(WosConfig(plane(ScalarField.constant(5.0, 3)), walkers=2000), [0.2, 0.1, 0.3])
    assert r.mean == 5.0 and r.stderr == 0.0 and r.excluded == 0


def test_shell_inverse_radius():
    r = wos_estimate(WosConfig(shell(), walkers=20000, seed=11), [0.0, 0.6, 0.3])
    assert abs(r.mean - 1 / np.hypot(0.6, 0.3)) <= 3 * r.stderr


def test_neumann_reflection_oracle():
    x = np.array([0.2, 0.0, 0.7])
    r = wos_estimate(WosConfig(neumann_shell(), walkers=8192, seed=4), x)
    rr = np.linalg.norm(x)
    assert abs(r.mean - B_SHELL * (2 + rr**-3) * x[2]) <= 3 * r.stderr


def test_cusp_nearby_points_agree():
    d = DomainSpec(3, (0, 0, 0), 1.0, (Constraint(CUSP, "!="),), dirichlet_selector="variety",
                   neumann_selector="sphere", dirichlet_data=ScalarField.parse("x^2 + y", 3))
    cfg = WosConfig(d, walkers=10000, seed=8)
    x1, x2 = np.array([0.1, 0.01, 0.5]), np.array([0.11, 0.01, 0.5])
    r1, r2 = wos_estimate(cfg, x1), wos_estimate(cfg, x2)
    assert r1.excluded == r2.excluded == 0
    assert abs(r1.mean - r2.mean) <= 2.0 * np.linalg.norm(x1 - x2) + 3 * (r1.stderr + r2.stderr)


def test_gradient_linear_data():
    cfg = WosConfig(plane(ScalarField.parse("x", 3), sign=">", dirichlet_selector="all"), walkers=8192, seed=6)
    g = wos_gradient(cfg, [0.1, 0.2, 0.4], 0.05)
    assert np.all(np.abs(g.value - [1, 0, 0]) <= 3 * g.stderr)


def test_gradient_constant_data():
    cfg = WosConfig(plane(ScalarField.constant(2.0, 3)), walkers=256, block=256)
    g = wos_gradient(cfg, [0.1, 0.2, 0.4], 0.05)
    assert np.all(g.value == 0) and not g.low_confidence


def test_gradient_shell():
    cfg = WosConfig(shell(), walkers=8192, seed=9)
    x = np.array([0.75, 0.0, 0.0])
    g = wos_gradient(cfg, x, 0.05)
    exact = -x / np.linalg.norm(x) ** 3
    # the central difference adds O(h^2) on top of the sampling error
    assert np.all(np.abs(g.value - exact) <= 3 * g.stderr + 0.01)


def test_eps_halving_within_two_stderr():
    a = wos_estimate(WosConfig(shell(), walkers=8192, eps=1e-3, seed=3), [0.75, 0, 0])
    b = wos_estimate(WosConfig(shell(), walkers=8192, eps=5e-4, seed=3), [0.75, 0, 0])
    assert abs(a.mean - b.mean) < 2 * a.stderr


def test_stderr_scaling():
    a = wos_estimate(WosConfig(shell(), walkers=2048, seed=1), [0.75, 0, 0])
    b = wos_estimate(WosConfig(shell(), walkers=8192, seed=2), [0.75, 0, 0])
    assert a.stderr / b.stderr == pytest.approx(2.0, rel=0.3)


def test_steps_logarithmic_in_eps():
    steps = [wos_estimate(WosConfig(shell(), walkers=2048, eps=e, seed=5), [0.75, 0, 0]).steps
             for e in (1e-2, 1e-3, 1e-4, 1e-5)]
    inc = np.diff(steps)
    assert np.all(inc > 0) and inc.max() <= 2 * inc.min()


def test_deterministic_across_workers():
    base = dict(walkers=3000, block=512, seed=21)
    a = wos_estimate(WosConfig(shell(), **base), [0.7, 0.1, 0])
    b = wos_estimate(WosConfig(shell(), **base), [0.7, 0.1, 0])
    c = wos_estimate(WosConfig(shell(), workers=3, **base), [0.7, 0.1, 0])
    assert a == b == c


def test_excluded_walks_flagged():
    r = wos_estimate(WosConfig(shell(), walkers=500, max_steps=1), [0.75, 0, 0])
    assert r.excluded == 500 and r.flagged


def test_batch_records():
    recs = list(wos_batch(WosConfig(shell(), walkers=256), [[0.75, 0, 0], [0, 0.8, 0]]))
    assert [r["point"] for r in recs] == [(0.75, 0.0, 0.0), (0.0, 0.8, 0.0)]
    assert all(set(r) >= {"mean", "stderr", "steps", "flags"} for r in recs)


def test_rejections():
    with pytest.raises(DomainError, match="volume source"):
        WosConfig(shell(source=ScalarField.constant(1.0, 3)))
    A = CoefficientField(tuple(tuple(ScalarField.constant(2.0 if i == j else 0.0, 3) for j in range(3))
                               for i in range(3)))
    with pytest.raises(DomainError, match="A = I"):
        WosConfig(shell(operator=A))
    bad = DomainSpec(3, (0, 0, 0), 1.0, (Constraint(SPHERE_IN, ">"),), dirichlet_selector="sphere",
                     neumann_selector="c0")
    with pytest.raises(DomainError, match="Neumann"):
        WosConfig(bad)
    with pytest.raises(DomainError, match="n = 3"):
        WosConfig(DomainSpec(2, (0, 0), 1.0))
    cfg = WosConfig(shell(), walkers=10)
    with pytest.raises(DomainError, match="not in the domain"):
        wos_estimate(cfg, [0.1, 0, 0])
    with pytest.raises(DomainError, match="stencil"):
        wos_gradient(cfg, [0.52, 0, 0], 0.05)


@settings(max_examples=200, deadline=None)
@given(st.tuples(*[st.floats(-5, 5) for _ in range(3)]), st.floats(0.2, 3.0))
def test_inversion_involution(y, R):
    y = np.array([y])
    c = np.array([0.1, -0.2, 0.3])
    if np.linalg.norm(y - c) < 1e-3:
        return
    z = _invert(y, c, R)
    assert np.allclose(_invert(z, c, R), y, rtol=1e-9, atol=1e-9)
    # |y - c| |z - c| = R^2 along the same ray
    assert np.linalg.norm(y - c) * np.linalg.norm(z - c) == pytest.approx(R * R)
    assert np.dot((y - c)[0], (z - c)[0]) > 0
