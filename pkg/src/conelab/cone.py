"""Sampled tangent and normal cones, their links, and link measures.

A link at ``t`` is approximated by the rescaled section of the set by small
spheres ``S(t, r)`` over a dyadic radius sequence; the cloud is accepted at
the first radius where it stops moving in Hausdorff distance. The same
random directions are reused at every radius, so a genuine cone gives
identical clouds and any residual gap measures actual geometry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .polydomain import DomainError, DomainSpec, Polynomial

EPS_STAB = 0.02
DEFAULT_RADII = tuple(0.1 * 2.0**-j for j in range(8))


def sphere_area(n: int) -> float:
    """``H^{n-1}`` of the unit sphere in R^n."""
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


def default_alpha(n: int) -> float:
    return 0.05 * sphere_area(n)


# ---------------------------------------------------------------------------
# sets


@dataclass(frozen=True)
class VarietySet:
    """Union of zero sets of polynomials, optionally filtered by ``keep``."""

    polys: tuple[Polynomial, ...]
    keep: Callable | None = None

    @classmethod
    def of(cls, *polys, keep=None):
        return cls(tuple(polys), keep)


@dataclass(frozen=True)
class RegionSet:
    """Set given by a vectorized membership predicate (full-dimensional)."""

    predicate: Callable


def _as_set(X):
    if isinstance(X, (VarietySet, RegionSet)):
        return X
    if isinstance(X, Polynomial):
        return VarietySet((X,))
    if callable(X):
        return RegionSet(X)
    raise TypeError(f"cannot interpret {X!r} as a set")


@dataclass(frozen=True)
class ConeLink:
    ambient_dim: int
    center: tuple[float, ...]
    points: np.ndarray
    radius_used: float
    stabilization_gap: float
    measure_estimate: float
    target_codim: int
    stabilized: bool = True
    resolution: float = 0.0
    gaps: tuple[float, ...] = ()

    @property
    def empty(self) -> bool:
        return len(self.points) == 0


# ---------------------------------------------------------------------------
# direction sampling


def uniform_directions(n: int, count: int, rng) -> np.ndarray:
    v = rng.standard_normal((count, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _random_rotation(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _fibonacci_sphere(count):
    i = np.arange(count) + 0.5
    z = 1 - 2 * i / count
    phi = math.pi * (1 + 5**0.5) * i
    s = np.sqrt(1 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def _circle_families(basis_pairs, m, rng):
    """Points on circles ``cos(phi) u + sin(phi) v``; shape (circles, m, n)."""
    u, v = basis_pairs
    phase = rng.uniform(0, 2 * math.pi / m, size=len(u))
    phi = phase[:, None] + 2 * math.pi * np.arange(m)[None, :] / m
    return np.cos(phi)[..., None] * u[:, None, :] + np.sin(phi)[..., None] * v[:, None, :], phi


def great_circles(n: int, count: int, rng):
    """Orthonormal pairs spanning ``count`` well-spread great circles."""
    if n == 2:
        return np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
    normals = _fibonacci_sphere(count) @ _random_rotation(3, rng).T
    helper = np.where(np.abs(normals[:, :1]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    u = np.cross(normals, helper)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(normals, u)
    return u, v


# ---------------------------------------------------------------------------
# one radius


def _variety_section(poly, t, r, basis, circles, m, seeds, keep, newton_iter=60):
    """Unit directions ``d`` (in the span of ``basis``) with ``poly(t + r d) = 0``.

    Sign changes along the sampling circles are bisected to machine
    precision; seeds are additionally pulled onto the section by Newton
    steps tangent to the sphere.
    """
    n = len(t)
    found = []
    # chord bisection
    u, v = circles
    pts, phi = _circle_families((u, v), m, _FixedPhase())
    vals = poly(t + r * (pts @ basis.T))
    s = np.sign(vals)
    nxt = np.roll(s, -1, axis=1)
    ci, ki = np.nonzero(s * nxt < 0)
    if len(ci):
        lo = phi[ci, ki]
        hi = lo + 2 * math.pi / m
        slo = s[ci, ki]
        uu, vv = u[ci], v[ci]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            d = np.cos(mid)[:, None] * uu + np.sin(mid)[:, None] * vv
            sm = np.sign(poly(t + r * (d @ basis.T)))
            same = sm == slo
            lo = np.where(same, mid, lo)
            hi = np.where(same, hi, mid)
        mid = 0.5 * (lo + hi)
        found.append(np.cos(mid)[:, None] * uu + np.sin(mid)[:, None] * vv)
    # exact zeros on the sampling grid
    zi, zk = np.nonzero(vals == 0)
    if len(zi):
        found.append(pts[zi, zk])
    # Newton projection of seeds onto the section
    if seeds is not None and len(seeds):
        w = seeds.copy()
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            for _ in range(newton_iter):
                x = t + r * (w @ basis.T)
                val = poly(x)
                g = poly.eval_gradient(x) @ basis * r  # derivative w.r.t. w
                g = g - np.sum(g * w, axis=1, keepdims=True) * w
                g2 = np.sum(g * g, axis=1)
                ok = g2 > 0
                step = np.where(ok, val / np.where(ok, g2, 1.0), 0.0)[:, None] * g
                # cap long steps; overshoots are pulled back on the next pass
                sn = np.linalg.norm(step, axis=1, keepdims=True)
                step = np.where(sn > 0.5, step * (0.5 / np.where(sn > 0, sn, 1.0)), step)
                w_new = w - step
                w_new /= np.linalg.norm(w_new, axis=1, keepdims=True)
                w = np.where(np.isfinite(w_new).all(axis=1, keepdims=True), w_new, w)
        x = t + r * (w @ basis.T)
        val = poly(x)
        g = poly.eval_gradient(x) @ basis * r
        g = g - np.sum(g * w, axis=1, keepdims=True) * w
        gn = np.linalg.norm(g, axis=1)
        acc = (val == 0) | ((gn > 0) & (np.abs(val) <= 1e-9 * gn))
        found.append(w[acc])
    if not found:
        return np.zeros((0, basis.shape[1]))
    dirs = np.concatenate(found)
    if keep is not None and len(dirs):
        dirs = dirs[np.asarray(keep(t + r * (dirs @ basis.T), r), bool)]
    return dirs


class _FixedPhase:
    """Zero phase offsets; circle phases are already randomized upstream."""

    def uniform(self, lo, hi, size):
        return np.zeros(size)


def _section(X, t, r, basis, plan):
    if isinstance(X, RegionSet):
        d = plan["region_dirs"]
        mask = np.asarray(X.predicate(t + r * (d @ basis.T)), bool)
        return d[mask]
    clouds = []
    for poly in X.polys:
        if poly.degree() < 1:
            continue
        clouds.append(_variety_section(poly, t, r, basis, plan["circles"], plan["m"], plan["seeds"], X.keep))
    if not clouds:
        return np.zeros((0, basis.shape[1]))
    return np.concatenate(clouds)


def _plan(k, samples, rng):
    """Direction budget for a k-dimensional sampling sphere S^{k-1}."""
    plan = {}
    plan["region_dirs"] = uniform_directions(k, samples, rng)
    if k == 1:
        plan["circles"] = None
    elif k == 2:
        plan["m"] = samples
        plan["circles"] = (np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
        # rotate the phase so that grid points avoid special angles
        ang = rng.uniform(0, 2 * math.pi / samples)
        c, s = math.cos(ang), math.sin(ang)
        plan["circles"] = (np.array([[c, s]]), np.array([[-s, c]]))
    else:
        m = 100
        count = max(1, samples // m)
        plan["m"] = m
        plan["circles"] = great_circles(k, count, rng)
    plan["seeds"] = uniform_directions(k, samples, rng) if k >= 2 else None
    if k == 2:
        plan["seeds"] = None  # dense circle bisection is exact in 1D
    plan["resolution"] = (sphere_area(k) / samples) ** (1.0 / max(k - 1, 1)) if k >= 2 else 0.0
    return plan


def _section_1d(X, t, r, basis):
    """Normal space of dimension one: the 'sphere' is two points."""
    d = np.array([[1.0], [-1.0]])
    x = t + r * (d @ basis.T)
    if isinstance(X, RegionSet):
        return d[np.asarray(X.predicate(x), bool)]
    hit = np.zeros(2, bool)
    for poly in X.polys:
        hit |= np.abs(poly(x)) <= 1e-12 * max(1.0, poly.coefficient_scale())
    return d[hit]


def hausdorff_distance(a, b) -> float:
    """Symmetric Hausdorff distance between two finite point clouds."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise DomainError("Hausdorff distance needs two nonempty clouds")
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(max(da.max(), db.max()))


def _gap(prev, cur):
    if len(prev) == 0 and len(cur) == 0:
        return 0.0
    if len(prev) == 0 or len(cur) == 0:
        return math.inf
    return hausdorff_distance(prev, cur)


def _sample(X, t, radii, samples, seed, basis, target_codim, eps_stab):
    X = _as_set(X)
    t = np.asarray(t, dtype=float)
    radii = [float(r) for r in radii]
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise DomainError("radii must be strictly decreasing")
    n = len(t)
    k = basis.shape[1]
    rng = np.random.default_rng(seed)
    plan = _plan(k, samples, rng) if k >= 2 else {"resolution": 0.0}
    tol = max(eps_stab, 2 * plan["resolution"]) if isinstance(X, RegionSet) else eps_stab
    prev = None
    gaps = []
    cloud = None
    used = radii[-1]
    stabilized = False
    for r in radii:
        sec = _section_1d(X, t, r, basis) if k == 1 else _section(X, t, r, basis, plan)
        cur = sec @ basis.T
        if prev is not None:
            gaps.append(_gap(prev, cur))
            if gaps[-1] <= tol:
                cloud, used, stabilized = cur, r, True
                break
        prev = cur
    if cloud is None:
        cloud = prev
    gap = gaps[-1] if gaps else math.inf
    link = ConeLink(n, tuple(t), cloud, used, gap, 0.0, target_codim, stabilized,
                    plan["resolution"], tuple(gaps))
    meas = link_measure(link, seed=seed)
    return ConeLink(n, tuple(t), cloud, used, gap, meas, target_codim, stabilized,
                    plan["resolution"], tuple(gaps))


def sample_link(X, t, radii: Sequence[float] = DEFAULT_RADII, samples_per_radius: int = 10_000,
                seed: int = 0, target_codim: int | None = None, eps_stab: float = EPS_STAB) -> ConeLink:
    """Sample the link of the tangent cone of ``X`` at ``t``.

    ``X`` is a :class:`VarietySet` / :class:`Polynomial` (sampled by chord
    bisection plus Newton projection) or a :class:`RegionSet` / predicate
    (rejection sampling). ``target_codim`` defaults to 2 for varieties and 1
    for regions.
    """
    X = _as_set(X)
    n = len(t)
    if target_codim is None:
        target_codim = 1 if isinstance(X, RegionSet) else 2
    return _sample(X, t, radii, samples_per_radius, seed, np.eye(n), target_codim, eps_stab)


# ---------------------------------------------------------------------------
# strata


@dataclass(frozen=True)
class StratumSpec:
    """Flat stratum ``{origin + sum tau_i e_i : tau in extent}``.

    ``directions`` is a (k, n) array with orthonormal rows; closest-point
    projection and the tube geometry are closed-form.
    """

    origin: tuple[float, ...]
    directions: np.ndarray
    extent: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=float).reshape(-1, len(self.origin))
        if len(d) and not np.allclose(d @ d.T, np.eye(len(d)), atol=1e-12):
            raise DomainError("stratum directions must be orthonormal")
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))
        if len(self.extent) != len(d):
            object.__setattr__(self, "extent", tuple((-math.inf, math.inf) for _ in range(len(d))))

    @property
    def dimension(self) -> int:
        return len(self.directions)

    @property
    def ambient_dim(self) -> int:
        return len(self.origin)

    def parametrization(self, tau):
        tau = np.asarray(tau, dtype=float)
        return np.asarray(self.origin) + tau @ self.directions

    def coordinates(self, x):
        return (np.asarray(x, dtype=float) - np.asarray(self.origin)) @ self.directions.T

    def project(self, x):
        x = np.asarray(x, dtype=float)
        if self.dimension == 0:
            return np.broadcast_to(np.asarray(self.origin), x.shape).copy()
        tau = self.coordinates(x)
        lo = np.array([e[0] for e in self.extent])
        hi = np.array([e[1] for e in self.extent])
        return self.parametrization(np.clip(tau, lo, hi))

    def distance(self, x):
        return np.linalg.norm(np.asarray(x, dtype=float) - self.project(x), axis=-1)

    def tangent_basis(self) -> np.ndarray:
        """(n, k) orthonormal basis of the tangent space."""
        return self.directions.T.copy()

    def normal_basis(self) -> np.ndarray:
        """(n, n-k) orthonormal basis of the normal space."""
        n = self.ambient_dim
        if self.dimension == 0:
            return np.eye(n)
        q, _ = np.linalg.qr(np.concatenate([self.directions.T, np.eye(n)], axis=1))
        return q[:, self.dimension:n]

    def on_stratum(self, x, tol=1e-12):
        return self.distance(x) <= tol


def point_stratum(p) -> StratumSpec:
    return StratumSpec(tuple(p), np.zeros((0, len(p))))


def axis_stratum(axis: int, n: int = 3, extent=(-math.inf, math.inf), origin=None) -> StratumSpec:
    d = np.zeros((1, n))
    d[0, axis] = 1.0
    return StratumSpec(tuple(origin if origin is not None else np.zeros(n)), d, (tuple(extent),))


def sample_normal_link(X, stratum: StratumSpec, t, radii: Sequence[float] = DEFAULT_RADII,
                       samples_per_radius: int = 10_000, seed: int = 0,
                       target_codim: int | None = None, eps_stab: float = EPS_STAB) -> ConeLink:
    """Link of the normal cone: the tangent cone of ``X`` within the fiber
    of the closest-point projection onto ``stratum`` through ``t``."""
    X = _as_set(X)
    t = np.asarray(t, dtype=float)
    if not stratum.on_stratum(t, 1e-9):
        raise DomainError("t is not on the stratum")
    if target_codim is None:
        target_codim = 1 if isinstance(X, RegionSet) else 2
    return _sample(X, t, radii, samples_per_radius, seed, stratum.normal_basis(), target_codim, eps_stab)


# ---------------------------------------------------------------------------
# measures


def _thin(points, spacing):
    """Greedy minimum-distance subsample (keeps the first point of each cluster)."""
    if len(points) == 0:
        return points
    tree = cKDTree(points)
    taken = np.zeros(len(points), bool)
    removed = np.zeros(len(points), bool)
    for i in range(len(points)):
        if removed[i]:
            continue
        taken[i] = True
        removed[tree.query_ball_point(points[i], spacing)] = True
    return points[taken]


def polyline_length(points, gap_factor: float = 5.0, spacing: float | None = None) -> float:
    """Length of a greedy nearest-neighbour chaining of a curve sample.

    Chains break at steps longer than ``gap_factor`` times ``spacing``
    (default: the median nearest-neighbour distance of the sample).
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n < 2:
        return 0.0
    tree = cKDTree(pts)
    if spacing is None:
        spacing = float(np.median(tree.query(pts, k=2)[0][:, 1]))
    visited = np.zeros(n, bool)
    steps = []
    cur = 0
    visited[0] = True
    for _ in range(n - 1):
        k = 8
        nxt = -1
        while nxt < 0:
            kk = min(k, n)
            dist, idx = tree.query(pts[cur], k=kk)
            dist, idx = np.atleast_1d(dist), np.atleast_1d(idx)
            free = ~visited[idx]
            if np.any(free):
                j = np.argmax(free)
                nxt, step = int(idx[j]), float(dist[j])
            elif kk == n:
                break
            else:
                k *= 4
        if nxt < 0:
            break
        steps.append(step)
        visited[nxt] = True
        cur = nxt
    steps = np.asarray(steps)
    return float(steps[steps <= gap_factor * spacing].sum())


def count_clusters(points, threshold: float) -> int:
    pts = np.asarray(points, dtype=float)
    if len(pts) == 0:
        return 0
    from scipy.sparse.csgraph import connected_components

    pairs = cKDTree(pts).query_pairs(threshold, output_type="ndarray")
    from scipy.sparse import coo_matrix

    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(pts), len(pts)))
    return int(connected_components(g, directed=False)[0])


def link_measure(link: ConeLink, probes: int = 20_000, eps_fill: float | None = None,
                 seed: int = 0, thin_spacing: float = 0.01, cluster_threshold: float = 0.05) -> float:
    """Hausdorff-measure estimate of a sampled link.

    Codimension 1: fraction of uniform probes within geodesic ``eps`` of the
    cloud, extrapolated to ``eps -> 0`` from ``eps`` and ``2 eps`` (removes
    the first-order tube excess). Codimension 2: polyline length on S^2,
    cluster count on S^1.
    """
    pts = np.asarray(link.points)
    n = link.ambient_dim
    if len(pts) == 0:
        return 0.0
    if link.target_codim == 1:
        area = sphere_area(n)
        if eps_fill is None:
            eps_fill = max(2.0 * link.resolution, 0.02)
        rng = np.random.default_rng([seed, 7])
        probe = uniform_directions(n, probes, rng)
        dist, _ = cKDTree(pts).query(probe)
        geo = 2 * np.arcsin(np.clip(dist / 2, 0, 1))
        a1 = np.mean(geo <= eps_fill) * area
        a2 = np.mean(geo <= 2 * eps_fill) * area
        return float(np.clip(2 * a1 - a2, 0.0, area))
    if n == 3:
        raw = float(np.median(cKDTree(pts).query(pts, k=2)[0][:, 1])) if len(pts) > 1 else 0.0
        return polyline_length(_thin(pts, thin_spacing), spacing=max(raw, thin_spacing))
    if n == 2:
        return float(count_clusters(pts, cluster_threshold))
    raise DomainError("codimension-2 measure needs n in {2, 3}")


# ---------------------------------------------------------------------------
# criterion


@dataclass(frozen=True)
class CriterionReport:
    t: tuple[float, ...]
    clause1: float
    clause2: float
    alpha: float
    holds: bool
    confidence: str
    complement_link: ConeLink = field(repr=False)
    boundary_link: ConeLink = field(repr=False)


def boundary_set(domain: DomainSpec, seed=None) -> VarietySet:
    """Boundary of the selected component as a filtered union of varieties."""
    polys = tuple(p.poly for p in domain.pieces())

    def keep(x, r):
        x = np.asarray(x, dtype=float)
        out = ~np.asarray(domain.contains(x), bool)
        near = np.zeros(len(x), bool)
        delta = 1e-3 * r
        for p in polys:
            g = p.eval_gradient(x)
            gn = np.linalg.norm(g, axis=1, keepdims=True)
            on = np.abs(p(x)) <= 1e-9 * np.maximum(gn[:, 0], 1e-300) * max(r, 1e-300) + 1e-300
            nu = np.where(gn > 0, g / np.where(gn > 0, gn, 1.0), 0.0)
            side = domain.in_component(x + delta * nu, seed) | domain.in_component(x - delta * nu, seed)
            near |= on & side
        return out & near

    return VarietySet(polys, keep)


def check_criterion(domain: DomainSpec, t, alpha: float | None = None,
                    radii: Sequence[float] = DEFAULT_RADII, samples_per_radius: int = 10_000,
                    seed: int = 0, component_seed=None) -> CriterionReport:
    """Evaluate both clauses of the tangent-cone criterion at a boundary point."""
    t = np.asarray(t, dtype=float)
    n = domain.ambient_dim
    if t.shape != (n,):
        raise DomainError("point dimension does not match the domain")
    if domain.in_component(t, component_seed):
        raise DomainError(f"{t.tolist()} is an interior point, not a boundary point")
    alpha = default_alpha(n) if alpha is None else float(alpha)
    if not alpha > 0:
        raise DomainError("alpha must be positive")

    def outside(x):
        return ~np.asarray(domain.in_component(x, component_seed), bool)

    c1 = sample_link(RegionSet(outside), t, radii, samples_per_radius, seed, target_codim=1)
    c2 = sample_link(boundary_set(domain, component_seed), t, radii, samples_per_radius, seed + 1, target_codim=2)
    ok1 = c1.measure_estimate >= alpha
    ok2 = c2.measure_estimate >= alpha
    holds = bool(ok1 or ok2)
    if holds:
        decisive = [c for c, ok in ((c1, ok1), (c2, ok2)) if ok]
        confident = any(c.stabilized for c in decisive)
    else:
        confident = c1.stabilized and c2.stabilized
    return CriterionReport(tuple(t), c1.measure_estimate, c2.measure_estimate, alpha, holds,
                           "high" if confident else "low", c1, c2)


def product_cloud(normal_link: ConeLink, stratum: StratumSpec, per_direction: int = 400) -> np.ndarray:
    """Link of ``C^S_t(X) x T_tS`` renormalized onto the sphere."""
    T = stratum.tangent_basis()
    k = T.shape[1]
    V = np.asarray(normal_link.points)
    if k == 0:
        return V
    if k == 1:
        tang = np.stack([T[:, 0], -T[:, 0]])
    else:
        rng = np.random.default_rng(11)
        tang = uniform_directions(k, per_direction, rng) @ T.T
    if len(V) == 0:
        return tang
    s = np.linspace(0, math.pi / 2, per_direction)
    c, sn = np.cos(s), np.sin(s)
    out = (c[None, None, :, None] * V[:, None, None, :] + sn[None, None, :, None] * tang[None, :, None, :])
    return out.reshape(-1, V.shape[1])


def check_product_decomposition(X, stratum: StratumSpec, t, radius: float = 1e-3,
                                samples: int = 10_000, seed: int = 0) -> float:
    """Hausdorff distance between the sampled tangent-cone link and the
    product of the normal-cone link with the stratum's tangent space."""
    t = np.asarray(t, dtype=float)
    radii = (2 * radius, radius)
    full = sample_link(X, t, radii, samples, seed)
    normal = sample_normal_link(X, stratum, t, radii, samples, seed + 1)
    prod = product_cloud(normal, stratum)
    if full.empty and len(prod) == 0:
        return 0.0
    return hausdorff_distance(full.points, prod)
