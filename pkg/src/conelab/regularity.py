"""Gradient integrability near boundary points.

Local ``L^p`` masses of ``|grad u|`` over dyadic annuli give a scaling
exponent ``beta(p)``; its zero crossing is the empirical critical exponent.
Slice norms test the Poincare-type inequality along a stratum, and a
distance-weighted gradient norm serves as a diagnostic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cone import StratumSpec
from .fem import _D5_BARY, _D5_W, NumericalError, SolutionField, quad_points
from .polydomain import DomainError, DomainSpec
from .wos import WosConfig, free_radius, wos_gradient

P_GRID = tuple(np.arange(2.0, 8.0 + 1e-9, 0.25))
LEVELS = 8
R0_FRACTION = 0.25
SKIP_INNER = 2
MARGIN = 0.1
MIN_R2 = 0.9
FLAT_SLOPE = 0.25
WOS_LOW_CONFIDENCE = 0.2


@dataclass(frozen=True)
class AnnulusProfile:
    """``table[j, i]`` is the mass of ``|grad u|^p_i`` on ``r_{j+1} < |x - t| < r_j``."""

    center: tuple[float, ...]
    radii: np.ndarray
    p_values: np.ndarray
    table: np.ndarray
    flagged: np.ndarray
    skip_inner: int = SKIP_INNER

    def column(self, p) -> np.ndarray:
        i = int(np.argmin(np.abs(self.p_values - p)))
        if abs(self.p_values[i] - p) > 1e-12:
            raise DomainError(f"p = {p} is not on the profile grid")
        return self.table[:, i]


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    r2: float

    @property
    def low_confidence(self) -> bool:
        return not self.r2 >= MIN_R2


@dataclass(frozen=True)
class CriticalExponent:
    p_star: float | str
    margin: float
    confidence: str
    slopes: tuple[float, ...] = ()


def dyadic_radii(r0: float, levels: int = LEVELS) -> np.ndarray:
    return r0 * 2.0 ** -np.arange(levels + 1)


# ---------------------------------------------------------------------------
# exact triangle / disk overlap


def _sector(u, v, r):
    ang = np.arctan2(u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0], np.sum(u * v, axis=-1))
    return 0.5 * r * r * ang


def _edge_term(a, b, r):
    """Signed area of ``triangle(0, a, b)`` inside the disk of radius ``r``."""
    d = b - a
    A = np.sum(d * d, axis=-1)
    B = 2 * np.sum(a * d, axis=-1)
    C = np.sum(a * a, axis=-1) - r * r
    disc = B * B - 4 * A * C
    sq = np.sqrt(np.maximum(disc, 0))
    Asafe = np.where(A > 0, A, 1.0)
    s1 = np.clip((-B - sq) / (2 * Asafe), 0, 1)
    s2 = np.clip((-B + sq) / (2 * Asafe), 0, 1)
    cut = (disc > 0) & (A > 0)
    s1 = np.where(cut, s1, 0.0)
    s2 = np.where(cut, s2, 0.0)
    # clipped roots take the endpoints exactly: a + 1 * d can round far from b
    # when b is tiny, and the sector angle between near-zero vectors blows up
    p1 = np.where((s1 >= 1)[..., None], b, a + s1[..., None] * d)
    p2 = np.where((s2 >= 1)[..., None], b, a + s2[..., None] * d)
    tri = 0.5 * (p1[..., 0] * p2[..., 1] - p1[..., 1] * p2[..., 0])
    return _sector(a, p1, r) + tri + _sector(p2, b, r)


def triangle_disk_area(P, center, r):
    """Exact area of each triangle ``P`` (m, 3, 2, CCW) inside ``B(center, r)``."""
    P = np.asarray(P, float) - np.asarray(center, float)
    r = np.asarray(r, float)
    if r.ndim:
        P = P[None]
        r = r[:, None]
    return sum(_edge_term(P[..., i, :], P[..., (i + 1) % 3, :], r) for i in range(3))


# ---------------------------------------------------------------------------
# profiles


def _radii(domain_radius, r0, levels, radii):
    if radii is not None:
        radii = np.asarray(radii, float)
        if np.any(np.diff(radii) >= 0):
            raise DomainError("annulus radii must decrease")
        return radii
    return dyadic_radii(R0_FRACTION * domain_radius if r0 is None else r0, levels)


def annulus_profile(u, t, r0=None, levels: int = LEVELS, p_values=P_GRID, radii=None,
                    domain: DomainSpec | None = None, **kw) -> AnnulusProfile:
    """Gradient ``L^p`` masses over dyadic annuli around ``t``.

    ``u`` may be a :class:`SolutionField` (per-triangle exact overlap
    areas), a :class:`WosConfig` (stratified Monte Carlo with CRN gradients)
    or any planar field with a ``gradient`` method, integrated on a polar
    grid restricted to ``domain``.
    """
    p_values = np.asarray(p_values, float)
    t = np.asarray(t, float)
    if isinstance(u, SolutionField):
        R = np.ptp(u.mesh.vertices, axis=0).max() / 2
        return _fem_profile(u, t, _radii(R, r0, levels, radii), p_values)
    if isinstance(u, WosConfig):
        return _wos_profile(u, t, _radii(u.domain.radius, r0, levels, radii), p_values, **kw)
    R = domain.radius if domain is not None else 1.0
    return _analytic_profile(u, t, _radii(R, r0, levels, radii), p_values, domain, **kw)


def _fem_profile(u, t, radii, p_values):
    P = u.mesh.vertices[u.mesh.triangles]
    g = u.gradient_norms()
    # only triangles that can meet the outer disk
    near = np.min(np.linalg.norm(P - t, axis=2), axis=1) <= radii[0] + u.mesh.diameters()
    P, g = P[near], g[near]
    inside = triangle_disk_area(P, t, radii)  # (levels+1, m)
    ring = np.maximum(inside[:-1] - inside[1:], 0.0)
    with np.errstate(divide="ignore"):
        gp = np.where(g[:, None] > 0, g[:, None] ** p_values[None], 0.0)
    table = ring @ gp
    flagged = ring.sum(axis=1) <= 0
    return AnnulusProfile(tuple(t.tolist()), radii, p_values, table, flagged, SKIP_INNER)


def _analytic_profile(u, t, radii, p_values, domain, n_r=48, n_theta=512):
    if len(t) != 2:
        raise DomainError("analytic profiles are planar")
    xg, wg = np.polynomial.legendre.leggauss(n_r)
    th = (np.arange(n_theta) + 0.5) * 2 * np.pi / n_theta
    rows, flags = [], []
    for r_out, r_in in zip(radii[:-1], radii[1:]):
        r = 0.5 * (r_out - r_in) * xg + 0.5 * (r_out + r_in)
        w = 0.5 * (r_out - r_in) * wg * r * (2 * np.pi / n_theta)
        pts = t + np.stack([np.outer(r, np.cos(th)), np.outer(r, np.sin(th))], axis=-1).reshape(-1, 2)
        ww = np.repeat(w, n_theta)
        ok = np.ones(len(pts), bool) if domain is None else np.asarray(domain.contains(pts), bool)
        g = np.linalg.norm(np.asarray(u.gradient(pts[ok])), axis=-1)
        rows.append([np.sum(ww[ok] * g**p) for p in p_values])
        flags.append(not ok.any())
    return AnnulusProfile(tuple(t.tolist()), radii, p_values, np.array(rows), np.array(flags), 0)


def _wos_profile(cfg, t, radii, p_values, samples=16, seed=0):
    n = len(t)
    rng = np.random.default_rng(seed)
    rows, flags = [], []
    for r_out, r_in in zip(radii[:-1], radii[1:]):
        # stratified in radius (equal volume shells) with random directions
        q = (np.arange(samples) + rng.random(samples)) / samples
        rr = (r_in**n + q * (r_out**n - r_in**n)) ** (1 / n)
        d = rng.standard_normal((samples, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts = t + rr[:, None] * d
        inside = np.asarray(cfg.domain.contains(pts), bool)
        vol = (r_out**n - r_in**n) * (np.pi if n == 2 else 4 * np.pi / 3) * inside.mean()
        grads, low = [], 0
        for x in pts[inside]:
            h = min(0.5 * r_in, 0.5 * free_radius(cfg, x))
            if h <= 0:
                low += 1
                continue
            g = wos_gradient(cfg, x, h)
            # judged on the norm: a vanishing component is not a failure here
            low += bool(np.linalg.norm(g.stderr) > 0.5 * np.linalg.norm(g.value))
            grads.append(np.linalg.norm(g.value))
        grads = np.array(grads)
        m = [vol * np.mean(grads**p) if len(grads) else 0.0 for p in p_values]
        rows.append(m)
        k = max(int(inside.sum()), 1)
        flags.append(not inside.any() or low > WOS_LOW_CONFIDENCE * k)
    return AnnulusProfile(tuple(t.tolist()), radii, p_values, np.array(rows), np.array(flags), 0)


# ---------------------------------------------------------------------------
# exponents


def fit_scaling_exponent(profile: AnnulusProfile, p) -> ScalingFit:
    """Least-squares slope of ``log m_j(p)`` against ``log r_j``.

    The ``skip_inner`` innermost annuli and flagged or empty ones are left
    out; at least four must remain.
    """
    m = profile.column(p)
    r = profile.radii[:-1]
    use = ~profile.flagged & (m > 0)
    if profile.skip_inner:
        use[-profile.skip_inner:] = False
    if use.sum() < 4:
        raise DomainError("fewer than four resolved annuli")
    x, y = np.log(r[use]), np.log(m[use])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return ScalingFit(float(slope), float(r2))


def critical_exponent(profile: AnnulusProfile, margin: float = MARGIN) -> CriticalExponent:
    """Zero crossing of ``beta(p)`` over the profile's p-grid.

    Returns ``"unbounded"`` when ``beta`` at the largest ``p`` still
    exceeds ``margin``.
    """
    ps = profile.p_values
    fits = [fit_scaling_exponent(profile, p) for p in ps]
    beta = np.array([f.slope for f in fits])
    if all(f.low_confidence for f in fits):
        raise NumericalError("every scaling fit is low-confidence; no exponent estimate")
    # r^2 says nothing about a flat fit, so only clearly sloped ones count
    sloped = [f for f in fits if abs(f.slope) >= FLAT_SLOPE]
    conf = "low" if not sloped or any(f.low_confidence for f in sloped) else "high"
    if beta[-1] > margin:
        return CriticalExponent("unbounded", margin, conf, tuple(beta))
    neg = np.nonzero(beta <= 0)[0]
    if len(neg) == 0:
        # between 0 and the margin at p_max: crossing lies just beyond the grid
        return CriticalExponent(float(ps[-1]), margin, "low", tuple(beta))
    k = int(neg[0])
    if k == 0:
        return CriticalExponent(float(ps[0]), margin, "low", tuple(beta))
    p0, p1, b0, b1 = ps[k - 1], ps[k], beta[k - 1], beta[k]
    p_star = p0 + (p1 - p0) * b0 / (b0 - b1)
    return CriticalExponent(float(p_star), margin, conf, tuple(beta))


# ---------------------------------------------------------------------------
# slices


@dataclass(frozen=True)
class SliceSpec:
    """Level sets ``d(x, S) = eta`` inside the tube of width ``delta``.

    Strata of positive dimension need a finite ``extent``; slices are the
    lateral part over it.
    """

    stratum: StratumSpec
    delta: float
    etas: tuple[float, ...]
    p: float = 2.0

    def __post_init__(self):
        if any(not 0 < e < self.delta for e in self.etas):
            raise DomainError("slice levels must satisfy 0 < eta < delta")
        if any(not np.isfinite(a) or not np.isfinite(b) for a, b in self.stratum.extent):
            raise DomainError("slices need a stratum of finite extent")


def _slice_points(stratum: StratumSpec, eta, n_tan=64, n_norm=64, n_circle=2048):
    """Quadrature nodes and weights on ``{d(x, S) = eta}`` (lateral part)."""
    n, k = stratum.ambient_dim, stratum.dimension
    N = stratum.normal_basis()
    c = n - k
    if c == 1:
        offs, w_norm = np.array([[eta], [-eta]]), np.array([1.0, 1.0])
    elif c == 2:
        m = n_circle if k == 0 else n_norm
        th = (np.arange(m) + 0.5) * 2 * np.pi / m
        offs = eta * np.stack([np.cos(th), np.sin(th)], 1)
        w_norm = np.full(m, 2 * np.pi * eta / m)
    elif c == 3:
        # equal-area grid on the sphere
        mu = (np.arange(n_norm) + 0.5) / n_norm * 2 - 1
        ph = (np.arange(n_norm) + 0.5) * 2 * np.pi / n_norm
        M, PH = np.meshgrid(mu, ph, indexing="ij")
        s = np.sqrt(1 - M**2)
        offs = eta * np.stack([s * np.cos(PH), s * np.sin(PH), M], -1).reshape(-1, 3)
        w_norm = np.full(len(offs), 4 * np.pi * eta**2 / len(offs))
    else:
        raise DomainError("unsupported slice codimension")
    offs = offs @ N.T
    if k == 0:
        return np.asarray(stratum.origin) + offs, w_norm
    grids = [np.linspace(a, b, n_tan + 1) for a, b in stratum.extent]
    mids = [0.5 * (g[1:] + g[:-1]) for g in grids]
    taus = np.stack(np.meshgrid(*mids, indexing="ij"), -1).reshape(-1, k)
    w_tan = np.prod([(b - a) / n_tan for a, b in stratum.extent])
    base = stratum.parametrization(taus)
    pts = (base[:, None, :] + offs[None]).reshape(-1, n)
    return pts, np.tile(w_norm, len(base)) * w_tan


def _tube_points(stratum: StratumSpec, eta, n_tan=64, n_norm=64):
    """Nodes and weights for ``{d(x, S) < eta}`` around a hypersurface stratum."""
    k = stratum.dimension
    N = stratum.normal_basis()[:, 0]
    s = ((np.arange(n_norm) + 0.5) / n_norm * 2 - 1) * eta
    grids = [np.linspace(a, b, n_tan + 1) for a, b in stratum.extent]
    mids = [0.5 * (g[1:] + g[:-1]) for g in grids]
    taus = np.stack(np.meshgrid(*mids, indexing="ij"), -1).reshape(-1, max(k, 1))
    base = stratum.parametrization(taus) if k else np.asarray(stratum.origin)[None]
    pts = (base[:, None, :] + s[None, :, None] * N).reshape(-1, stratum.ambient_dim)
    w = np.prod([(b - a) / n_tan for a, b in stratum.extent]) * (2 * eta / n_norm)
    return pts, np.full(len(pts), w)


def _field_eval(u, pts):
    vals = np.asarray(u(pts), float)
    grads = np.asarray(u.gradient(pts), float)
    return vals, np.linalg.norm(grads, axis=-1)


def slice_poincare_ratio(u, spec: SliceSpec, domain: DomainSpec | None = None):
    """Rows ``(eta, num, den, ratio)``: ``||u||_p`` over the slice against
    ``||grad u||_p`` over the slice (or over the tube for hypersurfaces).

    Levels where the slice misses the domain are skipped; a zero
    denominator is reported as ``"degenerate"``.
    """
    p = spec.p
    hyper = spec.stratum.dimension == spec.stratum.ambient_dim - 1
    rows = []
    for eta in spec.etas:
        pts, w = _slice_points(spec.stratum, eta)
        ok = np.ones(len(pts), bool) if domain is None else np.asarray(domain.contains(pts), bool)
        vals, gn = _field_eval(u, pts[ok]) if ok.any() else (np.zeros(0), np.zeros(0))
        fin = np.isfinite(vals) & np.isfinite(gn)
        if not fin.any():
            continue
        num = np.sum(w[ok][fin] * np.abs(vals[fin]) ** p) ** (1 / p)
        if hyper:
            tp, tw = _tube_points(spec.stratum, eta)
            tok = np.ones(len(tp), bool) if domain is None else np.asarray(domain.contains(tp), bool)
            _, tg = _field_eval(u, tp[tok])
            tf = np.isfinite(tg)
            den = np.sum(tw[tok][tf] * tg[tf] ** p) ** (1 / p)
        else:
            den = np.sum(w[ok][fin] * gn[fin] ** p) ** (1 / p)
        if den == 0:
            rows.append((float(eta), float(num), float(den), "degenerate"))
        else:
            rows.append((float(eta), float(num), float(den), float(num / den)))
    return rows


def slice_slope(rows) -> float:
    """Log-log slope of the ratio against ``eta`` over non-degenerate rows."""
    use = [(e, r) for e, _, _, r in rows if r != "degenerate" and r > 0]
    if len(use) < 2:
        raise DomainError("fewer than two usable slice levels")
    e, r = np.array(use).T
    return float(np.polyfit(np.log(e), np.log(r), 1)[0])


# ---------------------------------------------------------------------------
# weighted norms


@dataclass(frozen=True)
class WeightSpec:
    """Weight ``d(x, X)^kappa`` raised to the power ``N``."""

    points: np.ndarray
    kappa: float = 1.0
    power: float = 1.0

    def __post_init__(self):
        if self.kappa < 1:
            raise DomainError("kappa must be >= 1")
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, float)))

    def __call__(self, x):
        d, _ = cKDTree(self.points).query(np.asarray(x, float))
        return d ** (self.kappa * self.power)


def weighted_gradient_norm(u: SolutionField, w: WeightSpec | None, p: float) -> float:
    """``int (w |grad u|)^p`` by a degree-5 rule per triangle."""
    m = u.mesh
    g = u.gradient_norms()
    area = m.areas()
    if w is None or w.kappa * w.power == 0:
        return float(np.sum(area * g**p))
    x = quad_points(m.vertices, m.triangles, _D5_BARY)
    wq = w(x.reshape(-1, 2)).reshape(x.shape[:2]) ** p
    return float(np.sum(area * g**p * (wq @ _D5_W)))
