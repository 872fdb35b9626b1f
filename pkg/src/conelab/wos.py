"""Walk-on-spheres estimates for harmonic functions in three dimensions.

Walks jump to a uniform point on the largest sphere that a conservative
distance bound certifies free of the Dirichlet boundary. A Neumann bounding
sphere is handled by reflecting exits back through it by inversion, so the
only absorbing boundary is the variety.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .polydomain import DomainError, DomainSpec, LocalDistance, newton_project

BLOCK = 4096
NEUMANN_STEP = 0.05   # step floor near a reflecting sphere, in units of its radius
EXCLUSION_LIMIT = 0.01
DISTANCE_ITERATIONS = 24


@dataclass(frozen=True)
class WosConfig:
    """Walker budget and tolerances for one domain.

    ``eps`` defaults to ``1e-4 * radius``.
    """

    domain: DomainSpec
    walkers: int = 10000
    eps: float | None = None
    max_steps: int = 100000
    seed: int = 0
    block: int = BLOCK
    workers: int = 1
    _pieces: tuple = field(init=False, repr=False, compare=False)
    reflecting: bool = field(init=False, compare=False)

    def __post_init__(self):
        d = self.domain
        if d.ambient_dim != 3:
            raise DomainError("walk-on-spheres is implemented for n = 3")
        if self.walkers < 1:
            raise DomainError("walkers must be >= 1")
        if self.eps is None:
            object.__setattr__(self, "eps", 1e-4 * d.radius)
        if not self.eps > 0:
            raise DomainError("eps must be positive")
        if not d.operator.is_identity():
            raise DomainError("walk-on-spheres needs A = I")
        probe = np.random.default_rng(0).uniform(-1, 1, (64, 3)) * d.radius + np.asarray(d.center)
        if np.any(np.asarray(d.source(probe)) != 0):
            raise DomainError("volume source unsupported in 3D")
        dir_p, neu = d.dirichlet_pieces(), d.neumann_pieces()
        if neu - {"sphere"}:
            raise DomainError("the sphere reflection needs the Neumann part to be the sphere alone")
        if "sphere" in neu and np.any(np.asarray(d.neumann_data(probe)) != 0):
            raise DomainError("the sphere reflection only realizes zero Neumann data")
        names = {p.name for p in d.pieces()}
        if names - dir_p - neu:
            raise DomainError(f"boundary pieces without data: {sorted(names - dir_p - neu)}")
        pieces = tuple((p.name, p.poly, LocalDistance(p.poly)) for p in d.pieces() if p.name != "sphere")
        object.__setattr__(self, "_pieces", pieces)
        object.__setattr__(self, "reflecting", "sphere" in neu)


@dataclass(frozen=True)
class WosResult:
    mean: float
    stderr: float
    steps: float
    excluded: int
    walkers: int

    @property
    def flagged(self) -> bool:
        return self.excluded > EXCLUSION_LIMIT * self.walkers


def _distances(cfg: WosConfig, x):
    """Lower bound on the distance to each variety piece, shape (m, k)."""
    if not cfg._pieces:
        return np.full((len(x), 0), np.inf)
    return np.stack([ld(x, iterations=DISTANCE_ITERATIONS) for _, _, ld in cfg._pieces], axis=1)


def _invert(y, c, R):
    v = y - c
    r2 = np.sum(v * v, axis=1, keepdims=True)
    return c + R * R * v / r2


def _walk_block(cfg: WosConfig, x0, rng):
    """Values of ``g`` at walk ends for one block (NaN where excluded)."""
    d = cfg.domain
    c = np.asarray(d.center, float)
    R = d.radius
    m = cfg.block
    x = np.tile(np.asarray(x0, float), (m, 1))
    out = np.full(m, np.nan)
    steps = np.zeros(m, np.int64)
    alive = np.arange(m)
    for _ in range(cfg.max_steps):
        if len(alive) == 0:
            break
        p = x[alive]
        dv = _distances(cfg, p)
        dvar = dv.min(axis=1) if dv.shape[1] else np.full(len(p), np.inf)
        dsph = R - np.linalg.norm(p - c, axis=1)
        if cfg.reflecting:
            hit_var, hit_sph = dvar < cfg.eps, np.zeros(len(p), bool)
        else:
            hit_var = (dvar < cfg.eps) & (dvar <= dsph)
            hit_sph = (dsph < cfg.eps) & ~hit_var
        done = hit_var | hit_sph
        if np.any(hit_var):
            k = np.nonzero(hit_var)[0]
            which = np.argmin(dv[k], axis=1)
            q = p[k].copy()
            for j, (_, poly, _) in enumerate(cfg._pieces):
                s = which == j
                if np.any(s):
                    q[s] = newton_project(poly, q[s])
            out[alive[k]] = d.dirichlet_data(q)
        if np.any(hit_sph):
            k = np.nonzero(hit_sph)[0]
            v = p[k] - c
            q = c + R * v / np.linalg.norm(v, axis=1, keepdims=True)
            out[alive[k]] = d.dirichlet_data(q)
        keep = ~done
        alive, p, dvar, dsph = alive[keep], p[keep], dvar[keep], dsph[keep]
        if len(alive) == 0:
            break
        if cfg.reflecting:
            # crossing the sphere: a third of the variety distance keeps the
            # reflected image in the same component
            near = dsph < np.minimum(dvar, NEUMANN_STEP * R)
            r = np.where(near, np.minimum(dvar / 3, NEUMANN_STEP * R), np.minimum(dvar, dsph))
        else:
            r = np.minimum(dvar, dsph)
        u = rng.standard_normal((len(alive), 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        y = p + r[:, None] * u
        if cfg.reflecting:
            outside = np.linalg.norm(y - c, axis=1) > R
            if np.any(outside):
                y[outside] = _invert(y[outside], c, R)
        x[alive] = y
        steps[alive] += 1
    return out, steps


def _walk(cfg: WosConfig, x):
    x = np.asarray(x, float)
    if x.shape != (3,):
        raise DomainError("walk start must be a 3-vector")
    if not cfg.domain.contains(x):
        raise DomainError(f"start point {x.tolist()} is not in the domain")
    nblocks = -(-cfg.walkers // cfg.block)
    # each block has its own substream and results are gathered in block
    # order, so the estimate does not depend on the worker count
    children = np.random.SeedSequence(cfg.seed).spawn(nblocks)
    run = lambda child: _walk_block(cfg, x, np.random.default_rng(child))  # noqa: E731
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(run, children))
    else:
        results = [run(ch) for ch in children]
    vals = [v for v, _ in results]
    steps = [s for _, s in results]
    return np.concatenate(vals)[: cfg.walkers], np.concatenate(steps)[: cfg.walkers]


def _summarize(vals, steps) -> WosResult:
    ok = ~np.isnan(vals)
    n = int(ok.sum())
    if n == 0:
        return WosResult(np.nan, np.nan, float(steps.mean()), len(vals), len(vals))
    v = vals[ok]
    se = float(v.std(ddof=1) / np.sqrt(n)) if n > 1 else np.inf
    return WosResult(float(v.mean()), se, float(steps.mean()), len(vals) - n, len(vals))


def wos_estimate(cfg: WosConfig, x) -> WosResult:
    """Mean of the boundary data over walk ends, with its standard error."""
    return _summarize(*_walk(cfg, x))


@dataclass(frozen=True)
class WosGradient:
    value: np.ndarray
    stderr: np.ndarray

    @property
    def low_confidence(self) -> bool:
        return bool(np.any(self.stderr > 0.5 * np.abs(self.value)))


def free_radius(cfg: WosConfig, x) -> float:
    """Conservative radius of a ball around ``x`` inside the domain."""
    x = np.atleast_2d(np.asarray(x, float))
    dv = _distances(cfg, x)
    r = float(dv.min()) if dv.shape[1] else np.inf
    return min(r, float(cfg.domain.radius - np.linalg.norm(x[0] - np.asarray(cfg.domain.center))))


def wos_gradient(cfg: WosConfig, x, h: float) -> WosGradient:
    """Central differences with common random numbers along each axis."""
    x = np.asarray(x, float)
    if free_radius(cfg, x) <= h:
        raise DomainError("the difference stencil leaves the domain")
    g, se = np.zeros(3), np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        vp, _ = _walk(cfg, x + e)
        vm, _ = _walk(cfg, x - e)
        ok = ~(np.isnan(vp) | np.isnan(vm))
        diff = (vp[ok] - vm[ok]) / (2 * h)
        g[i] = diff.mean()
        se[i] = diff.std(ddof=1) / np.sqrt(len(diff)) if len(diff) > 1 else np.inf
    return WosGradient(g, se)


def wos_batch(cfg: WosConfig, points):
    """Yield one record per point: point, mean, stderr, steps, flags."""
    for x in np.atleast_2d(np.asarray(points, float)):
        r = wos_estimate(cfg, x)
        flags = "excluded>1%" if r.flagged else ""
        yield {"point": tuple(x.tolist()), "mean": r.mean, "stderr": r.stderr, "steps": r.steps,
               "excluded": r.excluded, "flags": flags}
