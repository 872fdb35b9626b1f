"""Boundary-fitted, graded triangulations of planar semialgebraic domains.

The background is a balanced quadtree on the lattice of multiples of ``h``.
Leaves are split into right triangles (a centre fan where a neighbour is
finer), vertices close to the boundary are pulled onto it, remaining
boundary crossings are cut out, and triangles are kept by centroid
membership. Slits are opened by duplicating vertices along them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .polydomain import DomainError, DomainSpec, Polynomial

DIRICHLET = "DIRICHLET"
NEUMANN = "NEUMANN"
EPS_FIT = 1e-8
SNAP_FRACTION = 0.4
MIN_SNAP_ANGLE = 15.0


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple[str, ...]
    boundary_pieces: tuple[str, ...] = ()
    grading_centers: tuple[tuple[tuple[float, float], float], ...] = ()
    h: float = 0.0
    local_size: np.ndarray | None = None
    flagged: tuple[int, ...] = ()
    ring: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.triangles)

    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d = [np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)]
        return np.max(d, axis=0)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)


def triangle_areas(v, t):
    p = v[t]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


# ---------------------------------------------------------------------------
# sizing


def size_function(h: float, grading, R: float):
    """Target element size: ``h * (d/R)^((gamma-1)/gamma)`` near each centre,
    floored at ``h^gamma / R^(gamma-1)``."""
    grading = [(np.asarray(c, float), float(g)) for c, g in grading]
    for _, g in grading:
        if g < 1:
            raise DomainError("grading exponent must be >= 1")

    def size(x):
        x = np.asarray(x, float)
        out = np.full(x.shape[:-1], float(h))
        for c, g in grading:
            d = np.linalg.norm(x - c, axis=-1)
            floor = h**g / R ** (g - 1)
            out = np.minimum(out, np.maximum(h * (d / R) ** ((g - 1) / g), floor))
        return out

    return size


# ---------------------------------------------------------------------------
# quadtree


def _quadtree(lo, n_root, h, size, keep_cell, max_level=30):
    """Leaves as (level, i, j) integer cells; cell (l, i, j) has size h/2^l and
    lower-left corner lo + (i, j) * h/2^l."""

    def cell_box(c):
        l, i, j = c
        s = h / 2**l
        return lo + np.array([i, j]) * s, s

    def wants_split(c):
        if c[0] >= max_level:
            return False
        corner, s = cell_box(c)
        # smallest target size over the cell: query the closest point to each centre
        return s > _min_size_on_cell(size, corner, s)

    leaves = set()
    stack = [(0, i, j) for i in range(n_root[0]) for j in range(n_root[1])]
    stack = [c for c in stack if keep_cell(*cell_box(c))]
    while stack:
        c = stack.pop()
        if wants_split(c):
            l, i, j = c
            kids = [(l + 1, 2 * i + a, 2 * j + b) for a in (0, 1) for b in (0, 1)]
            stack.extend(k for k in kids if keep_cell(*cell_box(k)))
        else:
            leaves.add(c)
    return _balance(leaves, keep_cell, cell_box), cell_box


def _min_size_on_cell(size, corner, s):
    pts = corner + s * np.array([[0, 0], [1, 0], [0, 1], [1, 1], [0.5, 0.5]])
    val = size(pts).min()
    centres = getattr(size, "centres", None)
    if centres:
        for c in centres:
            q = np.clip(c, corner, corner + s)
            val = min(val, float(size(q[None])[0]))
    return val


def _balance(leaves, keep_cell, cell_box):
    """Enforce the 2:1 rule across edges."""
    leaves = set(leaves)

    def find_leaf(l, i, j):
        # leaf covering cell (l, i, j) at level <= l, or None
        while l >= 0:
            if (l, i, j) in leaves:
                return (l, i, j)
            l, i, j = l - 1, i >> 1, j >> 1
        return None

    changed = True
    while changed:
        changed = False
        for c in sorted(leaves, key=lambda c: -c[0]):
            if c not in leaves:
                continue
            l, i, j = c
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nb = find_leaf(l, i + di, j + dj)
                if nb is not None and nb[0] < l - 1:
                    leaves.discard(nb)
                    L, I, J = nb
                    for a in (0, 1):
                        for b in (0, 1):
                            k = (L + 1, 2 * I + a, 2 * J + b)
                            if keep_cell(*cell_box(k)):
                                leaves.add(k)
                    changed = True
    return leaves


def _triangulate_leaves(leaves, cell_box, lo, h):
    """Right triangles on the leaves; centre fans where edges carry hanging nodes."""
    L = max(c[0] for c in leaves) + 1  # integer grid at half the finest size
    unit = h / 2**L
    key_of = {}
    coords = []
    lsize = []

    def vid(ix, iy, s):
        k = (ix, iy)
        if k not in key_of:
            key_of[k] = len(coords)
            coords.append(lo + unit * np.array([ix, iy], float))
            lsize.append(s)
        else:
            lsize[key_of[k]] = min(lsize[key_of[k]], s)
        return key_of[k]

    corner_keys = set()
    for l, i, j in leaves:
        m = 2 ** (L - l)
        for a in (0, 1):
            for b in (0, 1):
                corner_keys.add(((i + a) * m, (j + b) * m))
    tris = []
    for l, i, j in sorted(leaves):
        m = 2 ** (L - l)
        s = h / 2**l
        x0, y0 = i * m, j * m
        ring = [(x0, y0), (x0 + m // 2, y0), (x0 + m, y0), (x0 + m, y0 + m // 2),
                (x0 + m, y0 + m), (x0 + m // 2, y0 + m), (x0, y0 + m), (x0, y0 + m // 2)]
        hanging = [k for k in ring[1::2] if k in corner_keys]
        if not hanging:
            a, b, c, d = (vid(*ring[0], s), vid(*ring[2], s), vid(*ring[4], s), vid(*ring[6], s))
            tris += [(a, b, c), (a, c, d)]
        else:
            poly = [vid(*k, s) for k in ring if k in corner_keys or k in ring[0::2]]
            ctr = vid(x0 + m // 2, y0 + m // 2, s)
            for p, q in zip(poly, poly[1:] + poly[:1]):
                tris.append((p, q, ctr))
    return np.array(coords), np.array(tris, dtype=np.int64), np.array(lsize)


# ---------------------------------------------------------------------------
# boundary fitting


def _newton_onto(p: Polynomial, x, iterations=40):
    """Vectorized gradient-direction Newton onto ``{p = 0}``; returns (points, converged)."""
    x = np.array(x, float, ndmin=2)
    for _ in range(iterations):
        g = p.eval_gradient(x)
        g2 = np.sum(g * g, axis=1)
        safe = g2 > 0
        x = x - np.where(safe, p(x) / np.where(safe, g2, 1.0), 0.0)[:, None] * g
    gn = np.linalg.norm(p.eval_gradient(x), axis=1)
    ok = np.abs(p(x)) <= 1e-13 * np.maximum(1.0, gn)
    return x, ok


def _on_boundary(domain, q, scale, seed):
    """Which points of ``q`` lie on the boundary of the selected component.

    Tested on a small circle around each point (points produced by Newton
    projection sit on the boundary only up to rounding, so the point itself
    may test either way).
    """
    q = np.array(q, float, ndmin=2)
    scale = np.broadcast_to(np.asarray(scale, float), q.shape[:1])
    in_ball = np.linalg.norm(q - np.asarray(domain.center), axis=1) <= domain.radius * (1 + 1e-12)
    ang = np.linspace(0, 2 * math.pi, 16, endpoint=False)
    circ = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    ring = q[:, None, :] + 1e-3 * scale[:, None, None] * circ[None]
    inside = np.asarray(domain.in_component(ring.reshape(-1, 2), seed), bool).reshape(len(q), -1)
    here = np.asarray(domain.in_component(q, seed), bool)
    return in_ball & inside.any(axis=1) & (~inside.all(axis=1) | ~here)


def _pair_intersections(f, g, lo, hi, step):
    """Common zeros of two polynomials by Newton from a seed grid."""
    xs = np.arange(lo[0], hi[0] + step / 2, step)
    ys = np.arange(lo[1], hi[1] + step / 2, step)
    seeds = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1).reshape(-1, 2)
    x = seeds.copy()
    for _ in range(40):
        F = np.stack([f(x), g(x)], axis=1)
        J = np.stack([f.eval_gradient(x), g.eval_gradient(x)], axis=1)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        ok = np.abs(det) > 1e-300
        d = np.where(ok, det, 1.0)
        dx = np.stack([(J[:, 1, 1] * F[:, 0] - J[:, 0, 1] * F[:, 1]) / d,
                       (-J[:, 1, 0] * F[:, 0] + J[:, 0, 0] * F[:, 1]) / d], axis=1)
        x = x - np.where(ok[:, None], dx, 0.0)
    F = np.stack([f(x), g(x)], axis=1)
    good = (np.abs(F).max(axis=1) < 1e-12) & (np.linalg.norm(x - seeds, axis=1) <= 2 * step)
    out = []
    for p in x[good]:
        if not any(np.linalg.norm(p - o) < 1e-9 for o in out):
            out.append(p)
    return out


def find_corners(domain: DomainSpec, step: float, seed=None):
    """Points of the boundary where two pieces meet."""
    pieces = domain.pieces()
    c = np.asarray(domain.center)
    R = domain.radius
    corners = []
    for a in range(len(pieces)):
        for b in range(a + 1, len(pieces)):
            f, g = pieces[a].poly, pieces[b].poly
            if f.degree() < 1 or g.degree() < 1:
                continue
            cand = _pair_intersections(f, g, c - R, c + R, step)
            if not cand:
                continue
            cand = np.array(cand)
            keep = _on_boundary(domain, cand, step, seed)
            for x in cand[keep]:
                if not any(np.linalg.norm(x - o) < 1e-9 for o in corners):
                    corners.append(x)
    return corners


def _piece_distances(pieces, x):
    """First-order distance ``|f|/|grad f|`` from each point to each piece, (K, P)."""
    out = np.empty((len(x), len(pieces)))
    for j, pc in enumerate(pieces):
        v = pc.poly(x)
        g = np.linalg.norm(pc.poly.eval_gradient(x), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(g > 0, np.abs(v) / np.where(g > 0, g, 1.0), np.where(v == 0, 0.0, np.inf))
        out[:, j] = d
    return out


def _nearest_piece(pieces, x):
    x = np.array(x, float, ndmin=2)
    d = _piece_distances(pieces, x)
    j = int(np.argmin(d[0]))
    return pieces[j], float(d[0, j])


def _edge_lengths_min(V, T):
    E = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    L = np.linalg.norm(V[E[:, 0]] - V[E[:, 1]], axis=1)
    out = np.full(len(V), np.inf)
    np.minimum.at(out, E[:, 0], L)
    np.minimum.at(out, E[:, 1], L)
    return out


def build_mesh(domain: DomainSpec, h: float, grading=(), component_seed=None) -> TriMesh:
    """Graded, boundary-fitted triangulation of a planar domain.

    ``grading`` is a sequence of ``(point, gamma)``; element size near each
    point follows ``h * (d/R)^((gamma-1)/gamma)``.
    """
    if domain.ambient_dim != 2:
        raise DomainError("build_mesh needs a planar domain")
    if not h > 0:
        raise DomainError("mesh size h must be positive")
    seed = domain.component_seed if component_seed is None else component_seed
    c = np.asarray(domain.center, float)
    R = domain.radius
    grading = tuple((tuple(float(v) for v in p), float(g)) for p, g in grading)
    size = size_function(h, grading, R)
    size.centres = [np.asarray(p, float) for p, _ in grading]
    lo = np.floor((c - R) / h) * h
    hi = np.ceil((c + R) / h) * h
    n_root = np.round((hi - lo) / h).astype(int)

    def keep_cell(corner, s):
        # cell meets the ball
        q = np.clip(c, corner, corner + s)
        return np.linalg.norm(q - c) < R

    leaves, cell_box = _quadtree(lo, n_root, h, size, keep_cell)
    if not leaves:
        raise DomainError("domain is empty at this resolution")
    V, T, _ = _triangulate_leaves(leaves, cell_box, lo, h)
    V = V.copy()
    lsize = _edge_lengths_min(V, T)
    pieces = domain.pieces()
    locked = np.zeros(len(V), bool)

    # corners first
    for q in find_corners(domain, h / 2, seed):
        d = np.linalg.norm(V - q, axis=1)
        k = int(np.argmin(d))
        if d[k] <= 0.5 * lsize[k] + 1e-12:
            V[k] = q
            locked[k] = True

    # snap vertices lying close to an active part of the boundary
    dist = _piece_distances(pieces, V)
    near = np.argmin(dist, axis=1)
    dmin = dist[np.arange(len(V)), near]
    cand = (~locked) & (dmin > 0) & (dmin < SNAP_FRACTION * lsize)
    targets = np.full((len(V), 2), np.nan)
    for j, pc in enumerate(pieces):
        idx = np.nonzero(cand & (near == j))[0]
        if len(idx) == 0:
            continue
        q, ok = _newton_onto(pc.poly, V[idx])
        ok &= np.linalg.norm(q - V[idx], axis=1) <= 0.45 * lsize[idx]
        ok &= _on_boundary(domain, q, lsize[idx], seed)
        targets[idx[ok]] = q[ok]
    _guarded_snap(V, T, targets, dmin)

    # cut edges that still cross an active boundary piece
    V, T, lsize = _cut_crossings(domain, pieces, V, T, lsize, seed)

    # keep triangles by centroid membership
    cen = V[T].mean(axis=1)
    inside = np.asarray(domain.in_component(cen, seed), bool)
    T = T[inside]
    if len(T) == 0:
        raise DomainError("domain is empty at this resolution")
    ar = triangle_areas(V, T)
    T = np.where((ar < 0)[:, None], T[:, [0, 2, 1]], T)
    T = T[np.abs(ar) > 1e-14 * h * h]
    used = np.unique(T)
    remap = -np.ones(len(V), np.int64)
    remap[used] = np.arange(len(used))
    V, T, lsize = V[used], remap[T], lsize[used]

    V, T, lsize = _duplicate_cracks(domain, V, T, lsize)
    edges, tags, names = _tag_boundary(domain, V, T, pieces)
    # boundary vertices whose residual is out of tolerance are flagged
    bv = np.unique(edges)
    res = _piece_distances(pieces, V[bv]).min(axis=1) if len(bv) else np.zeros(0)
    flagged = tuple(int(k) for k in bv[res > EPS_FIT * lsize[bv]])
    return TriMesh(V, T, edges, tags, names, grading, h, lsize, flagged)


def _guarded_snap(V, T, targets, dist):
    """Move vertices onto their targets, nearest first, skipping any move that
    would invert an incident triangle or push its smallest angle below
    ``MIN_SNAP_ANGLE`` (or below its current value, if already smaller)."""
    movers = np.nonzero(~np.isnan(targets[:, 0]))[0]
    if len(movers) == 0:
        return
    order = movers[np.argsort(dist[movers], kind="stable")]
    flat = T.ravel()
    tri_of = np.argsort(flat, kind="stable") // 3
    start = np.searchsorted(flat[np.argsort(flat, kind="stable")], np.arange(len(V) + 1))
    for k in order:
        inc = T[tri_of[start[k]:start[k + 1]]]
        before = _min_angles(V[inc]).min()
        old = V[k].copy()
        V[k] = targets[k]
        ar = triangle_areas(V, inc)
        after = _min_angles(V[inc]).min()
        if np.any(ar <= 0) or after < min(MIN_SNAP_ANGLE, before):
            V[k] = old


def _cut_crossings(domain, pieces, V, T, lsize, seed):
    E = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    E = np.unique(np.sort(E, axis=1), axis=0)
    pa, pb = V[E[:, 0]], V[E[:, 1]]
    s = np.minimum(lsize[E[:, 0]], lsize[E[:, 1]])
    done = np.zeros(len(E), bool)
    cut_pt = np.zeros((len(E), 2))
    for pc in pieces:
        fv = pc.poly(V)
        gv = np.linalg.norm(pc.poly.eval_gradient(V), axis=1)
        on = np.abs(fv) <= 1e-9 * lsize * gv  # vertex already sits on this piece
        fa, fb = fv[E[:, 0]], fv[E[:, 1]]
        cross = (~done) & (fa * fb < 0) & ~on[E[:, 0]] & ~on[E[:, 1]]
        idx = np.nonzero(cross)[0]
        if len(idx) == 0:
            continue
        lo_, hi_ = np.zeros(len(idx)), np.ones(len(idx))
        neg = fa[idx] < 0
        A, B = pa[idx], pb[idx]
        for _ in range(60):
            mid = 0.5 * (lo_ + hi_)
            fm = pc.poly(A + mid[:, None] * (B - A))
            same = (fm < 0) == neg
            lo_, hi_ = np.where(same, mid, lo_), np.where(same, hi_, mid)
        q = A + (0.5 * (lo_ + hi_))[:, None] * (B - A)
        act = _on_boundary(domain, q, s[idx], seed)
        done[idx[act]] = True
        cut_pt[idx[act]] = q[act]
    if not done.any():
        return V, T, lsize
    nv = len(V)
    ids = np.nonzero(done)[0]
    cut = {(int(E[i, 0]), int(E[i, 1])): nv + k for k, i in enumerate(ids)}
    V = np.vstack([V, cut_pt[ids]])
    lsize = np.concatenate([lsize, s[ids]])
    out = []
    for tri in T.tolist():
        ring = []
        for i in range(3):
            a, b = tri[i], tri[(i + 1) % 3]
            ring.append(a)
            m = cut.get((min(a, b), max(a, b)))
            if m is not None:
                ring.append(m)
        out.extend(_split_polygon(V, ring, len(ring) - 3))
    return V, np.array(out, dtype=np.int64), lsize


def _split_polygon(V, ring, k):
    """Triangulate a triangle carrying ``k`` inserted edge points."""
    if k == 0:
        return [tuple(ring)]
    if k == 3:
        a, p, b, q, c, r = ring
        return [(a, p, r), (p, b, q), (r, q, c), (p, q, r)]
    return _fan_best(V, ring)


def _fan_best(V, ring):
    """Fan triangulation of a small convex polygon from the vertex that maximizes
    the smallest angle."""
    n = len(ring)
    best, bq = None, -1.0
    for s in range(n):
        r = ring[s:] + ring[:s]
        tris = [(r[0], r[i], r[i + 1]) for i in range(1, n - 1)]
        p = V[np.array(tris)]
        ar = triangle_areas(V, np.array(tris))
        if np.any(ar <= 0):
            continue
        q = _min_angles(p).min()
        if q > bq:
            best, bq = tris, q
    if best is None:
        best = [(ring[0], ring[i], ring[i + 1]) for i in range(1, n - 1)]
    return best


def _min_angles(p):
    out = []
    for i in range(3):
        a = p[:, (i + 1) % 3] - p[:, i]
        b = p[:, (i + 2) % 3] - p[:, i]
        cosang = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        out.append(np.degrees(np.arccos(np.clip(cosang, -1, 1))))
    return np.min(out, axis=0)


def _duplicate_cracks(domain, V, T, lsize):
    """Open slits: split each vertex's triangle fan at edges whose midpoint lies
    outside the domain and give every piece of the fan its own copy."""
    E = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    key = np.sort(E, axis=1)
    mids = V[key].mean(axis=1)
    crack_e = ~np.asarray(domain.contains(mids), bool)
    # edges shared by two triangles that are cracks
    from collections import defaultdict

    owners = defaultdict(list)
    for idx, (k, cr) in enumerate(zip(map(tuple, key), crack_e)):
        owners[k].append((idx % len(T), cr))
    crack_pairs = {k for k, ow in owners.items() if len(ow) == 2 and ow[0][1]}
    if not crack_pairs:
        return V, T, lsize
    crack_vertices = {v for k in crack_pairs for v in k}
    T = T.copy()
    V = list(V)
    lsize = list(lsize)
    incident = defaultdict(list)
    for ti, tri in enumerate(T):
        for v in tri:
            if v in crack_vertices:
                incident[v].append(ti)
    for v, tris in incident.items():
        parent = {t: t for t in tris}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, t1 in enumerate(tris):
            for t2 in tris[i + 1:]:
                shared = set(T[t1]) & set(T[t2])
                if len(shared) == 2:
                    e = tuple(sorted(shared))
                    if e not in crack_pairs:
                        parent[find(t1)] = find(t2)
        groups = defaultdict(list)
        for t in tris:
            groups[find(t)].append(t)
        for gi, members in enumerate(sorted(groups.values(), key=min)):
            if gi == 0:
                continue
            nv = len(V)
            V.append(V[v].copy())
            lsize.append(lsize[v])
            for t in members:
                T[t][T[t] == v] = nv
    return np.array(V), T, np.array(lsize)


def _tag_boundary(domain, V, T, pieces):
    E = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    key = np.sort(E, axis=1)
    _, idx, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    bnd = E[idx[counts == 1]]  # keeps the triangle's orientation (interior on the left)
    bnd = bnd[np.lexsort((bnd[:, 1], bnd[:, 0]))]
    if len(bnd) == 0:
        return bnd, (), ()
    dset = domain.dirichlet_pieces()
    mids = 0.5 * (V[bnd[:, 0]] + V[bnd[:, 1]])
    j = np.argmin(_piece_distances(pieces, mids), axis=1)
    names = tuple(pieces[k].name for k in j)
    tags = tuple(DIRICHLET if n in dset else NEUMANN for n in names)
    return bnd, tags, names


# ---------------------------------------------------------------------------
# quality, refinement, export


@dataclass(frozen=True)
class MeshQuality:
    min_angle: float
    max_aspect: float
    conformity: bool


def mesh_quality(m: TriMesh) -> MeshQuality:
    p = m.vertices[m.triangles]
    ar = triangle_areas(m.vertices, m.triangles)
    ang = _min_angles(p)
    lens = np.stack([np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)], axis=1)
    # aspect: longest edge over the height onto it
    aspect = lens.max(axis=1) ** 2 / np.maximum(2 * np.abs(ar), 1e-300)
    E = np.concatenate([m.triangles[:, [0, 1]], m.triangles[:, [1, 2]], m.triangles[:, [2, 0]]])
    _, dcount = np.unique(E, axis=0, return_counts=True)
    ukey, ucount = np.unique(np.sort(E, axis=1), axis=0, return_counts=True)
    bset = {tuple(e) for e in np.sort(m.boundary_edges, axis=1)}
    one = {tuple(e) for e in ukey[ucount == 1]}
    conforming = bool(np.all(ar > 0) and np.all(dcount == 1) and np.all(ucount <= 2) and one == bset)
    return MeshQuality(float(ang.min()), float(aspect.max()), conforming)


def refine_uniform(m: TriMesh) -> TriMesh:
    """Red refinement: every triangle into four through its edge midpoints.

    Midpoints stay on the straight edges, so the finite-element space of the
    result contains that of ``m``.
    """
    V, T = m.vertices, m.triangles
    E = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    key = np.sort(E, axis=1)
    ukey, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(3, len(T)).T
    # a duplicated crack vertex pair has distinct indices, so edges stay distinct
    mid = len(V) + np.arange(len(ukey))
    Vn = np.vstack([V, 0.5 * (V[ukey[:, 0]] + V[ukey[:, 1]])])
    a, b, c = T[:, 0], T[:, 1], T[:, 2]
    ab, bc, ca = mid[inv[:, 0]], mid[inv[:, 1]], mid[inv[:, 2]]
    Tn = np.concatenate([np.c_[a, ab, ca], np.c_[ab, b, bc], np.c_[ca, bc, c], np.c_[ab, bc, ca]])
    lookup = {tuple(k): i for i, k in enumerate(ukey)}
    be, tags, names = [], [], []
    for (p, q), tg, nm in zip(m.boundary_edges, m.boundary_tags, m.boundary_pieces or [""] * len(m.boundary_edges)):
        mm = mid[lookup[(min(p, q), max(p, q))]]
        be += [(p, mm), (mm, q)]
        tags += [tg, tg]
        names += [nm, nm]
    ls = np.concatenate([m.local_size, 0.5 * (m.local_size[ukey[:, 0]] + m.local_size[ukey[:, 1]])]) / 2
    return TriMesh(Vn, Tn, np.array(be, dtype=np.int64), tuple(tags), tuple(names), m.grading_centers,
                   m.h / 2, ls, m.flagged)


def export_mesh(m: TriMesh) -> str:
    """Plain-text mesh: ``V n`` / ``x y``, ``T n`` / ``i j k``, ``B n`` / ``i j TAG``."""
    lines = [f"V {len(m.vertices)}"]
    lines += [f"{x!r} {y!r}" for x, y in m.vertices.tolist()]
    lines.append(f"T {len(m.triangles)}")
    lines += [f"{i} {j} {k}" for i, j, k in m.triangles.tolist()]
    lines.append(f"B {len(m.boundary_edges)}")
    lines += [f"{i} {j} {t}" for (i, j), t in zip(m.boundary_edges.tolist(), m.boundary_tags)]
    return "\n".join(lines) + "\n"


def parse_mesh(text: str) -> TriMesh:
    rows = [r for r in text.splitlines() if r.strip() and not r.startswith("#")]
    pos = 0

    def block(tag):
        nonlocal pos
        head = rows[pos].split()
        if head[0] != tag:
            raise DomainError(f"expected '{tag} <count>' at mesh line {pos + 1}")
        n = int(head[1])
        body = [r.split() for r in rows[pos + 1: pos + 1 + n]]
        pos += 1 + n
        return body

    V = np.array([[float(a), float(b)] for a, b in block("V")]).reshape(-1, 2)
    T = np.array([[int(a) for a in r] for r in block("T")], dtype=np.int64).reshape(-1, 3)
    B = block("B")
    E = np.array([[int(r[0]), int(r[1])] for r in B], dtype=np.int64).reshape(-1, 2)
    return TriMesh(V, T, E, tuple(r[2] for r in B))
