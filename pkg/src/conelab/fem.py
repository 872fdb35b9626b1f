"""P1 finite elements for ``div(A grad u) = f`` with mixed boundary data.

The weak form keeps the sign of the operator as written:
``int A grad u . grad phi = int_N theta phi - int f phi``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sps
from scipy.spatial import cKDTree

from .mesh2d import DIRICHLET, NEUMANN, TriMesh, build_mesh, refine_uniform, triangle_areas
from .polydomain import Constraint, DomainError, DomainSpec, ScalarField

CG_RTOL = 1e-10
CG_STAGNATION_WINDOW = 500

# edge-midpoint rule: exact for quadratics
_MID_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
_MID_W = np.full(3, 1 / 3)
# 7-point degree-5 rule for error norms
_a1, _b1 = 0.059715871789770, 0.470142064105115
_a2, _b2 = 0.797426985353087, 0.101286507323456
_D5_BARY = np.array([[1 / 3, 1 / 3, 1 / 3],
                     [_a1, _b1, _b1], [_b1, _a1, _b1], [_b1, _b1, _a1],
                     [_a2, _b2, _b2], [_b2, _a2, _b2], [_b2, _b2, _a2]])
_D5_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)
# 2-point Gauss on [0, 1]
_G2_T = np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])
_G2_W = np.array([0.5, 0.5])


class NumericalError(RuntimeError):
    """Iterative solve failed; carries diagnostics."""

    def __init__(self, message, iterations=0, residual=np.nan, condition_estimate=np.nan):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.condition_estimate = condition_estimate


def p1_gradients(V, T):
    """Barycentric gradients per triangle, shape (M, 3, 2), and signed areas."""
    p = V[T]
    area = triangle_areas(V, T)
    # grad lambda_i = rot90(opposite edge) / (2 area)
    e0 = p[:, 2] - p[:, 1]
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    rot = lambda e: np.stack([-e[:, 1], e[:, 0]], axis=1)  # noqa: E731
    G = np.stack([rot(e0), rot(e1), rot(e2)], axis=1) / (2 * area)[:, None, None]
    return G, area


def quad_points(V, T, bary):
    return np.einsum("qk,mkd->mqd", bary, V[T])


@dataclass(frozen=True)
class SparseSystem:
    matrix: sps.csr_matrix
    rhs: np.ndarray
    dirichlet_mask: np.ndarray
    dirichlet_values: np.ndarray
    mesh: TriMesh
    domain: DomainSpec | None = None


@dataclass(frozen=True)
class SolutionField:
    mesh: TriMesh
    values: np.ndarray
    gradients: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    @classmethod
    def from_values(cls, mesh: TriMesh, values, **kw) -> "SolutionField":
        values = np.asarray(values, dtype=float)
        G, _ = p1_gradients(mesh.vertices, mesh.triangles)
        grads = np.einsum("mkd,mk->md", G, values[mesh.triangles])
        return cls(mesh, values, grads, **kw)

    def gradient_norms(self) -> np.ndarray:
        return np.linalg.norm(self.gradients, axis=1)

    def energy(self, A=None) -> float:
        """``int A grad u . grad u`` (``A = I`` when omitted)."""
        area = self.mesh.areas()
        if A is None:
            return float(np.sum(area * np.sum(self.gradients**2, axis=1)))
        x = quad_points(self.mesh.vertices, self.mesh.triangles, _MID_BARY)
        Aq = A(x.reshape(-1, 2)).reshape(len(area), 3, 2, 2)
        dens = np.einsum("md,mqde,me->mq", self.gradients, Aq, self.gradients) @ _MID_W
        return float(np.sum(area * dens))

    def values_at_quadrature(self, bary):
        return np.einsum("qk,mk->mq", bary, self.values[self.mesh.triangles])

    def l2_norm(self) -> float:
        u = self.values_at_quadrature(_D5_BARY)
        return float(np.sqrt(np.sum(self.mesh.areas() * ((u**2) @ _D5_W))))

    def l2_error(self, exact) -> float:
        x = quad_points(self.mesh.vertices, self.mesh.triangles, _D5_BARY)
        ue = np.asarray(exact(x.reshape(-1, 2))).reshape(x.shape[:2])
        d = self.values_at_quadrature(_D5_BARY) - ue
        return float(np.sqrt(np.sum(self.mesh.areas() * ((d**2) @ _D5_W))))

    def h1_seminorm(self) -> float:
        return float(np.sqrt(self.energy()))

    def locate(self, pts):
        """Containing triangle per point (-1 outside) and barycentric coordinates."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        V, T = self.mesh.vertices, self.mesh.triangles
        tree = _centroid_tree(self.mesh)
        k = min(16, len(T))
        _, cand = tree.query(pts, k=k)
        cand = cand.reshape(len(pts), k)
        tri = np.full(len(pts), -1)
        bary = np.zeros((len(pts), 3))
        for j in range(k):
            lam = _barycentric(V[T[cand[:, j]]], pts)
            hit = (tri < 0) & np.all(lam >= -1e-12, axis=1)
            tri[hit] = cand[hit, j]
            bary[hit] = lam[hit]
        return tri, bary

    def __call__(self, pts):
        """Point evaluation by barycentric interpolation (NaN outside the mesh)."""
        tri, bary = self.locate(pts)
        out = np.full(len(tri), np.nan)
        ok = tri >= 0
        out[ok] = np.sum(bary[ok] * self.values[self.mesh.triangles[tri[ok]]], axis=1)
        return out

    def gradient(self, pts):
        """Piecewise-constant gradient at points (NaN outside the mesh)."""
        tri, _ = self.locate(pts)
        out = np.full((len(tri), 2), np.nan)
        out[tri >= 0] = self.gradients[tri[tri >= 0]]
        return out

    def export(self, header: str = "") -> str:
        """Text export: ``x y u`` per node, then ``i j k gx gy`` per triangle."""
        lines = [h for h in header.splitlines()]
        V = self.mesh.vertices
        lines += [f"{x!r} {y!r} {u!r}" for (x, y), u in zip(V.tolist(), self.values.tolist())]
        lines += [f"{i} {j} {k} {gx!r} {gy!r}" for (i, j, k), (gx, gy)
                  in zip(self.mesh.triangles.tolist(), self.gradients.tolist())]
        return "\n".join(lines) + "\n"


_TREES: dict = {}


def _centroid_tree(mesh):
    key = id(mesh)
    hit = _TREES.get(key)
    if hit is None or hit[0] is not mesh:
        _TREES.clear()
        hit = _TREES[key] = (mesh, cKDTree(mesh.centroids()))
    return hit[1]


def _barycentric(P, x):
    a, b, c = P[:, 0], P[:, 1], P[:, 2]
    v0, v1, v2 = b - a, c - a, x - a
    den = v0[:, 0] * v1[:, 1] - v1[:, 0] * v0[:, 1]
    l1 = (v2[:, 0] * v1[:, 1] - v1[:, 0] * v2[:, 1]) / den
    l2 = (v0[:, 0] * v2[:, 1] - v2[:, 0] * v0[:, 1]) / den
    return np.stack([1 - l1 - l2, l1, l2], axis=1)


def interpolate(mesh: TriMesh, field) -> SolutionField:
    return SolutionField.from_values(mesh, np.asarray(field(mesh.vertices), dtype=float))


# ---------------------------------------------------------------------------
# assembly


def assemble(mesh: TriMesh, domain: DomainSpec) -> SparseSystem:
    """Stiffness matrix, load vector and Dirichlet data for P1 elements."""
    V, T = mesh.vertices, mesh.triangles
    n = len(V)
    G, area = p1_gradients(V, T)
    if np.any(area <= 0):
        raise DomainError("mesh has non-positive triangle areas")
    xq = quad_points(V, T, _MID_BARY).reshape(-1, 2)
    A = domain.operator
    domain.operator.check_ellipticity(xq)
    Aq = A(xq).reshape(len(T), 3, 2, 2)
    Abar = np.einsum("mqde,q->mde", Aq, _MID_W)
    K = np.einsum("mid,mde,mje->mij", G, Abar, G) * area[:, None, None]
    K = 0.5 * (K + np.transpose(K, (0, 2, 1)))  # bitwise symmetric local matrices
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    mat = sps.coo_matrix((K.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()

    # volume source, with the sign of the operator kept: -int f phi
    f = domain.source(xq).reshape(len(T), 3)
    local = -np.einsum("mq,qk,q->mk", f, _MID_BARY, _MID_W) * area[:, None]
    rhs = np.zeros(n)
    np.add.at(rhs, T.ravel(), local.ravel())

    # Neumann data on NEUMANN edges
    tags = np.asarray(mesh.boundary_tags)
    E = mesh.boundary_edges
    if len(E):
        nm = E[tags == NEUMANN]
        if len(nm):
            a, b = V[nm[:, 0]], V[nm[:, 1]]
            L = np.linalg.norm(b - a, axis=1)
            for t, w in zip(_G2_T, _G2_W):
                th = domain.neumann_data(a + t * (b - a))
                np.add.at(rhs, nm[:, 0], w * L * th * (1 - t))
                np.add.at(rhs, nm[:, 1], w * L * th * t)
    mask = np.zeros(n, bool)
    if len(E):
        mask[np.unique(E[tags == DIRICHLET])] = True
    vals = np.zeros(n)
    vals[mask] = domain.dirichlet_data(V[mask])
    return SparseSystem(mat, rhs, mask, vals, mesh, domain)


# ---------------------------------------------------------------------------
# solver


def pcg(A, b, x0=None, rtol=CG_RTOL, maxiter=None, window=CG_STAGNATION_WINDOW):
    """Jacobi-preconditioned conjugate gradients.

    Stops at ``|r| <= rtol |b|``. Raises :class:`NumericalError` when the
    residual fails to drop tenfold over ``window`` iterations or the
    iteration cap (20 N by default) is hit; the error carries a condition
    estimate from the Lanczos tridiagonal built out of the CG coefficients.
    """
    n = len(b)
    maxiter = 20 * n if maxiter is None else maxiter
    d = A.diagonal()
    if np.any(d <= 0):
        raise NumericalError("matrix has a non-positive diagonal entry")
    Minv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), 0, 0.0
    z = Minv * r
    p = z.copy()
    rz = r @ z
    hist = [np.linalg.norm(r)]
    alphas, betas = [], []
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise NumericalError("matrix is not positive definite (p'Ap <= 0)", it, hist[-1] / bnorm)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rn = np.linalg.norm(r)
        hist.append(rn)
        alphas.append(alpha)
        if rn <= rtol * bnorm:
            return x, it, rn / bnorm
        if it >= window and hist[-window - 1] < 10 * rn:
            raise NumericalError(f"CG stagnated: residual {rn / bnorm:.3e} after {it} iterations",
                                 it, rn / bnorm, _lanczos_condition(alphas, betas))
        z = Minv * r
        rz_new = r @ z
        beta = rz_new / rz
        betas.append(beta)
        rz = rz_new
        p = z + beta * p
    raise NumericalError(f"CG hit the iteration cap ({maxiter})", maxiter, hist[-1] / bnorm,
                         _lanczos_condition(alphas, betas))


def _lanczos_condition(alphas, betas):
    k = len(alphas)
    if k == 0:
        return np.nan
    diag = np.array([1 / alphas[0]] + [1 / alphas[i] + betas[i - 1] / alphas[i - 1] for i in range(1, k)])
    off = np.array([np.sqrt(betas[i]) / alphas[i] for i in range(k - 1)])
    from scipy.linalg import eigvalsh_tridiagonal

    ev = eigvalsh_tridiagonal(diag, off)
    return float(ev.max() / ev.min()) if ev.min() > 0 else np.inf


def solve(sys: SparseSystem, rtol: float = CG_RTOL) -> SolutionField:
    """Eliminate Dirichlet nodes and solve the reduced SPD system by PCG."""
    mask = sys.dirichlet_mask
    if not mask.any():
        raise DomainError("no Dirichlet node: the problem is not well posed")
    free = ~mask
    u = sys.dirichlet_values.copy()
    it, res = 0, 0.0
    if free.any():
        K = sys.matrix
        Kff = K[free][:, free]
        b = sys.rhs[free] - K[free][:, mask] @ u[mask]
        x, it, res = pcg(Kff, b, rtol=rtol)
        u[free] = x
    return SolutionField.from_values(sys.mesh, u, iterations=it, residual=res)


def solve_domain(domain: DomainSpec, h: float, grading=(), mesh: TriMesh | None = None) -> SolutionField:
    mesh = build_mesh(domain, h, grading) if mesh is None else mesh
    return solve(assemble(mesh, domain))


# ---------------------------------------------------------------------------
# diagnostics


def green_identity_residual(beta, u: SolutionField) -> float:
    """``|<beta, grad u> + <div beta, u> - int (beta . nu) u ds|`` on the mesh.

    ``beta`` is a pair of scalar fields; its divergence comes from their
    exact gradients.
    """
    b1, b2 = beta
    m = u.mesh
    V, T = m.vertices, m.triangles
    area = m.areas()
    xq = quad_points(V, T, _MID_BARY)
    flat = xq.reshape(-1, 2)
    bq = np.stack([b1(flat), b2(flat)], axis=-1).reshape(len(T), 3, 2)
    div = (b1.gradient(flat)[:, 0] + b2.gradient(flat)[:, 1]).reshape(len(T), 3)
    uq = u.values_at_quadrature(_MID_BARY)
    lhs = np.sum(area * ((np.einsum("mqd,md->mq", bq, u.gradients) + div * uq) @ _MID_W))
    E = m.boundary_edges
    a, b = V[E[:, 0]], V[E[:, 1]]
    d = b - a
    nu_len = np.stack([d[:, 1], -d[:, 0]], axis=1)  # outward normal times edge length
    rhs = 0.0
    for t, w in zip(_G2_T, _G2_W):
        x = a + t * d
        ux = (1 - t) * u.values[E[:, 0]] + t * u.values[E[:, 1]]
        bx = np.stack([b1(x), b2(x)], axis=1)
        rhs += w * np.sum(np.sum(bx * nu_len, axis=1) * ux)
    return float(abs(lhs - rhs))


def solve_argmin(domain: DomainSpec, g: ScalarField, h: float, grading=(), mesh: TriMesh | None = None) -> SolutionField:
    """Minimize the Dirichlet energy with ``u = g`` on the variety.

    The variety (every ``'!='`` constraint) is the Dirichlet part; the rest
    of the circle carries the natural zero-flux condition.
    """
    if domain.ambient_dim != 2:
        raise DomainError("solve_argmin is planar")
    variety = [i for i, c in enumerate(domain.constraints) if c.sign == "!="]
    if not variety:
        raise DomainError("solve_argmin needs a variety constraint ('!=')")
    c = np.asarray(domain.center)
    hits = False
    for i in variety:
        p = domain.constraints[i].poly
        ang = np.linspace(0, 2 * np.pi, 721)
        for rr in np.linspace(0, domain.radius, 41):
            v = p(c + rr * np.stack([np.cos(ang), np.sin(ang)], 1))
            if np.any(v == 0) or np.any(np.sign(v[1:]) != np.sign(v[:-1])):
                hits = True
                break
    if not hits:
        raise DomainError("the variety misses the ball: the minimizer is not unique")
    sel = "+".join(f"c{i}" for i in variety)
    d = replace(domain, dirichlet_selector=sel, neumann_selector="sphere",
                dirichlet_data=g, neumann_data=ScalarField.constant(0.0, 2),
                source=ScalarField.constant(0.0, 2), component_seed=None)
    return solve_domain(d, h, grading, mesh)
