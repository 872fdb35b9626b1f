"""Polynomials, closed-form fields and the semialgebraic domain model.

Everything here is immutable after construction. Points are numpy arrays
whose last axis has length ``dim``; evaluators broadcast over the leading
axes.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from itertools import product
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

NEG_INF = -math.inf  # degree of the zero polynomial

EPS_VAL = 1e-10
EPS_GRAD = 1e-8
EPS_MERGE_REL = 1e-6

VARIABLES = "xyz"


class PolynomialParseError(ValueError):
    """Raised for malformed polynomial text; names the offending token."""


class DomainError(ValueError):
    """Raised for inputs that violate a domain-model precondition."""


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (dim,):
        raise DomainError(f"expected points with last axis {dim}, got shape {x.shape}")
    return x


class Polynomial:
    """Sparse multivariate polynomial with real coefficients.

    Terms are stored as ``{exponent tuple: coefficient}`` with no zero
    coefficients. Construct from rationals (``Fraction`` or ``str`` like
    ``"3/4"``) when exact representability matters; storage is float.
    """

    def __init__(self, dim: int, terms: Mapping[Sequence[int], object] | None = None):
        if dim < 1:
            raise DomainError("dimension must be positive")
        self.dim = int(dim)
        clean: dict[tuple[int, ...], float] = {}
        for alpha, c in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.dim or min(alpha, default=0) < 0:
                raise DomainError(f"bad multi-index {alpha} for dimension {self.dim}")
            c = float(Fraction(c)) if isinstance(c, (str, Fraction)) else float(c)
            c = clean.get(alpha, 0.0) + c
            if c == 0.0:
                clean.pop(alpha, None)
            else:
                clean[alpha] = c
        self._terms = clean

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, dim: int, c) -> "Polynomial":
        return cls(dim, {(0,) * dim: c})

    @classmethod
    def variable(cls, dim: int, i: int) -> "Polynomial":
        alpha = [0] * dim
        alpha[i] = 1
        return cls(dim, {tuple(alpha): 1.0})

    @classmethod
    def parse(cls, text: str, dim: int = 3) -> "Polynomial":
        return _PolyParser(text, dim).parse()

    # -- basic structure --------------------------------------------------
    @property
    def terms(self) -> dict[tuple[int, ...], float]:
        return dict(self._terms)

    def degree(self) -> float:
        if not self._terms:
            return NEG_INF
        return max(sum(a) for a in self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def is_homogeneous(self) -> bool:
        return len({sum(a) for a in self._terms}) <= 1

    def coefficient_scale(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.dim == other.dim and self._terms == other._terms

    def __hash__(self):
        return hash((self.dim, frozenset(self._terms.items())))

    def allclose(self, other: "Polynomial", tol: float = 1e-12) -> bool:
        keys = set(self._terms) | set(other._terms)
        return all(abs(self._terms.get(k, 0.0) - other._terms.get(k, 0.0)) <= tol for k in keys)

    # -- arithmetic -------------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.dim != self.dim:
                raise DomainError("dimension mismatch")
            return other
        return Polynomial.constant(self.dim, other)

    def __add__(self, other):
        other = self._coerce(other)
        terms = dict(self._terms)
        for a, c in other._terms.items():
            terms[a] = terms.get(a, 0.0) + c
        return Polynomial(self.dim, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.dim, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        terms: dict[tuple[int, ...], float] = {}
        for a, c in self._terms.items():
            for b, d in other._terms.items():
                k = tuple(i + j for i, j in zip(a, b))
                terms[k] = terms.get(k, 0.0) + c * d
        return Polynomial(self.dim, terms)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if int(k) != k or k < 0:
            raise DomainError("only nonnegative integer powers")
        out = Polynomial.constant(self.dim, 1.0)
        base = self
        k = int(k)
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    # -- calculus ---------------------------------------------------------
    def partial(self, i: int) -> "Polynomial":
        terms = {}
        for a, c in self._terms.items():
            if a[i]:
                b = list(a)
                b[i] -= 1
                terms[tuple(b)] = c * a[i]
        return Polynomial(self.dim, terms)

    @cached_property
    def _gradient(self) -> tuple["Polynomial", ...]:
        return tuple(self.partial(i) for i in range(self.dim))

    def gradient(self) -> list["Polynomial"]:
        """Formal partial derivatives, one polynomial per coordinate."""
        return list(self._gradient)

    def translate(self, t) -> "Polynomial":
        """Return ``x -> p(t + x)``, with cancellation noise removed."""
        t = np.asarray(t, dtype=float)
        if t.shape != (self.dim,):
            raise DomainError("translation point has wrong dimension")
        terms: dict[tuple[int, ...], float] = {}
        mags: dict[tuple[int, ...], float] = {}
        for a, c in self._terms.items():
            # prod_i (t_i + x_i)^a_i = sum_k prod_i C(a_i,k_i) t_i^(a_i-k_i) x_i^k_i
            for k in product(*(range(ai + 1) for ai in a)):
                w = c
                for ai, ki, ti in zip(a, k, t):
                    w *= math.comb(ai, ki) * ti ** (ai - ki)
                terms[k] = terms.get(k, 0.0) + w
                mags[k] = mags.get(k, 0.0) + abs(w)
        cleaned = {k: v for k, v in terms.items() if abs(v) > 1e-13 * mags[k]}
        return Polynomial(self.dim, cleaned)

    def homogeneous_part(self, d: int) -> "Polynomial":
        return Polynomial(self.dim, {a: c for a, c in self._terms.items() if sum(a) == d})

    def initial_form(self, t) -> "Polynomial":
        """Lowest-degree homogeneous part of ``x -> p(t + x)``.

        ``t`` must lie on the zero set of ``p``.
        """
        t = np.asarray(t, dtype=float)
        if t.shape != (self.dim,):
            raise DomainError("point has wrong dimension")
        val = float(self(t))
        if abs(val) > EPS_VAL * max(1.0, self.coefficient_scale()):
            raise DomainError(f"point is not on the variety (p(t) = {val:.3e})")
        q = self.translate(t)
        q = Polynomial(self.dim, {a: c for a, c in q._terms.items() if sum(a) > 0})
        if q.is_zero():
            return q
        return q.homogeneous_part(min(sum(a) for a in q._terms))

    # -- evaluation -------------------------------------------------------
    @cached_property
    def _horner(self):
        return _build_horner(self._terms, self.dim)

    def __call__(self, x):
        """Evaluate by nested Horner recursion over the coordinates."""
        x = _as_points(x, self.dim)
        out = _eval_horner(self._horner, x, 0)
        if np.ndim(out) == 0:
            out = np.full(x.shape[:-1], float(out))
        return out

    def eval_gradient(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        return np.stack([g(x) for g in self._gradient], axis=-1)

    # -- text -------------------------------------------------------------
    def to_string(self) -> str:
        if not self._terms:
            return "0"
        names = VARIABLES if self.dim <= 3 else None
        parts = []
        for a in sorted(self._terms, key=lambda a: (-sum(a), tuple(-i for i in a))):
            c = self._terms[a]
            mono = []
            for i, e in enumerate(a):
                if e:
                    v = names[i] if names else f"x{i + 1}"
                    mono.append(v if e == 1 else f"{v}^{e}")
            coef = repr(abs(c))
            if coef.endswith(".0"):
                coef = coef[:-2]
            body = "*".join(mono)
            if not mono:
                term = coef
            elif abs(c) == 1.0:
                term = body
            else:
                term = f"{coef}*{body}"
            sign = "-" if c < 0 else "+"
            parts.append((sign, term))
        s = ("-" if parts[0][0] == "-" else "") + parts[0][1]
        for sign, term in parts[1:]:
            s += f" {sign} {term}"
        return s

    def __str__(self):
        return self.to_string()

    def __repr__(self):
        return f"Polynomial({self.dim}, {self.to_string()!r})"


def _build_horner(terms, dim):
    # nested representation: list indexed by power of the leading variable
    if dim == 0:
        return sum(terms.values())
    groups: dict[int, dict] = {}
    for a, c in terms.items():
        groups.setdefault(a[0], {})[a[1:]] = c
    if not groups:
        return 0.0
    top = max(groups)
    return [(_build_horner(groups[k], dim - 1) if k in groups else None) for k in range(top + 1)]


def _eval_horner(node, x, axis):
    if not isinstance(node, list):
        return node
    xi = x[..., axis]
    acc = 0.0
    for sub in reversed(node):
        acc = acc * xi
        if sub is not None:
            acc = acc + _eval_horner(sub, x, axis + 1)
    return acc


_TOKEN = re.compile(r"\s*(?:(\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)|(\*\*|[-+*/^()])|([A-Za-z_]\w*)|(\S))")


class _PolyParser:
    def __init__(self, text: str, dim: int):
        self.text = text
        self.dim = dim
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        text = text.rstrip()
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None:
                break
            num, op, name, bad = m.groups()
            col = m.start(m.lastindex) + 1
            if bad is not None:
                raise PolynomialParseError(f"unexpected character {bad!r} at column {col} in {self.text!r}")
            if num is not None:
                self.tokens.append(("num", num, col))
            elif op is not None:
                self.tokens.append(("op", "^" if op == "**" else op, col))
            else:
                self.tokens.append(("name", name, col))
            pos = m.end()
        self.i = 0

    def _peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("end", "", len(self.text) + 1)

    def _next(self):
        tok = self._peek()
        self.i += 1
        return tok

    def _fail(self, tok, expected):
        kind, val, col = tok
        what = "end of input" if kind == "end" else f"token {val!r}"
        raise PolynomialParseError(f"unexpected {what} at column {col} in {self.text!r} (expected {expected})")

    def parse(self) -> Polynomial:
        if not self.tokens:
            raise PolynomialParseError("empty polynomial")
        p = self._expr()
        if self._peek()[0] != "end":
            self._fail(self._peek(), "operator or end")
        return p

    def _expr(self):
        p = self._term()
        while self._peek()[:2] in (("op", "+"), ("op", "-")):
            op = self._next()[1]
            q = self._term()
            p = p + q if op == "+" else p - q
        return p

    def _term(self):
        p = self._unary()
        while self._peek()[:2] in (("op", "*"), ("op", "/")):
            op = self._next()
            q = self._unary()
            if op[1] == "*":
                p = p * q
            else:
                if q.degree() > 0 or q.is_zero():
                    raise PolynomialParseError(f"division by a non-constant at column {op[2]} in {self.text!r}")
                p = p * (1.0 / q._terms[(0,) * self.dim])
        return p

    def _unary(self):
        tok = self._peek()
        if tok[:2] == ("op", "-"):
            self._next()
            return -self._unary()
        if tok[:2] == ("op", "+"):
            self._next()
            return self._unary()
        return self._power()

    def _power(self):
        base = self._atom()
        if self._peek()[:2] == ("op", "^"):
            self._next()
            tok = self._next()
            if tok[0] != "num" or not tok[1].isdigit():
                self._fail(tok, "nonnegative integer exponent")
            return base ** int(tok[1])
        return base

    def _atom(self):
        tok = self._next()
        kind, val, col = tok
        if kind == "num":
            return Polynomial.constant(self.dim, Fraction(val))
        if kind == "name":
            names = VARIABLES[: self.dim]
            if val in names:
                return Polynomial.variable(self.dim, names.index(val))
            m = re.fullmatch(r"x(\d+)", val)
            if m and 1 <= int(m.group(1)) <= self.dim:
                return Polynomial.variable(self.dim, int(m.group(1)) - 1)
            raise PolynomialParseError(f"unknown variable {val!r} at column {col} in {self.text!r}")
        if tok[:2] == ("op", "("):
            p = self._expr()
            if self._next()[:2] != ("op", ")"):
                self._fail(self.tokens[self.i - 1] if self.i - 1 < len(self.tokens) else self._peek(), "')'")
            return p
        self._fail(tok, "number, variable or '('")


# ---------------------------------------------------------------------------
# geometric queries on polynomials


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise DomainError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, x, strict: bool = True):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x - np.asarray(self.center), axis=-1)
        return r < self.radius if strict else r <= self.radius


def gradient_bound(p: Polynomial, region: Ball) -> float:
    """Upper bound of ``|grad p|`` over the ball, from termwise magnitudes."""
    c = np.abs(np.asarray(region.center)) + region.radius
    comps = []
    for g in p.gradient():
        comps.append(sum(abs(coef) * float(np.prod(c ** np.asarray(a))) for a, coef in g.terms.items()))
    return float(np.sqrt(np.sum(np.square(comps))))


def distance_lower_bound(p: Polynomial, x, region: Ball, lipschitz: float | None = None):
    """``|p(x)| / L`` with ``L`` an upper bound of ``|grad p|`` on ``region``.

    Never exceeds the distance from ``x`` to ``{p = 0}`` inside the region.
    """
    L = gradient_bound(p, region) if lipschitz is None else lipschitz
    if L == 0.0:
        raise DomainError("constant polynomial has no zero set to measure distance to")
    x = _as_points(x, p.dim)
    return np.abs(p(x)) / L


class LocalDistance:
    """Zero-free ball radius around a point from a local Lipschitz bound.

    For each query point the gradient components are Taylor-expanded and
    bounded on the box of half-width ``rho``; the returned radius solves
    ``rho * Lip(rho) = |p(x)|``. Much tighter than the global bound near
    singular parts of the variety.
    """

    def __init__(self, p: Polynomial):
        if p.degree() < 1:
            raise DomainError("constant polynomial has no zero set to measure distance to")
        self.p = p
        # per gradient component: list of (order k, list of derivative polys / alpha!)
        self._taylor = []
        for g in p.gradient():
            deg = int(g.degree()) if not g.is_zero() else 0
            by_order = []
            for k in range(deg + 1):
                polys = []
                for alpha in _multi_indices(p.dim, k):
                    q = g
                    for i, a in enumerate(alpha):
                        for _ in range(a):
                            q = q.partial(i)
                    if not q.is_zero():
                        polys.append(q * (1.0 / math.prod(math.factorial(a) for a in alpha)))
                by_order.append(polys)
            self._taylor.append(by_order)

    def coefficients(self, x) -> np.ndarray:
        """Array ``(..., dim, order)`` of summed absolute Taylor coefficients."""
        x = _as_points(x, self.p.dim)
        korder = max(len(t) for t in self._taylor)
        out = np.zeros(x.shape[:-1] + (self.p.dim, korder))
        for i, by_order in enumerate(self._taylor):
            for k, polys in enumerate(by_order):
                for q in polys:
                    out[..., i, k] += np.abs(q(x))
        return out

    def __call__(self, x, value=None, iterations: int = 50) -> np.ndarray:
        x = _as_points(x, self.p.dim)
        val = np.abs(self.p(x) if value is None else value)
        a = self.coefficients(x)
        k = np.arange(a.shape[-1])

        def lip(rho):
            comps = np.einsum("...ik,...k->...i", a, rho[..., None] ** k)
            return np.sqrt(np.einsum("...i,...i->...", comps, comps))

        # bracket the root by doubling from a unit box, then bisect
        hi = np.ones_like(val)
        for _ in range(60):
            grow = hi * lip(hi) <= val
            if not np.any(grow):
                break
            hi = np.where(grow, 2 * hi, hi)
        lo = np.zeros_like(val)
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            ok = mid * lip(mid) <= val
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid)
        return lo


def _multi_indices(dim, k):
    if dim == 1:
        yield (k,)
        return
    for i in range(k, -1, -1):
        for rest in _multi_indices(dim - 1, k - i):
            yield (i,) + rest


def newton_project(p: Polynomial, x, iterations: int = 30, tol: float = 1e-15):
    """Project points onto ``{p = 0}`` by Newton steps along the gradient."""
    x = np.array(_as_points(x, p.dim), dtype=float)
    for _ in range(iterations):
        v = p(x)
        g = p.eval_gradient(x)
        g2 = np.sum(g * g, axis=-1)
        safe = g2 > 0
        step = np.where(safe, v / np.where(safe, g2, 1.0), 0.0)
        x = x - step[..., None] * g
        if np.all(np.abs(step) * np.sqrt(g2) <= tol * (1 + np.linalg.norm(x, axis=-1))):
            break
    return x


def singular_points(p: Polynomial, region: Ball, seeds_per_axis: int = 12,
                    eps_val: float = EPS_VAL, eps_grad: float = EPS_GRAD,
                    eps_merge: float | None = None, iterations: int = 60) -> np.ndarray:
    """Sample of singular points of ``{p = 0}`` inside ``region``.

    Grid seeds are refined by minimum-norm Newton steps on
    ``(p, |grad p|^2) = 0``; accepted points are re-evaluated against the
    tolerances and de-duplicated.
    """
    n = p.dim
    if n not in (2, 3):
        raise DomainError("singular_points supports n in {2, 3}")
    eps_merge = EPS_MERGE_REL * region.radius if eps_merge is None else eps_merge
    c = np.asarray(region.center)
    axis = np.linspace(-region.radius, region.radius, seeds_per_axis)
    grid = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n) + c
    x = grid[region.contains(grid, strict=False)]
    grads = p.gradient()
    hess = [[g.partial(j) for j in range(n)] for g in grads]
    for _ in range(iterations):
        # underdetermined system (p, |grad p|^2) = 0; minimum-norm Newton step
        g = np.stack([q(x) for q in grads], axis=-1)
        H = np.empty((len(x), n, n))
        for i in range(n):
            for j in range(n):
                H[:, i, j] = hess[i][j](x)
        F = np.stack([p(x), np.sum(g * g, axis=-1)], axis=-1)
        J = np.stack([g, 2.0 * np.einsum("kij,kj->ki", H, g)], axis=1)
        step = np.einsum("kij,kj->ki", np.linalg.pinv(J, rcond=1e-13), F)
        x = x - step
    val = np.abs(p(x))
    gn = np.linalg.norm(p.eval_gradient(x), axis=-1)
    ok = np.isfinite(val) & (val <= eps_val) & (gn <= eps_grad) & region.contains(x, strict=False)
    pts = x[ok]
    if len(pts) == 0:
        return np.zeros((0, n))
    from scipy.spatial import cKDTree

    tree = cKDTree(pts)
    keep = np.ones(len(pts), bool)
    for i in range(len(pts)):
        if not keep[i]:
            continue
        for j in tree.query_ball_point(pts[i], eps_merge):
            if j > i:
                keep[j] = False
    return pts[keep]


# ---------------------------------------------------------------------------
# closed-form fields


_FIELD_FUNCS = ("sqrt", "sin", "cos", "tan", "exp", "log", "atan", "atan2", "sinh", "cosh", "tanh", "Abs", "pi")


def _wrapped_atan2(y, x):
    return np.mod(np.arctan2(y, x), 2 * np.pi)


class ScalarField:
    """Deterministic closed-form field on R^n with an exact gradient.

    ``ScalarField.parse`` accepts expressions in ``x, y, z`` plus the atoms
    ``r`` (distance to the origin) and ``theta`` (polar angle of ``(x, y)``
    in ``[0, 2*pi)``), built from the usual elementary functions.
    """

    def __init__(self, dim: int, value: Callable, gradient: Callable, text: str | None = None):
        self.dim = dim
        self._value = value
        self._gradient = gradient
        self.text = text

    @classmethod
    def parse(cls, text: str, dim: int) -> "ScalarField":
        import sympy as sp
        from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

        syms = sp.symbols(list(VARIABLES[:dim]), real=True)
        local = {name: s for name, s in zip(VARIABLES, syms)}
        for fname in _FIELD_FUNCS:
            local[fname] = getattr(sp, fname)
        local["abs"] = sp.Abs
        local["r"] = sp.sqrt(sum(s**2 for s in syms))
        if dim >= 2:
            local["theta"] = sp.atan2(syms[1], syms[0])
        try:
            expr = parse_expr(text, local_dict=local, global_dict={"Integer": sp.Integer, "Float": sp.Float, "Rational": sp.Rational, "Symbol": sp.Symbol},
                              transformations=standard_transformations + (convert_xor,))
        except Exception as exc:  # sympy raises a zoo of exception types
            raise DomainError(f"cannot parse field {text!r}: {exc}") from None
        extra = expr.free_symbols - set(syms)
        if extra:
            raise DomainError(f"unknown symbols {sorted(map(str, extra))} in field {text!r}")
        modules = [{"atan2": _wrapped_atan2}, "numpy"]
        f = sp.lambdify(syms, expr, modules=modules)
        grads = [sp.lambdify(syms, sp.diff(expr, s), modules=modules) for s in syms]

        def value(x):
            x = _as_points(x, dim)
            return np.broadcast_to(np.asarray(f(*np.moveaxis(x, -1, 0)), dtype=float), x.shape[:-1]).copy()

        def gradient(x):
            x = _as_points(x, dim)
            cols = [np.broadcast_to(np.asarray(g(*np.moveaxis(x, -1, 0)), dtype=float), x.shape[:-1]) for g in grads]
            return np.stack(cols, axis=-1)

        return cls(dim, value, gradient, text=text)

    @classmethod
    def constant(cls, c: float, dim: int) -> "ScalarField":
        c = float(c)
        return cls(dim, lambda x: np.full(np.shape(x)[:-1], c),
                   lambda x: np.zeros(np.shape(x)), text=repr(c))

    @classmethod
    def from_polynomial(cls, p: Polynomial) -> "ScalarField":
        return cls(p.dim, p, p.eval_gradient, text=p.to_string())

    def __call__(self, x):
        return self._value(_as_points(x, self.dim))

    def gradient(self, x):
        return self._gradient(_as_points(x, self.dim))

    def __repr__(self):
        return f"ScalarField({self.text!r}, dim={self.dim})"


@dataclass(frozen=True)
class CoefficientField:
    """Matrix of scalar fields ``A(x)`` with ellipticity floor ``lambda0``."""

    entries: tuple[tuple[ScalarField, ...], ...]
    ellipticity_floor: float = 1e-6

    def __post_init__(self):
        n = len(self.entries)
        if any(len(row) != n for row in self.entries):
            raise DomainError("coefficient matrix must be square")
        if not self.ellipticity_floor > 0:
            raise DomainError("ellipticity floor must be positive")

    @classmethod
    def identity(cls, dim: int, ellipticity_floor: float = 1e-6) -> "CoefficientField":
        rows = tuple(tuple(ScalarField.constant(1.0 if i == j else 0.0, dim) for j in range(dim)) for i in range(dim))
        return cls(rows, ellipticity_floor)

    @property
    def dim(self) -> int:
        return len(self.entries)

    def is_identity(self) -> bool:
        for i, row in enumerate(self.entries):
            for j, e in enumerate(row):
                try:
                    if float(e.text) != (1.0 if i == j else 0.0):
                        return False
                except (TypeError, ValueError):
                    return False
        return True

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.stack([e(x) for e in row], axis=-1) for row in self.entries], axis=-2)

    def check_ellipticity(self, x):
        """Raise with the offending point if ``xi.A.xi < lambda0 |xi|^2`` somewhere."""
        A = self(x)
        sym = 0.5 * (A + np.swapaxes(A, -1, -2))
        lam = np.linalg.eigvalsh(sym)[..., 0]
        bad = lam < self.ellipticity_floor
        if np.any(bad):
            idx = np.unravel_index(np.argmax(bad), bad.shape)
            pt = np.asarray(x)[idx]
            raise DomainError(f"ellipticity fails at {pt.tolist()}: smallest eigenvalue {lam[idx]:.3e} < {self.ellipticity_floor:.3e}")
        return A


# ---------------------------------------------------------------------------
# domains


SIGNS = ("<", ">", "!=", "=", "<=", ">=")


@dataclass(frozen=True)
class Constraint:
    poly: Polynomial
    sign: str

    def __post_init__(self):
        if self.sign not in SIGNS:
            raise DomainError(f"unknown constraint sign {self.sign!r}")

    def holds(self, x, tol: float = 0.0):
        v = self.poly(x)
        if self.sign == "<":
            return v < 0
        if self.sign == ">":
            return v > 0
        if self.sign == "<=":
            return v <= tol
        if self.sign == ">=":
            return v >= -tol
        if self.sign == "!=":
            return np.abs(v) > tol
        return np.abs(v) <= tol


@dataclass(frozen=True)
class BoundaryPiece:
    """One polynomial whose zero set may carry part of the boundary."""

    name: str
    poly: Polynomial


@dataclass(frozen=True)
class DomainSpec:
    """Bounded semialgebraic domain with boundary data.

    Omega is the open ball intersected with every strict ``constraint``,
    minus the union of the closed ``exclusions`` (each a conjunction of
    constraints, e.g. a slit ``y = 0, x >= 0``). Boundary pieces are named
    ``sphere``, ``c<i>`` for constraints and ``e<i>.<j>`` for exclusion
    members; selectors are ``+``-joined lists of names or the shorthands
    ``all``, ``variety`` and ``none``.
    """

    ambient_dim: int
    center: tuple[float, ...]
    radius: float
    constraints: tuple[Constraint, ...] = ()
    exclusions: tuple[tuple[Constraint, ...], ...] = ()
    dirichlet_selector: str = "all"
    neumann_selector: str = "none"
    operator: CoefficientField | None = None
    source: ScalarField | None = None
    neumann_data: ScalarField | None = None
    dirichlet_data: ScalarField | None = None
    component_seed: tuple[float, ...] | None = None
    zero_tol: float = 1e-12

    def __post_init__(self):
        n = self.ambient_dim
        if n not in (2, 3):
            raise DomainError("ambient dimension must be 2 or 3")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != n:
            raise DomainError("ball center has wrong dimension")
        if not self.radius > 0:
            raise DomainError("ball radius must be positive")
        for c in self.constraints:
            if c.sign not in ("<", ">", "!="):
                raise DomainError("domain constraints must be strict ('<', '>', '!=')")
            if c.poly.dim != n:
                raise DomainError("constraint polynomial dimension mismatch")
        for ex in self.exclusions:
            for c in ex:
                if c.poly.dim != n:
                    raise DomainError("exclusion polynomial dimension mismatch")
        if self.operator is None:
            object.__setattr__(self, "operator", CoefficientField.identity(n))
        elif self.operator.dim != n:
            raise DomainError("operator dimension mismatch")
        for name in ("source", "neumann_data", "dirichlet_data"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, ScalarField.constant(0.0, n))
        if self.component_seed is not None:
            object.__setattr__(self, "component_seed", tuple(float(c) for c in self.component_seed))
        d = self.dirichlet_pieces()
        nm = self.neumann_pieces()
        if d & nm:
            raise DomainError(f"Dirichlet and Neumann selectors overlap on {sorted(d & nm)}")
        if not d:
            raise DomainError("Dirichlet part of the boundary is empty")

    # -- geometry ---------------------------------------------------------
    @property
    def ball(self) -> Ball:
        return Ball(self.center, self.radius)

    def sphere_polynomial(self) -> Polynomial:
        n = self.ambient_dim
        p = Polynomial.constant(n, -self.radius**2)
        for i, c in enumerate(self.center):
            p = p + (Polynomial.variable(n, i) - c) ** 2
        return p

    def pieces(self) -> list[BoundaryPiece]:
        out = [BoundaryPiece("sphere", self.sphere_polynomial())]
        out += [BoundaryPiece(f"c{i}", c.poly) for i, c in enumerate(self.constraints)]
        for i, ex in enumerate(self.exclusions):
            out += [BoundaryPiece(f"e{i}.{j}", c.poly) for j, c in enumerate(ex)]
        return out

    def _select(self, selector: str) -> frozenset[str]:
        names = [p.name for p in self.pieces()]
        chosen = set()
        for tok in (s.strip() for s in selector.split("+")):
            if not tok or tok == "none":
                continue
            if tok == "all":
                chosen |= set(names)
            elif tok == "variety":
                chosen |= {n for n in names if n != "sphere"}
            elif tok in names:
                chosen.add(tok)
            elif any(n.startswith(tok + ".") for n in names):
                chosen |= {n for n in names if n.startswith(tok + ".")}
            else:
                raise DomainError(f"unknown boundary piece {tok!r}; known: {names}")
        return frozenset(chosen)

    def neumann_pieces(self) -> frozenset[str]:
        return self._select(self.neumann_selector)

    def dirichlet_pieces(self) -> frozenset[str]:
        chosen = self._select(self.dirichlet_selector)
        if self.dirichlet_selector.strip() == "all":
            chosen = chosen - self._select(self.neumann_selector)
        return chosen

    def variety_polynomials(self) -> list[Polynomial]:
        return [c.poly for c in self.constraints]

    def contains(self, x) -> np.ndarray | bool:
        """Strict membership in Omega."""
        x = np.asarray(x, dtype=float)
        inside = self.ball.contains(x)
        for c in self.constraints:
            inside = inside & c.holds(x, self.zero_tol)
        for ex in self.exclusions:
            hit = np.ones(x.shape[:-1], bool)
            for c in ex:
                hit = hit & c.holds(x, self.zero_tol)
            inside = inside & ~hit
        return inside if np.ndim(inside) else bool(inside)

    def signature(self, x) -> np.ndarray:
        """Signs of the '!=' constraint polynomials (component label)."""
        x = np.asarray(x, dtype=float)
        cols = [np.sign(c.poly(x)) for c in self.constraints if c.sign == "!="]
        if not cols:
            return np.zeros(x.shape[:-1] + (0,))
        return np.stack(cols, axis=-1)

    def in_component(self, x, seed=None):
        """Membership in the component of Omega selected by a seed point."""
        seed = self.component_seed if seed is None else seed
        inside = self.contains(x)
        if seed is None:
            return inside
        seed = np.asarray(seed, dtype=float)
        if not self.contains(seed):
            raise DomainError(f"component seed {seed.tolist()} is not in the domain")
        same = np.all(self.signature(x) == self.signature(seed), axis=-1)
        return inside & same

    def with_(self, **changes) -> "DomainSpec":
        from dataclasses import replace

        return replace(self, **changes)


def contains(d: DomainSpec, x):
    return d.contains(x)


def polynomial_eval(p: Polynomial, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (p.dim,):
        raise DomainError(f"point dimension {x.shape[-1:]} does not match polynomial dimension {p.dim}")
    return p(x)
