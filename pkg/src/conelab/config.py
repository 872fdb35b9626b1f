"""Run configuration: a sectioned ``key = value`` text format.

Grammar (one value per key, ``;`` separates list items)::

    [domain]
    dim = 3
    center = 0, 0, 0
    radius = 1
    constraints = x^3 + y^2 - z^2*x^2 != 0
    exclusions = y = 0 & x >= 0          # atoms joined by '&', sets by ';'
    dirichlet = variety
    neumann = sphere
    component_seed = 0.1, 0.01, 0.5

    [operator]
    A = identity                         # or rows 'a11, a12; a21, a22'
    lambda0 = 1e-6
    f = 0
    g = x^2 + y
    theta = 0

    [analysis]
    points = 0, 0, 0.5; 0, 0, -0.5
    seed = 0
    ...

    [output]
    dir = out

Lines starting with ``#`` or ``;`` are comments; ``#`` also ends a value.
Empty values mean "use the default"; every default that was filled in is
listed in ``RunConfig.defaults_used``.  Optional ``[analysis]`` keys:
``alpha, samples, radii, p_grid (lo:hi:step), r0, levels, h,
grading (x,y : gamma; ...), walkers, eps_wos, max_steps, seed,
profile_samples, slice_stratum ('point: x,y' or 'axis: k, lo, hi'),
slice_delta, slice_etas, slice_p, slice_field ('solution' or an expression)``.

Randomness flows from ``analysis.seed`` through :func:`derive_seed`: the
stream for command ``c`` and point ``i`` is seeded by
``SeedSequence([seed, crc32(c), i])``.  Walk-on-spheres then spawns one child
per walker block from that seed.
"""
from __future__ import annotations

import configparser
import hashlib
import logging
import re
import zlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .polydomain import (
    CoefficientField,
    Constraint,
    DomainError,
    DomainSpec,
    Polynomial,
    PolynomialParseError,
    ScalarField,
)

log = logging.getLogger(__name__)

DEFAULT_LAMBDA0 = 1e-6
_OPS = ("!=", "<=", ">=", "<", ">", "=")
_CONSTRAINT = re.compile(r"^(.*?)\s*(!=|<=|>=|<|>|=)\s*(.*)$")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the source when known."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class AnalysisBlock:
    points: tuple[tuple[float, ...], ...] = ()
    alpha: float | None = None
    samples: int = 10000
    radii: tuple[float, ...] = ()
    p_grid: tuple[float, float, float] = (2.0, 8.0, 0.25)
    r0: float | None = None
    levels: int = 8
    h: float = 0.05
    grading: tuple[tuple[tuple[float, ...], float], ...] = ()
    walkers: int = 10000
    eps_wos: float | None = None
    max_steps: int = 100000
    seed: int = 0
    profile_samples: int = 16
    slice_stratum: str = ""
    slice_delta: float = 0.5
    slice_etas: tuple[float, ...] = tuple(2.0 ** -k for k in range(3, 9))
    slice_p: float = 2.0
    slice_field: str = "solution"


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration; ``text()`` is its canonical serialization."""

    dim: int
    center: tuple[float, ...]
    radius: float
    constraints: tuple[str, ...] = ()
    exclusions: tuple[str, ...] = ()
    dirichlet: str = "all"
    neumann: str = "none"
    component_seed: tuple[float, ...] | None = None
    A: str = "identity"
    lambda0: float = DEFAULT_LAMBDA0
    f: str = "0"
    g: str = "0"
    theta: str = "0"
    analysis: AnalysisBlock = field(default_factory=AnalysisBlock)
    out: str = "out"
    defaults_used: tuple[str, ...] = field(default=(), compare=False)

    # -- derived objects

    def domain(self) -> DomainSpec:
        n = self.dim
        cons = tuple(_constraint(c, n) for c in self.constraints)
        excl = tuple(tuple(_constraint(a, n) for a in _split(e, "&")) for e in self.exclusions)
        return DomainSpec(n, self.center, self.radius, cons, excl, self.dirichlet, self.neumann,
                          self.operator(), ScalarField.parse(self.f, n), ScalarField.parse(self.theta, n),
                          ScalarField.parse(self.g, n), self.component_seed)

    def operator(self) -> CoefficientField:
        n = self.dim
        if self.A.strip() == "identity":
            return CoefficientField.identity(n, self.lambda0)
        rows = [_split(r, ",") for r in _split(self.A, ";")]
        if len(rows) != n or any(len(r) != n for r in rows):
            raise ConfigError(f"A must be {n}x{n}")
        return CoefficientField(tuple(tuple(ScalarField.parse(e, n) for e in r) for r in rows), self.lambda0)

    def p_values(self) -> np.ndarray:
        lo, hi, step = self.analysis.p_grid
        return np.arange(lo, hi + 1e-9, step)

    # -- serialization

    def text(self) -> str:
        a = self.analysis
        lines = ["[domain]", f"dim = {self.dim}", f"center = {_vec(self.center)}", f"radius = {self.radius!r}",
                 f"constraints = {'; '.join(self.constraints)}", f"exclusions = {'; '.join(self.exclusions)}",
                 f"dirichlet = {self.dirichlet}", f"neumann = {self.neumann}",
                 f"component_seed = {_vec(self.component_seed) if self.component_seed else ''}",
                 "", "[operator]", f"A = {self.A}", f"lambda0 = {self.lambda0!r}", f"f = {self.f}",
                 f"g = {self.g}", f"theta = {self.theta}", "", "[analysis]"]
        for fl in fields(AnalysisBlock):
            lines.append(f"{fl.name} = {_fmt(fl.name, getattr(a, fl.name))}")
        lines += ["", "[output]", f"dir = {self.out}"]
        return "\n".join(lines) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, analysis=replace(self.analysis, seed=int(seed)))


def derive_seed(master: int, stream: str, index: int = 0) -> int:
    """Child seed for one random stream: ``SeedSequence([master, crc(stream), index])``."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(stream.encode()), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# parsing


def _split(text, sep):
    return [t.strip() for t in text.split(sep) if t.strip()]


def _vec(v):
    return ", ".join(repr(float(c)) for c in v)


def _fmt(name, v):
    if v is None:
        return ""
    if name == "points":
        return "; ".join(_vec(p) for p in v)
    if name == "grading":
        return "; ".join(f"{_vec(p)} : {g!r}" for p, g in v)
    if name == "p_grid":
        return ":".join(repr(float(c)) for c in v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(c)) for c in v)
    return repr(v) if isinstance(v, float) else str(v)


def _constraint(text: str, n: int) -> Constraint:
    m = _CONSTRAINT.match(text.strip())
    if not m:
        raise ConfigError(f"constraint {text!r} needs one of {', '.join(_OPS)}")
    lhs, op, rhs = m.groups()
    p = Polynomial.parse(lhs, n)
    if rhs.strip() not in ("", "0"):
        p = p - Polynomial.parse(rhs, n)
    return Constraint(p, op)


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    out, section = {}, ""
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif "=" in s and not s.startswith(("#", ";")):
            out[(section, s.split("=", 1)[0].strip().lower())] = i
    return out


_ANALYSIS_CONVERT = {
    "points": lambda s: tuple(tuple(float(c) for c in _split(p, ",")) for p in _split(s, ";")),
    "alpha": float,
    "samples": int,
    "radii": lambda s: tuple(float(c) for c in _split(s, ",")),
    "p_grid": lambda s: tuple(float(c) for c in s.split(":")),
    "r0": float,
    "levels": int,
    "h": float,
    "grading": lambda s: tuple((tuple(float(c) for c in _split(item.split(":")[0], ",")), float(item.split(":")[1]))
                               for item in _split(s, ";")),
    "walkers": int,
    "eps_wos": float,
    "max_steps": int,
    "seed": int,
    "profile_samples": int,
    "slice_stratum": str,
    "slice_delta": float,
    "slice_etas": lambda s: tuple(float(c) for c in _split(s, ",")),
    "slice_p": float,
    "slice_field": str,
}


def parse_config_text(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str.lower
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        raise ConfigError(f"syntax error: {exc.message if hasattr(exc, 'message') else exc}", line) from None
    where = _key_lines(text)
    known = {"domain", "operator", "analysis", "output"}
    for s in cp.sections():
        if s not in known:
            raise ConfigError(f"unknown section [{s}]")
    if "domain" not in cp:
        raise ConfigError("missing [domain] section")
    defaults = []

    def get(section, key, default=None, required=False):
        if section in cp and key in cp[section] and cp[section][key].strip() != "":
            return cp[section][key].strip()
        if required:
            raise ConfigError(f"missing required key {section}.{key}")
        return default

    def guard(section, key, fn, value):
        try:
            return fn(value)
        except (PolynomialParseError, DomainError, ValueError, IndexError) as exc:
            raise ConfigError(f"{section}.{key}: {exc}", where.get((section, key))) from None

    dim = guard("domain", "dim", int, get("domain", "dim", required=True))
    center = guard("domain", "center", lambda s: tuple(float(c) for c in _split(s, ",")),
                   get("domain", "center", ",".join(["0"] * dim)))
    radius = guard("domain", "radius", float, get("domain", "radius", "1"))
    cons = tuple(_split(get("domain", "constraints", ""), ";"))
    excl = tuple(_split(get("domain", "exclusions", ""), ";"))
    seed_txt = get("domain", "component_seed")
    comp = guard("domain", "component_seed", lambda s: tuple(float(c) for c in _split(s, ",")), seed_txt) \
        if seed_txt else None
    lam = get("operator", "lambda0")
    if lam is None:
        log.warning("operator.lambda0 not set; using default %g", DEFAULT_LAMBDA0)
        defaults.append("operator.lambda0")
        lam = repr(DEFAULT_LAMBDA0)
    ana = {}
    if "analysis" in cp:
        for key, value in cp["analysis"].items():
            if key not in _ANALYSIS_CONVERT:
                raise ConfigError(f"unknown key analysis.{key}", where.get(("analysis", key)))
            if value.strip() != "":
                ana[key] = guard("analysis", key, _ANALYSIS_CONVERT[key], value.strip())
    for fl in fields(AnalysisBlock):
        if fl.name not in ana:
            defaults.append(f"analysis.{fl.name}")
    cfg = RunConfig(
        dim=dim, center=center, radius=radius, constraints=cons, exclusions=excl,
        dirichlet=get("domain", "dirichlet", "all"), neumann=get("domain", "neumann", "none"),
        component_seed=comp, A=get("operator", "A", "identity"),
        lambda0=guard("operator", "lambda0", float, lam), f=get("operator", "f", "0"),
        g=get("operator", "g", "0"), theta=get("operator", "theta", "0"),
        analysis=AnalysisBlock(**ana), out=get("output", "dir", "out"), defaults_used=tuple(defaults))
    # semantic validation with line numbers where they can be traced
    for c in cons:
        guard("domain", "constraints", lambda s: _constraint(s, dim), c)
    for e in excl:
        for a in _split(e, "&"):
            guard("domain", "exclusions", lambda s: _constraint(s, dim), a)
    for key in ("f", "g", "theta"):
        guard("operator", key, lambda s: ScalarField.parse(s, dim), getattr(cfg, key))
    guard("operator", "A", lambda _: cfg.operator(), None)
    try:
        cfg.domain()
    except (DomainError, PolynomialParseError) as exc:
        raise ConfigError(f"invalid domain: {exc}") from None
    for p in cfg.analysis.points:
        if len(p) != dim:
            raise ConfigError(f"analysis point {p} has the wrong dimension", where.get(("analysis", "points")))
    return cfg


def parse_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())
