"""Command-line entry point: ``conelab <command> --config PATH``.

Every output file starts with ``#`` comment lines carrying the command name,
the SHA-256 of the serialized configuration and the master seed.  Each run
also writes ``manifest.json`` with the configuration text, the defaults that
were filled in, the derived seeds, tolerances and solver residuals.

Exit codes: 0 success, 2 validation failure, 3 numerical failure, 4 I/O.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import fem, regularity, wos
from .cone import DEFAULT_RADII, StratumSpec, check_criterion, default_alpha, point_stratum
from .config import ConfigError, RunConfig, derive_seed, parse_config
from .fem import NumericalError
from .mesh2d import build_mesh, export_mesh, mesh_quality
from .polydomain import DomainError, PolynomialParseError, ScalarField

log = logging.getLogger("conelab")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
GRADING_DEFAULT = 3.0


class _Run:
    """Output directory, header and manifest bookkeeping for one command."""

    def __init__(self, command: str, cfg: RunConfig, out: str | None):
        self.command = command
        self.cfg = cfg
        self.dir = Path(out if out is not None else cfg.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "config_sha256": cfg.sha256(),
            "config": cfg.text(),
            "defaults_used": list(cfg.defaults_used),
            "master_seed": cfg.analysis.seed,
            "seeds": {},
            "tolerances": {},
            "results": {},
            "files": [],
        }

    def header(self) -> str:
        return (f"# conelab {self.command}\n# config_sha256 {self.cfg.sha256()}\n"
                f"# seed {self.cfg.analysis.seed}\n")

    def seed(self, stream: str, index: int = 0) -> int:
        s = derive_seed(self.cfg.analysis.seed, stream, index)
        self.manifest["seeds"][f"{stream}[{index}]"] = s
        return s

    def write(self, name: str, body: str):
        path = self.dir / name
        path.write_text(self.header() + body, encoding="utf-8")
        self.manifest["files"].append(name)
        return path

    def csv(self, name: str, columns: str, rows):
        body = columns + "\n" + "".join(",".join(_cell(v) for v in r) + "\n" for r in rows)
        return self.write(name, body)

    def close(self):
        (self.dir / "manifest.json").write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n",
                                                encoding="utf-8")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list, np.ndarray)):
        return " ".join(_cell(c) for c in v)
    return str(v)


def _points(cfg: RunConfig, cli_points) -> list[np.ndarray]:
    pts = [tuple(float(c) for c in p.split(",")) for p in cli_points] if cli_points else cfg.analysis.points
    if not pts:
        raise ConfigError("no points: pass --point or set analysis.points")
    out = []
    for p in pts:
        if len(p) != cfg.dim:
            raise ConfigError(f"point {p} does not have {cfg.dim} coordinates")
        out.append(np.array(p, float))
    return out


def _grading(cfg: RunConfig, point=None):
    g = cfg.analysis.grading
    if not g and point is not None:
        g = ((tuple(point), GRADING_DEFAULT),)
    return tuple((tuple(c), float(gam)) for c, gam in g)


def _fem_solution(run: _Run, point=None):
    cfg, d = run.cfg, run.cfg.domain()
    grading = _grading(cfg, point)
    mesh = build_mesh(d, cfg.analysis.h, grading, cfg.component_seed)
    u = fem.solve(fem.assemble(mesh, d))
    q = mesh_quality(mesh)
    run.manifest["tolerances"].update(cg_rtol=fem.CG_RTOL, cg_stagnation_window=fem.CG_STAGNATION_WINDOW,
                                      h=cfg.analysis.h, ellipticity_floor=cfg.lambda0)
    run.manifest["results"].update(nodes=len(mesh.vertices), triangles=len(mesh.triangles),
                                   grading=[[list(c), g] for c, g in grading], cg_iterations=u.iterations,
                                   cg_residual=u.residual, min_angle_deg=q.min_angle, mesh_flagged=bool(mesh.flagged))
    return mesh, u


def _wos_config(run: _Run, stream: str, index: int = 0) -> wos.WosConfig:
    a = run.cfg.analysis
    cfg = wos.WosConfig(run.cfg.domain(), walkers=a.walkers, eps=a.eps_wos, max_steps=a.max_steps,
                        seed=run.seed(stream, index))
    run.manifest["tolerances"].update(wos_eps=cfg.eps, wos_max_steps=cfg.max_steps, wos_walkers=cfg.walkers,
                                      wos_block=cfg.block, wos_exclusion_limit=wos.EXCLUSION_LIMIT,
                                      wos_neumann_step=wos.NEUMANN_STEP)
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_check_cone(run: _Run, points):
    cfg = run.cfg
    d = cfg.domain()
    a = cfg.analysis
    alpha = a.alpha if a.alpha is not None else default_alpha(cfg.dim)
    radii = a.radii or DEFAULT_RADII
    run.manifest["tolerances"].update(alpha=alpha, radii=list(radii), samples_per_radius=a.samples)
    rows, confident = [], []
    for i, t in enumerate(_points(cfg, points)):
        rep = check_criterion(d, t, alpha, radii, a.samples, run.seed("check-cone", i), cfg.component_seed)
        rows.append((t, rep.clause1, rep.clause2, rep.alpha, rep.holds, rep.confidence))
        confident.append(rep.confidence == "high")
    run.csv("check_cone.csv", "t,clause1,clause2,alpha,holds,confidence", rows)
    return EXIT_OK if any(confident) else EXIT_NUMERICAL


def cmd_solve(run: _Run, points):
    cfg = run.cfg
    if cfg.dim == 2:
        _, u = _fem_solution(run)
        run.write("solution.txt", u.export())
        return EXIT_OK
    w = _wos_config(run, "solve")
    recs = list(wos.wos_batch(w, _points(cfg, points)))
    rows = [(r["point"], r["mean"], r["stderr"], r["steps"], r["excluded"], r["flags"]) for r in recs]
    run.csv("wos.csv", "point,mean,stderr,steps,excluded,flags", rows)
    rate = max(r["excluded"] for r in recs) / w.walkers
    run.manifest["results"]["max_exclusion_rate"] = rate
    return EXIT_NUMERICAL if all(r["flags"] for r in recs) else EXIT_OK


def _p_grid(cfg):
    return cfg.p_values()


def cmd_estimate_p(run: _Run, points):
    cfg = run.cfg
    a = cfg.analysis
    p_values = _p_grid(cfg)
    run.manifest["tolerances"].update(p_grid=list(a.p_grid), levels=a.levels, r0=a.r0, margin=regularity.MARGIN,
                                      min_r2=regularity.MIN_R2, flat_slope=regularity.FLAT_SLOPE,
                                      skip_inner=regularity.SKIP_INNER)
    rows, failures = [], 0
    for i, t in enumerate(_points(cfg, points)):
        if cfg.dim == 2:
            _, u = _fem_solution(run, t)
            prof = regularity.annulus_profile(u, t, a.r0, a.levels, p_values)
        else:
            w = _wos_config(run, "estimate-p", i)
            prof = regularity.annulus_profile(w, t, a.r0, a.levels, p_values, samples=a.profile_samples,
                                              seed=run.seed("estimate-p-profile", i))
        prof_rows = [(j, prof.radii[j], p, prof.table[j, k])
                     for j in range(len(prof.table)) for k, p in enumerate(prof.p_values)]
        run.csv(f"profile_{i}.csv", "j,r,p,mass", prof_rows)
        try:
            ce = regularity.critical_exponent(prof)
        except NumericalError as exc:
            log.warning("point %s: %s", t.tolist(), exc)
            failures += 1
            ce = regularity.CriticalExponent(math.nan, regularity.MARGIN, "low")
        coords = list(t) + [0.0] * (3 - len(t))
        rows.append((*coords, ce.p_star, ce.margin, ce.confidence))
    run.csv("exponent.csv", "t_x,t_y,t_z,p_star,margin,confidence", rows)
    return EXIT_NUMERICAL if failures == len(rows) else EXIT_OK


def parse_stratum(text: str, dim: int) -> StratumSpec:
    """``point: x,y[,z]`` or ``axis: k, lo, hi`` (the k-th coordinate axis through the origin)."""
    kind, _, rest = text.partition(":")
    vals = [float(c) for c in rest.split(",") if c.strip()]
    kind = kind.strip()
    if kind == "point" and len(vals) == dim:
        return point_stratum(vals)
    if kind == "axis" and len(vals) == 3 and vals[0] in range(dim):
        e = np.zeros((1, dim))
        e[0, int(vals[0])] = 1.0
        return StratumSpec(tuple(np.zeros(dim)), e, ((vals[1], vals[2]),))
    raise ConfigError(f"cannot read stratum {text!r}; use 'point: x,y[,z]' or 'axis: k, lo, hi'")


def cmd_slice_poincare(run: _Run, points):
    cfg = run.cfg
    a = cfg.analysis
    if not a.slice_stratum:
        raise ConfigError("analysis.slice_stratum is required for slice-poincare")
    spec = regularity.SliceSpec(parse_stratum(a.slice_stratum, cfg.dim), a.slice_delta, a.slice_etas, a.slice_p)
    if a.slice_field == "solution":
        if cfg.dim != 2:
            raise ConfigError("slice_field = solution needs a 2D domain; give an expression in 3D")
        _, u = _fem_solution(run, spec.stratum.origin)
    else:
        u = ScalarField.parse(a.slice_field, cfg.dim)
    rows = regularity.slice_poincare_ratio(u, spec, cfg.domain())
    run.csv("slice.csv", "eta,num,den,ratio", rows)
    try:
        run.manifest["results"]["slope"] = regularity.slice_slope(rows)
    except (DomainError, ValueError):
        run.manifest["results"]["slope"] = None
    return EXIT_NUMERICAL if all(r[3] == "degenerate" for r in rows) else EXIT_OK


def cmd_mesh_export(run: _Run, points):
    cfg = run.cfg
    if cfg.dim != 2:
        raise ConfigError("mesh-export needs a 2D domain")
    grading = _grading(cfg, _points(cfg, points)[0] if (points or cfg.analysis.points) else None)
    mesh = build_mesh(cfg.domain(), cfg.analysis.h, grading, cfg.component_seed)
    run.manifest["results"].update(nodes=len(mesh.vertices), triangles=len(mesh.triangles),
                                   min_angle_deg=mesh_quality(mesh).min_angle, flagged=bool(mesh.flagged))
    run.write("mesh.txt", export_mesh(mesh))
    return EXIT_OK


COMMANDS = {
    "check-cone": cmd_check_cone,
    "solve": cmd_solve,
    "estimate-p": cmd_estimate_p,
    "slice-poincare": cmd_slice_poincare,
    "mesh-export": cmd_mesh_export,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conelab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="configuration file")
    ap.add_argument("--point", action="append", default=None, help="evaluation point 'x,y[,z]' (repeatable)")
    ap.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    ap.add_argument("--seed", type=int, default=None, help="master seed (overrides analysis.seed)")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, DomainError, PolynomialParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return EXIT_VALIDATION
        cfg = cfg.with_seed(args.seed)
    try:
        run = _Run(args.command, cfg, args.out)
        code = COMMANDS[args.command](run, args.point)
        run.manifest["exit_code"] = code
        run.close()
    except (ConfigError, DomainError, PolynomialParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
