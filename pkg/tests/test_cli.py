import json
import logging
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conelab.cli import main, parse_stratum
from conelab.config import ConfigError, derive_seed, parse_config, parse_config_text

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SQUARE = (CONFIGS / "square.cfg").read_text()


def run(tmp_path, command, cfg_text, *extra, name="cfg"):
    path = tmp_path / f"{name}.cfg"
    path.write_text(cfg_text)
    out = tmp_path / f"out_{name}_{command}"
    code = main([command, "--config", str(path), "--out", str(out), *extra])
    return code, out


def csv_body(path):
    lines = Path(path).read_text().splitlines()
    assert lines[0].startswith("# conelab") and lines[1].startswith("# config_sha256 ")
    return [ln for ln in lines if not ln.startswith("#")]


# -- configuration --------------------------------------------------------------


def test_shipped_cusp_config():
    cfg = parse_config(CONFIGS / "example34_pos.cfg")
    d = cfg.domain()
    assert [p.name for p in d.pieces()] == ["sphere", "c0"]
    assert d.neumann_pieces() == {"sphere"} and d.dirichlet_pieces() == {"c0"}
    assert d.variety_polynomials()[0](np.array([[0.5, 0.5, 0.0]]))[0] == pytest.approx(0.375)


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.cfg")))
def test_round_trip_shipped(name):
    cfg = parse_config(CONFIGS / name)
    again = parse_config_text(cfg.text())
    assert again == cfg and again.text() == cfg.text()


def test_missing_lambda0_defaults_with_warning(caplog):
    text = SQUARE.replace("lambda0 = 1e-6\n", "")
    with caplog.at_level(logging.WARNING):
        cfg = parse_config_text(text)
    assert cfg.lambda0 == 1e-6 and "operator.lambda0" in cfg.defaults_used
    assert "lambda0" in caplog.text


def test_malformed_polynomial_names_token():
    text = SQUARE.replace("x > 0;", "x^^2 > 0;")
    with pytest.raises(ConfigError, match=r"line 6: .*'\^'") as exc:
        parse_config_text(text)
    assert exc.value.line == 6


def test_syntax_error_has_line_number():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config_text("[domain]\ndim = 2\nthis line has no equals sign\n")


def test_semantic_errors():
    with pytest.raises(ConfigError, match="Dirichlet part of the boundary is empty"):
        parse_config_text(SQUARE.replace("dirichlet = variety", "dirichlet = none"))
    with pytest.raises(ConfigError, match="unknown key analysis.walker"):
        parse_config_text(SQUARE.replace("seed = 0", "seed = 0\nwalker = 3"))
    with pytest.raises(ConfigError, match="missing required key domain.dim"):
        parse_config_text("[domain]\nradius = 1\n")
    with pytest.raises(ConfigError, match="2x2"):
        parse_config_text(SQUARE.replace("A = identity", "A = 1, 0"))


def test_seed_override_changes_hash():
    cfg = parse_config_text(SQUARE)
    assert cfg.with_seed(5).sha256() != cfg.sha256()
    assert cfg.with_seed(0).sha256() == cfg.sha256()


def test_derive_seed_streams_independent():
    seeds = {derive_seed(0, s, i) for s in ("check-cone", "solve") for i in range(4)}
    assert len(seeds) == 8
    assert derive_seed(7, "solve", 1) == derive_seed(7, "solve", 1)


def test_parse_stratum():
    s = parse_stratum("axis: 2, -0.5, 0.5", 3)
    assert s.dimension == 1 and s.extent == ((-0.5, 0.5),)
    assert parse_stratum("point: 0, 0", 2).dimension == 0
    with pytest.raises(ConfigError):
        parse_stratum("plane: 0", 3)


_num = st.floats(-10, 10, allow_nan=False).map(lambda v: round(v, 6))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(_num, _num), min_size=0, max_size=4), st.integers(0, 2**63), _num,
       st.sampled_from(["0", "x^2 - y", "sin(x)*y"]))
def test_round_trip_property(points, seed, lam, g):
    base = parse_config_text(SQUARE)
    text = base.text().replace("points = ", "points = " + "; ".join(f"{a}, {b}" for a, b in points), 1)
    text = text.replace("seed = 0", f"seed = {seed}").replace("g = x^2 + y^2", f"g = {g}")
    text = text.replace("slice_delta = 0.5", f"slice_delta = {abs(lam) + 0.1!r}")
    cfg = parse_config_text(text)
    assert parse_config_text(cfg.text()) == cfg


# -- commands ---------------------------------------------------------------------


def test_mesh_export_and_manifest(tmp_path):
    code, out = run(tmp_path, "mesh-export", SQUARE)
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    cfg = parse_config_text(SQUARE)
    assert man["config_sha256"] == cfg.sha256() and man["config"] == cfg.text()
    assert "analysis.walkers" in man["defaults_used"]
    assert (out / "mesh.txt").read_text().splitlines()[3].startswith("V ")


def test_solve_2d_writes_fem_export(tmp_path):
    code, out = run(tmp_path, "solve", SQUARE)
    assert code == 0
    rows = [r.split() for r in csv_body(out / "solution.txt")]
    nodes = np.array([[float(c) for c in r] for r in rows if len(r) == 3])
    assert np.abs(nodes[:, 2] - nodes[:, 0] ** 2 - nodes[:, 1] ** 2).max() <= 0.01
    man = json.loads((out / "manifest.json").read_text())
    assert man["tolerances"]["cg_rtol"] == 1e-10 and man["results"]["cg_residual"] <= 1e-10


def test_solve_3d_wos_records(tmp_path):
    text = (CONFIGS / "example34_pos.cfg").read_text().replace("walkers = 10000", "walkers = 2000")
    code, out = run(tmp_path, "solve", text, "--point", "0.1,0.01,0.5")
    assert code == 0
    head, row = csv_body(out / "wos.csv")
    assert head == "point,mean,stderr,steps,excluded,flags"
    assert int(row.split(",")[4]) < 0.01 * 2000
    man = json.loads((out / "manifest.json").read_text())
    assert "solve[0]" in man["seeds"] and man["tolerances"]["wos_eps"] == 1e-4


def test_volume_source_rejected_in_3d(tmp_path, capsys):
    text = (CONFIGS / "shell.cfg").read_text().replace("f = 0", "f = 1")
    code, _ = run(tmp_path, "solve", text)
    assert code == 2 and "volume source unsupported in 3D" in capsys.readouterr().err


def test_check_cone_smooth_point(tmp_path):
    text = SQUARE.replace("h = 0.1", "h = 0.1\nsamples = 2000")
    code, out = run(tmp_path, "check-cone", text, "--point", "0.5,0")
    assert code == 0
    head, row = csv_body(out / "check_cone.csv")
    assert head == "t,clause1,clause2,alpha,holds,confidence"
    t, c1, c2, alpha, holds, conf = row.split(",")
    assert t == "0.5 0.0" and holds == "true" and float(c1) >= float(alpha)


def test_estimate_p_disk_unbounded(tmp_path):
    code, out = run(tmp_path, "estimate-p", (CONFIGS / "disk.cfg").read_text())
    assert code == 0
    head, row = csv_body(out / "exponent.csv")
    assert head == "t_x,t_y,t_z,p_star,margin,confidence"
    assert row.split(",")[3] == "unbounded"
    assert csv_body(out / "profile_0.csv")[0] == "j,r,p,mass"


def test_slice_command(tmp_path):
    code, out = run(tmp_path, "slice-poincare", (CONFIGS / "slit.cfg").read_text())
    assert code == 0
    rows = csv_body(out / "slice.csv")
    assert rows[0] == "eta,num,den,ratio" and len(rows) == 7


def test_byte_identical_reruns(tmp_path):
    text = SQUARE.replace("h = 0.1", "h = 0.1\nsamples = 1000")
    _, a = run(tmp_path, "check-cone", text, "--point", "0.5,0", name="a")
    _, b = run(tmp_path, "check-cone", text, "--point", "0.5,0", name="b")
    assert (a / "check_cone.csv").read_bytes() == (b / "check_cone.csv").read_bytes()
    _, c = run(tmp_path, "check-cone", text, "--point", "0.5,0", "--seed", "9", name="c")
    assert (a / "check_cone.csv").read_bytes() != (c / "check_cone.csv").read_bytes()


def test_exit_codes(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "missing.cfg")]) == 4
    code, _ = run(tmp_path, "solve", SQUARE.replace("x > 0;", "x^^2 > 0;"))
    assert code == 2
    code, _ = run(tmp_path, "estimate-p", SQUARE)
    assert code == 2 and "no points" in capsys.readouterr().err
    code, _ = run(tmp_path, "mesh-export", (CONFIGS / "shell.cfg").read_text())
    assert code == 2
    with pytest.raises(SystemExit):
        main(["solve"])
