import json

import numpy as np
import pytest

from mlvms.cli import main, read_grid, write_grid
from mlvms.config import parse_config
from mlvms.errors import ConfigError, OutputError

SMALL_POISSON = """
[run]
problem = poisson2d
solver = full
tol = 1e-8

[level.1]
box = 0 20, 0 20
h = 0.5
s = 2
p = 3

[level.2]
box = 7.5 10.5, 7.5 10.5
h = 0.25
s = 2
p = 3
"""

SMALL_SINE = """
[run]
problem = sine2d

[level.1]
box = 0 1, 0 1
h = 0.25
s = 2
p = 3

[converge]
refine = 1 2 4

[modes]
deviation_tol = 1e-6
max_modes = 4
"""

SMALL_HEAT = """
[run]
problem = heat1d
solver = td
tol = 1e-8
td_tol = 1e-9
t_out = 4

[level.1]
box = -1 1
h = 0.125
dt = 0.5
t_span = 0 4
s = 3
p = 3
Q = 4
"""


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_parse_defaults_and_levels():
    cfg = parse_config(SMALL_POISSON)
    assert cfg.solver == "full" and len(cfg.levels) == 2
    assert cfg.levels[0].box == ((0.0, 20.0), (0.0, 20.0)) and cfg.levels[1].h == (0.25,)
    assert cfg.refine == (1, 2, 4) and cfg.refine_levels is None
    specs = cfg.specs(2.0)
    assert specs[0].h == (0.25, 0.25) and specs[1].h == (0.125, 0.125)
    sine = parse_config(SMALL_SINE)
    assert sine.refine == (1.0, 2.0, 4.0) and sine.max_modes == 4
    assert parse_config("").levels == ()


@pytest.mark.parametrize("text", [
    "[run]\nsolver = magic\n",
    "[run]\ntol = -1\n",
    "[run]\ntol = abc\n",
    "[level.1]\nbox = 0 1\n",
    "[level.1]\nbox = 0 1 2\nh = 0.1\n",
    "[level.2]\nbox = 0 1\nh = 0.1\n",
    "[level.1]\nbox = 0 1\nh = 0.1\ndt = 0.1\n",
    "[map]\nkind = warp\n",
    "[converge]\nnorm = max\n",
    "not an ini file",
])
def test_bad_configs_raise(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_grid_round_trip(tmp_path):
    axes = [np.linspace(0, 1, 3), np.array([-0.5, 0.25])]
    vals = np.arange(6.0) / 7
    write_grid(tmp_path / "g.grid", axes, vals, 2, "reference", 1.5)
    g = read_grid(tmp_path / "g.grid")
    assert g["level"] == 2 and g["frame"] == "reference" and g["time"] == 1.5
    np.testing.assert_array_equal(g["values"], vals.reshape(3, 2))
    for a, b in zip(g["axes"], axes):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(OutputError):
        write_grid(tmp_path / "bad.grid", axes, np.zeros(5), 1)
    (tmp_path / "junk.grid").write_text("hello\n")
    with pytest.raises(OutputError):
        read_grid(tmp_path / "junk.grid")


def test_solve_writes_metrics_and_grids(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL_POISSON)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    m = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert m["levels"] == 2 and 0 < m["err_energy_rel"] < 0.05
    g1 = read_grid(tmp_path / "o" / "level_1.grid")
    g2 = read_grid(tmp_path / "o" / "level_2.grid")
    assert g1["values"].shape == (41, 41) and g2["values"].shape == (13, 13)
    assert "poisson" in capsys.readouterr().out


def test_converge_csv_is_deterministic(tmp_path):
    cfg = _write(tmp_path, SMALL_SINE)
    for name in ("a", "b"):
        assert main(["converge", "--config", cfg, "--out", str(tmp_path / name), "--seed", "3"]) == 0
    a = (tmp_path / "a" / "convergence.csv").read_text().splitlines()
    b = (tmp_path / "b" / "convergence.csv").read_text().splitlines()
    assert len(a) == 4
    # wall time is the only column allowed to differ
    col = a[0].split(",").index("time_s")
    strip = lambda rows: [[v for i, v in enumerate(r.split(",")) if i != col] for r in rows]
    assert strip(a) == strip(b)
    m = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert m["seed"] == 3 and m["slope"] > 3.0 and not m["plateau"]


def test_space_time_td_solve(tmp_path):
    cfg = _write(tmp_path, SMALL_HEAT)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    m = json.loads((tmp_path / "o" / "metrics.json").read_text())
    finer = _write(tmp_path, SMALL_HEAT.replace("dt = 0.5", "dt = 0.25"), "fine.cfg")
    assert main(["solve", "--config", finer, "--out", str(tmp_path / "f")]) == 0
    mf = json.loads((tmp_path / "f" / "metrics.json").read_text())
    assert mf["err_l2"] < 0.6 * m["err_l2"] < 0.03
    g = read_grid(tmp_path / "o" / "level_1.grid")
    assert g["time"] == 4.0 and g["values"].shape == (17,)


def test_exit_codes(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "missing.cfg")]) == 2
    bad_mesh = SMALL_POISSON.replace("box = 7.5 10.5, 7.5 10.5", "box = 7.6 10.5, 7.5 10.5")
    assert main(["solve", "--config", _write(tmp_path, bad_mesh), "--out", str(tmp_path / "m")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["solve", "--config", _write(tmp_path, SMALL_POISSON), "--out", str(blocker / "sub")]) == 5
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["solve"])


def test_verify_passes(tmp_path):
    assert main(["verify", "--out", str(tmp_path / "v")]) == 0
    m = json.loads((tmp_path / "v" / "metrics.json").read_text())
    assert m["ok"] and all(c["ok"] for c in m["checks"])


def test_modes_command(tmp_path):
    assert main(["modes", "--config", _write(tmp_path, SMALL_SINE), "--out", str(tmp_path / "o")]) == 0
    m = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert m["Q"] == 1
