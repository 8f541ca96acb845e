import json
import subprocess
import sys

import pytest

from hflandau.cli import main
from hflandau.config import ConfigError, RunConfig, parse_config, parse_config_text


def test_empty_config_is_reference():
    cfg, warnings = parse_config_text("")
    assert cfg == RunConfig() and warnings == []
    assert (cfg.dimension, cfg.grid_points, cfg.equilibrium, cfg.w1, cfg.w2) == (3, 9, "gaussian", "yukawa", "gaussian")
    assert cfg.potentials().eps1 == 0.05 and cfg.potentials().w1.m2 == 1.0


def test_dimension_rejected_with_line():
    with pytest.raises(ConfigError) as err:
        parse_config_text("# comment\ndimension = 5\n")
    assert err.value.line is None and "line 2" in str(err.value)


def test_sigma_violation_is_warning():
    cfg, warnings = parse_config_text("sigma = 3")
    assert cfg.sigma == 3.0 and any("sigma" in w for w in warnings)


@pytest.mark.parametrize("text,line", [("foo = 1", 1), ("\nkmax = 1\nkmax = 2", 3), ("grid_points = nine", 1),
                                       ("w1 = coulomb", 1), ("just words", 1)])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ConfigError) as err:
        parse_config_text(text)
    assert err.value.line == line


def test_parse_file_and_digest(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("dimension = 1\ngrid_points = 17  # inline comment\n")
    cfg, _ = parse_config(p)
    assert cfg.dimension == 1 and cfg.grid_points == 17
    assert cfg.digest() == parse_config(p)[0].digest() != RunConfig().digest()


def write(tmp_path, text):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    return str(p)


SMALL_LINEAR = "linear_grid_points = 17\nlinear_kmax = 2\nhorizon = 4\n"


def test_exit_parse(tmp_path):
    assert main(["linear", "--config", write(tmp_path, "bogus = 1"), "--out", str(tmp_path / "o")]) == 1
    assert main(["linear", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")]) == 1


def test_exit_precondition(tmp_path):
    cfg = write(tmp_path, SMALL_LINEAR + "w2_amplitude = 0.5\n")
    assert main(["linear", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_exit_numerical_abort(tmp_path):
    cfg = write(tmp_path, "dimension = 1\ngrid_points = 9\nhorizon = 1\ninitial_amplitude = 1e300\n")
    with pytest.warns(RuntimeWarning):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_linear_outputs_deterministic(tmp_path):
    cfg = write(tmp_path, SMALL_LINEAR)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["linear", "--config", cfg, "--out", str(out), "--threads", "1"]) == 0
        outs.append(out)
    for f in ("linear.csv", "manifest.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    rows = (outs[0] / "linear.csv").read_text().splitlines()
    assert rows[0].endswith("max_rel_err")
    assert max(float(r.split(",")[-1]) for r in rows[1:]) <= 0.01
    man = json.loads((outs[0] / "manifest.json").read_text())
    assert man["config_sha256"] and man["version"] and man["results"]["linear"]["max_rel_err"] <= 0.01
    assert main(["report", "--out", str(outs[0])]) == 0
    assert "manifest" in json.loads((outs[0] / "report.json").read_text())


def test_penrose_without_coupling(tmp_path):
    cfg = write(tmp_path, "w1 = zero\nscan_nk = 3\n")
    out = tmp_path / "p"
    assert main(["penrose", "--config", cfg, "--out", str(out), "--fast"]) == 0
    rep = json.loads((out / "penrose.json").read_text())
    assert rep["c0"] == 1.0
    assert (out / "level_set_k1.csv").exists()


def test_report_needs_results(tmp_path):
    assert main(["report", "--out", str(tmp_path / "empty")]) == 2


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "hflandau.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "verify" in res.stdout
