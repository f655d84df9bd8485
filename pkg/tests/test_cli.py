import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

from addiso.backfit import backfit, build_dataset
from addiso.cli import RunConfig, _PARSERS, main, read_config_file
from addiso.isotonic import IsotonicFit, evaluate


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def write_data(path, header, y, x):
    lines = [header] + [",".join("%.17g" % v for v in row)
                        for row in np.column_stack([y, x])]
    return write(path, "\n".join(lines) + "\n")


def run(*args):
    return main([str(a) for a in args])


def test_parser_table_covers_run_config():
    from dataclasses import fields
    assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


def test_fit_hand_example(tmp_path):
    src = write(tmp_path / "hand.csv", "y,a,b\n0,0,1\n2,1,0\n")
    out = tmp_path / "fit.json"
    assert run("fit", "--input", src, "--output", out) == 0
    report = json.loads(out.read_text())
    assert report["c_hat"] == 1.0
    assert report["converged"] is True
    assert report["final_objective"] == 0.0
    a, b = report["components"]
    assert a["name"] == "a" and a["levels"] == [-1.0, 1.0]
    assert b["levels"] == [0.0, 0.0]


def test_fit_single_covariate_monotone(tmp_path):
    src = write(tmp_path / "mono.csv", "y,x\n1,0.1\n2,0.2\n6,0.3\n")
    out = tmp_path / "fit.json"
    assert run("fit", "--input", src, "--output", out) == 0
    report = json.loads(out.read_text())
    assert report["final_objective"] == 0.0
    assert_allclose(report["components"][0]["levels"], [-2.0, -1.0, 3.0])
    assert report["c_hat"] == 3.0


@pytest.mark.parametrize("text, fragment", [
    ("y,x\n1,0\n2,abc\n", "line 3, column 2"),
    ("y,x\n1,0\n2\n", "line 3"),
    ("y,x\n1,nan\n", "line 2, column 2"),
    ("y\n1\n", "line 1"),
    ("y,x\n", "no data"),
    ("", "empty"),
])
def test_fit_bad_csv_exit_2(tmp_path, capsys, text, fragment):
    src = write(tmp_path / "bad.csv", text)
    assert run("fit", "--input", src) == 2
    assert fragment in capsys.readouterr().err


def test_fit_missing_file_and_input(tmp_path, capsys):
    assert run("fit", "--input", tmp_path / "nope.csv") == 2
    assert run("fit") == 2
    assert "--input" in capsys.readouterr().err


def test_fit_nonconvergence_exit_3(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 3))
    y = x.sum(axis=1) + rng.normal(size=40)
    src = write_data(tmp_path / "d.csv", "y,a,b,c", y, x)
    out = tmp_path / "fit.json"
    assert run("fit", "--input", src, "--output", out, "--max-cycles", 1,
               "--tol", 1e-300) == 3
    # the report is still written
    assert json.loads(out.read_text())["converged"] is False


def test_fit_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, size=(60, 2))
    y = x[:, 0] ** 3 + np.sin(x[:, 1]) + rng.normal(scale=0.3, size=60)
    src = write_data(tmp_path / "d.csv", "y,x1,x2", y, x)
    out = tmp_path / "fit.json"
    assert run("fit", "--input", src, "--output", out) == 0
    report = json.loads(out.read_text())
    fit = backfit(build_dataset(y, x))
    pred = np.full(60, report["c_hat"])
    for j, comp in enumerate(report["components"]):
        f = IsotonicFit(np.array(comp["knots"]), np.array(comp["levels"]),
                        np.array(comp["block_weights"]))
        pred += evaluate(f, x[:, j])
    assert_allclose(pred, fit.predict(x), atol=1e-9, rtol=0)


def test_fit_csv_format(tmp_path):
    src = write(tmp_path / "hand.csv", "y,a,b\n0,0,1\n2,1,0\n")
    out = tmp_path / "fit.csv"
    assert run("fit", "--input", src, "--output", out, "--format", "csv") == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["component", "knot", "level", "block_weight"]
    assert rows[1] == ["intercept", "", "1", ""]
    assert rows[2] == ["a", "0", "-1", "1"]
    assert len(rows) == 6


def test_config_file_parsing(tmp_path):
    cfg = write(tmp_path / "run.cfg", "# comment\nreps = 5  # trailing\n"
                "m2 = none\nns = 100, 200\nper_unit_length = false\ntol = 1e-9\n")
    values = read_config_file(cfg)
    assert values == {"reps": 5, "m2": None, "ns": (100, 200),
                      "per_unit_length": False, "tol": 1e-9}


@pytest.mark.parametrize("text", ["reps 5\n", "color = red\n", "reps = many\n"])
def test_config_file_errors(tmp_path, capsys, text):
    cfg = write(tmp_path / "run.cfg", text)
    assert run("simulate", "--config", cfg) == 2
    assert "line 1" in capsys.readouterr().err


def test_invalid_simulation_value_exit_2(tmp_path):
    cfg = write(tmp_path / "run.cfg", "rho = 1.5\n")
    assert run("simulate", "--config", cfg) == 2


def test_unknown_command_exit_2():
    assert run("frobnicate") == 2


def test_reproduce_table_smoke_and_determinism(tmp_path):
    cfg = write(tmp_path / "t.cfg", "preset = table1\nreps = 2\nmaster_seed = 11\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("reproduce-table", "--config", cfg, "--output", a) == 0
    assert run("reproduce-table", "--config", cfg, "--output", b) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.DictReader(a.open()))
    assert len(rows) == 15
    assert {(r["n"], r["rho"]) for r in rows} == {
        (str(n), r) for n in (200, 400, 800) for r in ("0.0", "0.5", "-0.5", "0.9", "-0.9")}
    for r in rows:
        assert float(r["m1_ratio"]) == pytest.approx(
            float(r["m1_backfit"]) / float(r["m1_oracle"]), rel=1e-15)
    # seed flag overrides the config file
    c = tmp_path / "c.csv"
    assert run("reproduce-table", "--config", cfg, "--output", c, "--seed", 12) == 0
    assert c.read_bytes() != a.read_bytes()


def test_reproduce_table_unknown_preset(tmp_path):
    cfg = write(tmp_path / "t.cfg", "preset = table9\nreps = 2\n")
    assert run("reproduce-table", "--config", cfg) == 2


def test_simulate_json(tmp_path):
    out = tmp_path / "sim.json"
    assert run("simulate", "--reps", 3, "--seed", 4, "--output", out) == 0
    report = json.loads(out.read_text())
    assert report["reps_completed"] == 3 and report["failures"] == 0
    assert len(report["components"]) == 2
    assert report["config"]["master_seed"] == 4


def test_oracle_check_single_n_and_d1(tmp_path):
    cfg = write(tmp_path / "o.cfg", "ns = 100\nreps = 3\n")
    out = tmp_path / "o.json"
    assert run("oracle-check", "--config", cfg, "--output", out) == 0
    assert json.loads(out.read_text())["decreasing"] == [None, None]
    cfg = write(tmp_path / "o1.cfg", "ns = 100, 200\nreps = 3\nm2 = none\n")
    assert run("oracle-check", "--config", cfg, "--output", out) == 0
    report = json.loads(out.read_text())
    assert report["median_sup"] == [[0.0], [0.0]]


def test_quantile_curves_long_format(tmp_path):
    cfg = write(tmp_path / "q.cfg", "reps = 4\nrho = 0.5\ngrid_points = 11\n")
    out = tmp_path / "q.csv"
    assert run("quantile-curves", "--config", cfg, "--output", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert list(rows[0]) == ["x", "value", "series", "quantile"]
    assert len(rows) == 3 * 3 * 11
    assert {r["series"] for r in rows} == {"backfit", "oracle", "truth"}
    assert {r["quantile"] for r in rows} == {"0.25", "0.5", "0.75"}


def test_module_entry_point(tmp_path):
    src = write(tmp_path / "hand.csv", "y,a,b\n0,0,1\n2,1,0\n")
    proc = subprocess.run([sys.executable, "-m", "addiso", "fit", "--input", src],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["c_hat"] == 1.0
