import csv
import json

import numpy as np
import pytest

from mlsapprox.approximation import (
    ConvergenceReport,
    StudyConfig,
    run_convergence_study,
)
from mlsapprox.cli import main
from mlsapprox.galerkin import GalerkinStudy, galerkin_convergence_study
from mlsapprox.geometry import DomainBox, PointSet

TINY = """
lambda = 3.0
m = 2
h_chain = [0.2, 0.1]
n_quad_per_axis = 16
probe_spacing = 0.05
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(*argv):
    return main([str(a) for a in argv])


def test_geom_writes_points_and_metrics(tmp_path, capsys):
    cfg = write(tmp_path, "g.toml", "spacing = 0.25\n")
    out = tmp_path / "o" / "g"
    assert run("geom", "--config", cfg, "--out", out, "--probe-resolution", "100") == 0
    pts = PointSet.load(f"{out}_points.csv", DomainBox.cube(-0.5, 0.5, 2))
    assert len(pts) == 25
    metrics = json.loads((tmp_path / "o" / "g_metrics.json").read_text())
    assert metrics["separation_distance"] == pytest.approx(0.125)
    assert metrics["n_points"] == 25
    assert "fill_distance" in capsys.readouterr().out


def test_geom_json_points_file(tmp_path):
    src = tmp_path / "pts.json"
    PointSet([[0.0, 0.0], [0.3, 0.1], [-0.2, 0.4]], DomainBox.cube(-0.5, 0.5, 2)).save(src)
    cfg = write(tmp_path, "g.json", json.dumps({"points_file": str(src)}))
    assert run("geom", "--config", cfg, "--out", tmp_path / "r", "--format", "json") == 0
    assert len(json.loads((tmp_path / "r_points.json").read_text())["points"]) == 3


def test_converge_outputs_match_library(tmp_path):
    cfg = write(tmp_path, "c.toml", TINY)
    prefix = tmp_path / "c"
    assert run("converge", "--config", cfg, "--out", prefix) == 0
    lib = run_convergence_study(
        StudyConfig(lam=3.0, m=2, h_chain=[0.2, 0.1], n_quad_per_axis=16, probe_spacing=0.05, probe_resolution=400)
    )
    assert (tmp_path / "c_orders.csv").read_text() == lib.orders_csv()
    assert (tmp_path / "c_errors.csv").read_text() == lib.errors_csv()
    doc = json.loads((tmp_path / "c_diagnostics.json").read_text())
    assert ConvergenceReport.from_dict(doc).to_json() == lib.to_json()
    with open(tmp_path / "c_errors.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[1]["L2_a00"]) == lib.rows[1].errors[("2", (0, 0))]


def test_converge_reruns_byte_identical(tmp_path):
    cfg = write(tmp_path, "c.toml", TINY)
    for tag in ("a", "b"):
        assert run("converge", "--config", cfg, "--out", tmp_path / tag, "--format", "json") == 0
    assert (tmp_path / "a_report.json").read_bytes() == (tmp_path / "b_report.json").read_bytes()
    assert run("converge", "--config", cfg, "--out", tmp_path / "t", "--format", "json", "--threads", "2") == 0
    assert (tmp_path / "t_report.json").read_bytes() == (tmp_path / "a_report.json").read_bytes()


def test_converge_json_config(tmp_path):
    doc = {"lambda": 3.0, "m": 2, "h_chain": [0.2, 0.1], "n_quad_per_axis": 8, "probe_spacing": 0.1}
    cfg = write(tmp_path, "c.json", json.dumps(doc))
    assert run("converge", "--config", cfg, "--out", tmp_path / "j") == 0


@pytest.mark.parametrize(
    "text, message",
    [
        ("lambda = 1.5\nm = 2\nh_chain = [0.1, 0.03]\n", "h_chain must halve"),
        ("lambda = 1.5\nm = 2\nfoo = 1\n", "unknown config keys: foo"),
        ("m = 2\n", "needs 'lambda'"),
        ("lambda = 1.5\nm = 2\nweight_kind = 'gauss'\n", "unknown weight kind"),
        ("lambda = [\n", "cannot parse"),
    ],
)
def test_converge_config_errors_exit_2(tmp_path, capsys, text, message):
    cfg = write(tmp_path, "bad.toml", text)
    assert run("converge", "--config", cfg, "--out", tmp_path / "x") == 2
    assert message in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path, capsys):
    assert run("geom", "--config", tmp_path / "nope.toml") == 2
    assert "not found" in capsys.readouterr().err


def test_galerkin_unknown_registry_key_exit_2(tmp_path, capsys):
    cfg = write(tmp_path, "g.toml", 'h_chain = [0.2]\n[problem]\nc = "laplace_c"\n')
    assert run("galerkin", "--config", cfg, "--out", tmp_path / "g") == 2
    assert "laplace_c" in capsys.readouterr().err
    cfg = write(tmp_path, "g2.toml", "h_chain = [0.2, 0.15]\n")
    assert run("galerkin", "--config", cfg, "--out", tmp_path / "g") == 2
    cfg = write(tmp_path, "g3.toml", "h_chain = [0.2]\n[problem]\nalpha = 1\n")
    assert run("galerkin", "--config", cfg, "--out", tmp_path / "g") == 2


def test_coverage_failure_exit_3(tmp_path, capsys):
    # support radius smaller than half the spacing leaves gaps
    cfg = write(tmp_path, "c.toml", "lambda = 3.0\nm = 1\nh_chain = [0.2]\ndelta_factor = 0.3\nn_quad_per_axis = 4\n")
    assert run("converge", "--config", cfg, "--out", tmp_path / "c") == 3
    assert "no coverage" in capsys.readouterr().err


def test_galerkin_outputs_consistent_with_library(tmp_path):
    cfg = write(tmp_path, "g.toml", "h_chain = [0.2, 0.1]\nfield_resolution = 6\n")
    prefix = tmp_path / "g"
    assert run("galerkin", "--config", cfg, "--out", prefix) == 0
    doc = json.loads((tmp_path / "g_galerkin.json").read_text())
    lib = galerkin_convergence_study(GalerkinStudy(h_chain=[0.2, 0.1]))
    assert doc["rows"][1]["h1_error"] == lib.rows[1].h1_error
    assert doc["orders_h1"][1] == pytest.approx(lib.orders()[1])
    coef = np.loadtxt(tmp_path / "g_coefficients.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(coef[:, 2], lib.finest[0].coefficients)
    field = np.loadtxt(tmp_path / "g_field.csv", delimiter=",", skiprows=1)
    assert field.shape == (49, 4)  # 6 intervals per axis
    assert np.abs(field[:, 2] - field[:, 3]).max() < 0.05
    lines = (tmp_path / "g_galerkin.csv").read_text().splitlines()
    assert lines[0].startswith("h,n_points,l2_error,h1_error")


def test_stability_command(tmp_path):
    cfg = write(tmp_path, "s.toml", "h_chain = [0.1, 0.05]\nsample_resolution = 8\n")
    assert run("stability", "--config", cfg, "--out", tmp_path / "s") == 0
    doc = json.loads((tmp_path / "s_stability.json").read_text())
    modes = [r["mode"] for r in doc["levels"]]
    assert modes == ["shifted_scaled"] * 2 + ["unscaled_global"] * 2
    raw = [r["lambda_min"] for r in doc["levels"] if r["mode"] == "unscaled_global"]
    assert raw[0] > raw[1]


def test_bundled_config_names_resolve(tmp_path):
    assert run("geom", "--config", "geom.toml", "--out", tmp_path / "b", "--probe-resolution", "50") == 0
