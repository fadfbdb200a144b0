import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from windtube import cli
from windtube.io import read_distribution_csv, read_vtk_scalars, sha256_file
from windtube.tracing import read_lines_csv


def run(tmp_path, toml, *flags, name="cfg.toml"):
    cfg = tmp_path / name
    cfg.write_text(toml)
    return cli.main(["--config", str(cfg), *flags])


def error_record(out):
    return json.loads((out / "error.json").read_text())


WIND = """
[grid]
n_r = 6
[run]
command = "wind"
"""


def test_wind_writes_the_distribution_and_sidecar(tmp_path):
    out = tmp_path / "w"
    assert run(tmp_path, WIND, "--out", str(out)) == 0
    rows = read_distribution_csv(out / "Lv.csv")
    assert np.abs(rows[:, 5] / math.pi - 1).max() < 0.02
    side = json.loads((out / "wind.json").read_text())
    assert side["artifacts"]["distribution"]["sha256"] == sha256_file(out / "Lv.csv")
    cfg = side["config"]
    assert cli.normalize_config(cfg) == cfg
    assert cfg["grid"]["n_r"] == 6 and cfg["run"]["out"] == str(out)
    assert not (out / "error.json").exists()


def test_runs_are_byte_identical_for_any_thread_count(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(tmp_path, WIND, "--out", str(a), "--threads", "1") == 0
    assert run(tmp_path, WIND, "--out", str(b), "--threads", "3") == 0
    assert (a / "Lv.csv").read_bytes() == (b / "Lv.csv").read_bytes()
    sa = json.loads((a / "wind.json").read_text())
    sb = json.loads((b / "wind.json").read_text())
    assert sa["results"] == sb["results"] and sa["artifacts"] == sb["artifacts"]


def test_flags_override_the_file(tmp_path):
    out = tmp_path / "f"
    assert run(tmp_path, WIND, "--out", str(out), "--grid-nr", "4", "--tol-trace", "1e-7",
               "--command", "trace") == 0
    side = json.loads((out / "trace.json").read_text())
    assert side["config"]["grid"]["n_r"] == 4
    assert side["config"]["tolerances"]["trace"] == 1e-7
    lines = read_lines_csv(out / "lines.csv")
    assert len(lines) == side["results"]["n_lines"]


def test_solve_writes_vtk(tmp_path):
    out = tmp_path / "s"
    toml = '[domain]\nkind = "expanding-tube"\n[mesh]\nresolution = 0.3\n[run]\ncommand = "solve"\n'
    assert run(tmp_path, toml, "--out", str(out)) == 0
    arrays = read_vtk_scalars(out / "mesh.vtk")
    assert arrays["phi"].min() == 0.0 and arrays["phi"].max() == 1.0
    assert np.all(arrays["u_mag"] > 0)
    assert set(np.unique(read_vtk_scalars(out / "boundary.vtk")["boundary_tag"])) == {0, 1, 2}
    res = json.loads((out / "solve.json").read_text())["results"]
    assert res["flux_in"] == pytest.approx(res["flux_out"], rel=1e-6)


def test_helicity_reports_total_helicity(tmp_path):
    out = tmp_path / "h"
    toml = WIND.replace('"wind"', '"helicity"')
    assert run(tmp_path, toml, "--out", str(out)) == 0
    side = json.loads((out / "helicity.json").read_text())
    assert side["results"]["total_helicity"] == pytest.approx(math.pi ** 2, rel=0.03)
    assert (out / "Ab.csv").exists()


@pytest.mark.parametrize("toml, stage", [
    ("[mesh]\nresolution = -0.1\n", "config"),
    ("[colour]\nx = 1\n", "config"),
    ("[grid\n", "config"),
    ('[grid]\nkind = "hex"\n', "config"),
    ('[domain]\nkind = "curved-tube"\nbend_radius = -1.0\n', "domain"),
    ('[field]\nkind = "vortex"\n', "field"),
])
def test_configuration_errors_exit_2(tmp_path, toml, stage):
    out = tmp_path / "e"
    assert run(tmp_path, toml, "--out", str(out)) == 2
    rec = error_record(out)
    assert rec["exit_code"] == 2 and rec["stage"] == stage and rec["status"] == "error"


def test_missing_config_file_exits_2(tmp_path, capsys):
    assert cli.main(["--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"


def test_solver_failure_exits_3(tmp_path):
    out = tmp_path / "n"
    toml = ('[mesh]\nresolution = 0.3\n[tolerances]\nsolver = 1e-300\n'
            '[domain]\nkind = "expanding-tube"\n[run]\ncommand = "solve"\n')
    assert run(tmp_path, toml, "--out", str(out)) == 3
    rec = error_record(out)
    assert rec["error"] == "SolverError" and rec["stage"] == "solve"
    assert sorted(p.name for p in out.iterdir()) == ["error.json"]


def test_unbraided_field_exits_4(tmp_path):
    out = tmp_path / "v"
    toml = WIND + '[field]\nkind = "affine"\nmatrix = [[0, 0, 0], [0, 0, 0], [0, 0, 0]]\n' \
                  'offset = [0, 0, -1]\n'
    assert run(tmp_path, toml, "--out", str(out)) == 4
    assert error_record(out)["stage"] == "field"


def test_divergent_u_on_the_expanding_tube_exits_4(tmp_path):
    out = tmp_path / "d"
    toml = ('[domain]\nkind = "expanding-tube"\n[mesh]\nresolution = 0.3\n'
            '[field]\nkind = "harmonic-u"\n[grid]\nn_r = 3\n[run]\ncommand = "helicity"\n')
    assert run(tmp_path, toml, "--out", str(out)) == 4
    rec = error_record(out)
    assert rec["stage"] == "solenoidal-check" and "divergence FAIL" in rec["message"]


def test_partial_artifacts_are_removed(tmp_path, monkeypatch):
    def broken(path, mesh):
        raise OSError("disk full")

    monkeypatch.setattr(cli, "write_vtk_boundary", broken)
    out = tmp_path / "p"
    toml = '[mesh]\nresolution = 0.3\n[run]\ncommand = "solve"\n'
    assert run(tmp_path, toml, "--out", str(out)) == 3
    assert sorted(p.name for p in out.iterdir()) == ["error.json"]
    assert error_record(out)["stage"] == "write"


def test_success_clears_a_stale_error_record(tmp_path):
    out = tmp_path / "c"
    out.mkdir()
    (out / "error.json").write_text("{}")
    assert run(tmp_path, WIND, "--out", str(out)) == 0
    assert not (out / "error.json").exists()


def test_thread_resolution_order(monkeypatch):
    monkeypatch.delenv("WINDTUBE_THREADS", raising=False)
    assert cli.resolve_threads(None, 2) == 2
    assert cli.resolve_threads(None, 0) == (os.cpu_count() or 1)
    monkeypatch.setenv("WINDTUBE_THREADS", "5")
    assert cli.resolve_threads(None, 2) == 5
    assert cli.resolve_threads(3, 2) == 3
    monkeypatch.setenv("WINDTUBE_THREADS", "many")
    with pytest.raises(cli.ConfigError):
        cli.resolve_threads(None, 2)
    with pytest.raises(cli.ConfigError):
        cli.resolve_threads(-1, 2)


def test_environment_thread_count_reaches_the_sidecar(tmp_path, monkeypatch):
    monkeypatch.setenv("WINDTUBE_THREADS", "2")
    out = tmp_path / "t"
    assert run(tmp_path, WIND, "--out", str(out)) == 0
    assert json.loads((out / "wind.json").read_text())["config"]["run"]["threads"] == 2


def test_verify_passes(tmp_path, capsys):
    out = tmp_path / "verify"
    assert cli.main(["--command", "verify", "--out", str(out)]) == 0
    rows = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert len(rows) == 4 and all(r.startswith("PASS") for r in rows)
    checks = json.loads((out / "verify.json").read_text())["results"]["checks"]
    assert all(c["passed"] for c in checks)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "windtube", "--config", str(tmp_path / "x.toml"),
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["exit_code"] == 2
