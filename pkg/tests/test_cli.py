import json
import subprocess
import sys

import pytest

from geosmooth import cli
from geosmooth.caseio import read_vtk
from geosmooth.mesh import read_mesh

CASE = """
title = "loaded block"

[mesh]
generator = "rectangle"
args = {{ width = 1.0, height = 1.0, nx = 2, ny = 2 }}

[[material]]
id = 0
E = 1.0e6
nu = 0.3
{plastic}

[[boundary]]
set = "bottom"
x = 0.0
y = 0.0

[[step]]
name = "load"
increments = 2
pressure = [{{ set = "top", value = {q} }}]

[monitor]
set = "top"
component = "y"

[output]
formats = ["csv", "vtk"]
"""


def case_file(tmp_path, q=1.0e3, plastic=""):
    path = tmp_path / "case.toml"
    path.write_text(CASE.format(q=q, plastic=plastic))
    return path


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", str(case_file(tmp_path)), "-o", str(out), "-q"])
    assert code == cli.EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] and summary["increments"] == 2
    assert (out / "curve.csv").read_bytes().startswith(b"increment,step,load_factor")
    assert (out / "final_nodes.csv").exists() and (out / "final_cells.csv").exists()
    assert read_vtk(out / "final.vtk")["points"].shape[0] == 9
    log = (out / "convergence.jsonl").read_text().splitlines()
    assert log and all("residual" in json.loads(line) for line in log)


def test_default_output_directory_is_next_to_case(tmp_path):
    assert cli.main(["run", str(case_file(tmp_path)), "-q"]) == cli.EXIT_OK
    assert (tmp_path / "results" / "summary.json").exists()


def test_configuration_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(CASE.format(q=1.0, plastic="").replace('"top"', '"lid"'))
    assert cli.main(["run", str(bad), "-o", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "lid" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "nope.toml")]) == cli.EXIT_CONFIG


def test_non_convergence_exit_code(tmp_path):
    weak = "c = 1.0e3\nphi_deg = 10.0"
    path = case_file(tmp_path, q=1.0e6, plastic=weak)
    out = tmp_path / "o"
    assert cli.main(["run", str(path), "-o", str(out), "-q"]) == cli.EXIT_NONCONVERGED
    assert json.loads((out / "summary.json").read_text())["converged"] is False


def test_bench_biaxial(tmp_path):
    out = tmp_path / "bx"
    assert cli.main(["bench", "biaxial", "-o", str(out), "-q", "--kernel", "fem"]) == cli.EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["kernel"] == "fem"
    assert summary["relative_error"] < 5e-3


def test_bench_tunnel_writes_stage_fields(tmp_path):
    out = tmp_path / "tu"
    assert cli.main(["bench", "tunnel", "-o", str(out), "-q"]) == cli.EXIT_OK
    assert sorted(p.name for p in out.glob("stage_*_nodes.csv")) == [
        f"stage_{k}_nodes.csv" for k in range(1, 6)]


def test_verify_quick(capsys):
    assert cli.main(["verify", "--quick"]) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_mesh_command(tmp_path, capsys):
    out = tmp_path / "a.mesh"
    assert cli.main(["mesh", "quarter_annulus", "h=0.25", "-o", str(out)]) == cli.EXIT_OK
    mesh = read_mesh(out)
    assert mesh.n_elements > 0 and "inner" in mesh.node_sets
    assert cli.main(["mesh", "rectangle", "colour=3", "-o", str(out)]) == cli.EXIT_CONFIG
    assert cli.main(["mesh", "rectangle", "nx", "-o", str(out)]) == cli.EXIT_CONFIG


def test_unknown_subcommand_is_rejected():
    with pytest.raises(SystemExit):
        cli.main(["dance"])


def test_module_entry_point(tmp_path):
    out = tmp_path / "m.mesh"
    proc = subprocess.run([sys.executable, "-m", "geosmooth.cli", "mesh", "rectangle", "nx=3", "-o", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert read_mesh(out).n_elements == 12
