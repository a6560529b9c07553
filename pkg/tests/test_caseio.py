import csv
import math

import numpy as np
import pytest

from geosmooth import caseio, drivers
from geosmooth import solver as sv
from geosmooth.caseio import (case_from_dict, export_fields, parse_case, read_vtk, shipped_case,
                              write_case, write_curve)
from geosmooth.errors import ConfigurationError

MINIMAL = """
[mesh]
generator = "rectangle"
args = { width = 1.0, height = 1.0, nx = 2, ny = 2 }

[[material]]
id = 0
E = 1.0e6
nu = 0.3

[[boundary]]
set = "bottom"
x = 0.0
y = 0.0

[[step]]
name = "load"
pressure = [{ set = "top", value = 1.0e3 }]
"""

BENCHMARKS = ("cylinder", "biaxial", "footing", "tunnel", "slope")


def write(tmp_path, text, name="case.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_defaults_are_filled(tmp_path):
    case = parse_case(write(tmp_path, MINIMAL))
    assert case.driver == "generic"
    assert case.solver.n_sc == 4 and case.solver.kernel == "csfem"
    assert case.solver.tol_r == 1e-6 and case.solver.max_iter == 50
    assert case.steps[0].increments == 1
    assert case.output.formats == ("csv",)
    assert case.materials[0].c is None


def test_unknown_set_is_named(tmp_path):
    case = parse_case(write(tmp_path, MINIMAL.replace('"top"', '"lid"')))
    with pytest.raises(ConfigurationError, match="'lid'"):
        case.build_model()


def test_bad_documents(tmp_path):
    with pytest.raises(ConfigurationError, match="syntax"):
        parse_case(write(tmp_path, "[mesh\n"))
    with pytest.raises(ConfigurationError, match="material"):
        parse_case(write(tmp_path, MINIMAL.replace("[[material]]\nid = 0", "[[material]]\nid = 3")))
    with pytest.raises(ConfigurationError, match="driver"):
        parse_case(write(tmp_path, 'driver = "dam"\n' + MINIMAL))
    with pytest.raises(ConfigurationError):
        parse_case(write(tmp_path, MINIMAL + "\n[solver]\nn_sc = 3\n"))
    with pytest.raises(ConfigurationError):
        parse_case(write(tmp_path, MINIMAL + "\n[solver]\nflavour = 1\n"))
    with pytest.raises(ConfigurationError):
        parse_case(tmp_path / "missing.toml")


def test_shipped_footing_parameters():
    case = shipped_case("footing")
    (m,) = case.materials
    assert (m.E, m.nu, m.c, m.phi_deg, m.psi_deg) == (1.0e7, 0.3, 1.0e3, 5.0, 5.0)
    mat = m.to_material()
    assert mat.mc.phi == pytest.approx(math.radians(5.0))
    assert case.driver == "footing" and case.monitor.set == "centre"


def test_unknown_shipped_case():
    with pytest.raises(ConfigurationError, match="known"):
        shipped_case("dam")


@pytest.mark.parametrize("name", BENCHMARKS)
def test_round_trip_of_shipped_cases(tmp_path, name):
    case = shipped_case(name)
    path = tmp_path / f"{name}.toml"
    write_case(case, path)
    back = parse_case(path)
    assert back == case
    write_case(back, tmp_path / "again.toml")
    assert (tmp_path / "again.toml").read_text() == path.read_text()


def test_mesh_file_reference(tmp_path):
    from geosmooth.mesh import write_mesh
    write_mesh(caseio.GENERATORS["rectangle"](1.0, 1.0, 2, 2), tmp_path / "m.mesh")
    text = MINIMAL.replace('generator = "rectangle"\nargs = { width = 1.0, height = 1.0, nx = 2, ny = 2 }',
                           'file = "m.mesh"')
    case = parse_case(write(tmp_path, text))
    assert case.build_mesh().n_elements == 4


def elastic_model():
    case = case_from_dict({
        "mesh": {"generator": "rectangle", "args": {"nx": 2, "ny": 2}},
        "material": [{"id": 0, "E": 1e6, "nu": 0.3}],
        "boundary": [{"set": "bottom", "x": 0.0, "y": 0.0}],
    })
    model = case.build_model()
    return model, sv.initial_state(model)


def test_zero_displacement_export(tmp_path):
    model, state = elastic_model()
    (path,) = export_fields(model, state, tmp_path / "zero.vtk")
    data = read_vtk(path)
    u = data["point_data"]["displacement"]
    assert u.shape == (model.mesh.n_nodes, 3)
    np.testing.assert_array_equal(u[:, :2], 0.0)
    np.testing.assert_array_equal(data["cell_types"], 9)
    np.testing.assert_array_equal(data["cells"], model.mesh.connectivity)
    nodes, cells = export_fields(model, state, tmp_path / "zero.csv", "csv")
    with open(nodes, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == model.mesh.n_nodes
    assert all((float(r["ux"]), float(r["uy"])) == (0.0, 0.0) for r in rows)


def test_unknown_export_format(tmp_path):
    model, state = elastic_model()
    with pytest.raises(ConfigurationError):
        export_fields(model, state, tmp_path / "x.bin", "binary")


def test_biaxial_export_is_reproducible(tmp_path):
    r = drivers.run_biaxial()
    model, st = r.analysis.model, r.analysis.final_state
    (a,) = export_fields(model, st, tmp_path / "a.vtk")
    data = read_vtk(a)
    syy = data["cell_data"]["stress_yy"]
    np.testing.assert_allclose(syy, -334.64e3, rtol=5e-3)
    assert np.all(data["cell_data"]["yielded"] == 1)
    np.testing.assert_allclose(data["point_data"]["displacement"][:, :2], st.d.reshape(-1, 2), rtol=0)
    (b,) = export_fields(model, st, tmp_path / "b.vtk")
    assert a.read_bytes() == b.read_bytes()


def test_vtk_reader_rejects_truncation(tmp_path):
    model, state = elastic_model()
    (path,) = export_fields(model, state, tmp_path / "t.vtk")
    lines = path.read_text().splitlines()
    (tmp_path / "cut.vtk").write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(ConfigurationError):
        read_vtk(tmp_path / "cut.vtk")


def test_curve_is_crlf_csv(tmp_path):
    path = write_curve(tmp_path / "c.csv", ["a", "b"], [(1, 0.1), (2, "x,y")])
    raw = path.read_bytes()
    assert raw.startswith(b"a,b\r\n")
    assert b'"x,y"' in raw
    with open(path, newline="") as fh:
        assert list(csv.reader(fh))[2] == ["2", "x,y"]
