import math
import warnings

import numpy as np
import pytest

from geosmooth import meshgen
from geosmooth import solver as sv
from geosmooth.drivers import reaction_balance
from geosmooth.constitutive import ElasticParams, MohrCoulombParams
from geosmooth.errors import ConfigurationError, SolverError
from geosmooth.mesh import Mesh
from geosmooth.verify import distorted_grid, elastic_versus_direct

ELASTIC = sv.Material(ElasticParams(1e4, 0.25))


def unit_square(n=1):
    return meshgen.rectangle(1.0, 1.0, n, n)


def rollers(mesh, left="left", bottom="bottom"):
    cons = {2 * int(n): 0.0 for n in mesh.node_set(left)}
    cons.update({2 * int(n) + 1: 0.0 for n in mesh.node_set(bottom)})
    return cons


@pytest.mark.parametrize("kernel", ["csfem", "fem"])
def test_single_element_has_three_rigid_modes(kernel):
    model = sv.Model(unit_square(), ELASTIC, kernel)
    K = sv.assemble_global(model, model.elastic_tangents()).toarray()
    assert np.linalg.matrix_rank(K, tol=1e-10 * np.abs(K).max()) == 5


def test_shared_edge_accumulates_and_rigid_modes_balance():
    mesh = meshgen.rectangle(2.0, 1.0, 2, 1)
    model = sv.Model(mesh, ELASTIC)
    K = sv.assemble_global(model, model.elastic_tangents()).toarray()
    single = sv.Model(unit_square(), ELASTIC)
    K1 = sv.assemble_global(single, single.elastic_tangents()).toarray()
    shared = mesh.connectivity[0][[1, 2]]
    d = 2 * shared[0]
    # the shared node collects the diagonal of both elements
    assert K[d, d] == pytest.approx(2 * K1[2, 2])
    rot = np.zeros(model.ndof)
    rot[0::2] = -mesh.coords[:, 1]
    rot[1::2] = mesh.coords[:, 0]
    for mode in (np.tile([1.0, 0.0], mesh.n_nodes), np.tile([0.0, 1.0], mesh.n_nodes), rot):
        assert np.abs(K @ mode).max() <= 1e-10 * np.abs(K).max()


def test_deactivated_element_drops_out():
    mesh = meshgen.rectangle(2.0, 1.0, 2, 1)
    model = sv.Model(mesh, ELASTIC)
    K = sv.assemble_global(model, model.elastic_tangents(), np.array([True, False])).toarray()
    dofs = model.edofs[0]
    single = sv.Model(Mesh(mesh.coords, mesh.connectivity[:1]), ELASTIC)
    K1 = sv.assemble_global(single, single.elastic_tangents()).toarray()
    np.testing.assert_allclose(K[np.ix_(dofs, dofs)], K1[np.ix_(dofs, dofs)], rtol=1e-14, atol=1e-12)
    rest = np.setdiff1d(np.arange(model.ndof), dofs)
    assert np.abs(K[rest]).max() == 0.0


def test_pressure_edge_forces():
    mesh = meshgen.rectangle(2.0, 1.0, 1, 1)
    model = sv.Model(mesh, ELASTIC)
    P = sv.external_force(model, sv.LoadSet(pressures=(("top", 300.0),)))
    top = mesh.node_set("top")
    np.testing.assert_allclose(P[2 * top + 1], -300.0)
    np.testing.assert_allclose(P[2 * top], 0.0, atol=1e-12)
    assert np.all(sv.external_force(model, sv.LoadSet(pressures=(("top", 300.0),)), scale=0.0) == 0)


def test_gravity_total_force():
    mesh = distorted_grid(3, 0.2, 1)
    model = sv.Model(mesh, sv.Material(ElasticParams(1e7, 0.3), gamma=20e3))
    P = sv.external_force(model, sv.LoadSet(gravity=1.0))
    assert P[1::2].sum() == pytest.approx(-20e3)
    assert np.abs(P[0::2]).max() == 0.0


def test_edge_load_on_removed_elements_is_rejected():
    mesh = meshgen.rectangle(2.0, 1.0, 2, 1, )
    mesh = Mesh(mesh.coords, mesh.connectivity, {**mesh.node_sets, "rt": mesh.node_set("right")})
    model = sv.Model(mesh, ELASTIC)
    with pytest.raises(ConfigurationError):
        sv.external_force(model, sv.LoadSet(pressures=(("rt", 1.0),)), np.array([True, False]))


@pytest.mark.parametrize("kernel", ["csfem", "fem"])
def test_elastic_newton_matches_direct_solve(kernel):
    assert elastic_versus_direct(kernel) <= 1e-12


def test_elastic_increment_converges_in_one_iteration():
    mesh = distorted_grid(4, 0.2, 2)
    model = sv.Model(mesh, ELASTIC, constraints=rollers(mesh))
    res = sv.run_step(model, sv.initial_state(model), sv.Step("s", 1, pressures=[("top", 10.0)]))
    assert res.converged and res.increments[0].iterations == 1


def test_prescribed_displacement_by_elimination():
    mesh = meshgen.rectangle(1.0, 2.0, 2, 4)
    model = sv.Model(mesh, ELASTIC, constraints=rollers(mesh))
    step = sv.Step("s", 1, displacements=[("top", "y", -0.01)])
    st = sv.run_step(model, sv.initial_state(model), step).state
    np.testing.assert_allclose(st.d[2 * mesh.node_set("top") + 1], -0.01, rtol=0, atol=1e-15)
    # uniaxial plane-strain compression: eps_xx = -nu/(1-nu) eps_yy
    eyy = -0.005
    np.testing.assert_allclose(st.d[2 * mesh.node_set("right")], -0.25 / 0.75 * eyy, rtol=1e-10)


def test_singular_system_names_dofs():
    mesh = unit_square()
    model = sv.Model(mesh, ELASTIC, constraints={0: 0.0, 1: 0.0})
    with pytest.raises(SolverError) as info:
        sv.run_step(model, sv.initial_state(model), sv.Step("s", 1, nodal=[("top", 0.0, -1.0)]))
    assert "zero-energy" in str(info.value)


def test_deactivating_everything_fails():
    mesh = unit_square()
    model = sv.Model(mesh, ELASTIC, constraints=rollers(mesh))
    state, _ = sv.set_element_activity(model, sv.initial_state(model), [0], False)
    with pytest.raises(SolverError):
        sv.newton_increment(model, state, np.zeros(model.ndof))


def test_deactivate_nothing():
    mesh = unit_square()
    model = sv.Model(mesh, ELASTIC)
    st = sv.initial_state(model)
    new, released = sv.set_element_activity(model, st, [], False)
    np.testing.assert_array_equal(new.active, st.active)
    assert not released.any()


def test_non_convergence_is_reported_not_raised():
    mesh = meshgen.rectangle(1.0, 1.0, 2, 2)
    mat = sv.Material(ElasticParams(1e7, 0.3), MohrCoulombParams(1e3, 0.0))
    model = sv.Model(mesh, mat, constraints=rollers(mesh))
    # far beyond the unconfined strength 2c of a Tresca material
    step = sv.Step("s", 1, pressures=[("top", 1e5)])
    res = sv.run_step(model, sv.initial_state(model), step, sv.SolverSettings(max_iter=10, max_bisections=1))
    assert not res.converged
    assert not res.increments[-1].converged


def test_reaction_balance_and_determinism():
    mesh = distorted_grid(5, 0.2, 4)
    mat = sv.Material(ElasticParams(1e7, 0.2), MohrCoulombParams(5e3, math.radians(25)), gamma=18e3)
    cons = rollers(mesh)
    cons.update({2 * int(n): 0.0 for n in mesh.node_set("right")})

    def run():
        model = sv.Model(mesh, mat, constraints=cons)
        step = sv.Step("s", 5, gravity=1.0, pressures=[("top", 1e5)])
        return model, sv.run_step(model, sv.initial_state(model), step)

    model, a = run()
    _, b = run()
    assert a.converged and a.state.yielded.any()
    np.testing.assert_array_equal(a.state.d, b.state.d)
    np.testing.assert_array_equal(a.state.stress, b.state.stress)
    R = sv.reaction_vector(model, a.state)
    dmap = sv.DofMap.build(model, a.state.prescribed, a.state.active)
    P = a.state.P
    scale = max(np.linalg.norm(P), np.linalg.norm(R[dmap.constrained]))
    assert np.linalg.norm(R[dmap.free]) <= 1e-6 * scale
    # support reactions balance the applied loads per component
    for comp in (0, 1):
        reactions = R[dmap.constrained[dmap.constrained % 2 == comp]].sum()
        assert abs(reactions + P[comp::2].sum()) <= 1e-6 * scale
    assert np.all(reaction_balance(model, a.state) <= 1e-6)


def test_geostatic_zero_gravity_and_column():
    mesh = meshgen.rectangle(1.0, 10.0, 1, 10)
    cons = rollers(mesh)
    cons.update({2 * int(n): 0.0 for n in mesh.node_set("right")})
    model = sv.Model(mesh, sv.Material(ElasticParams(1e7, 0.3), gamma=20e3), constraints=cons)
    st = sv.geostatic_init(model, gravity=0.0)
    assert np.abs(st.stress).max() == 0.0
    st = sv.geostatic_init(model)
    assert np.abs(st.d).max() == 0.0
    # the increment from the K0 state is already in equilibrium
    res = sv.newton_increment(model, st, sv.external_force(model, sv.LoadSet(gravity=1.0)))
    assert res.converged and res.residual_history[-1] <= 1e-8
    assert np.abs(res.d).max() <= 1e-12
    # stress at the base integration points extrapolates to -gamma * depth
    y = model.xy[..., 1].reshape(-1)
    np.testing.assert_allclose(st.stress[:, 1], -20e3 * (10.0 - y), rtol=1e-10)
    assert -20e3 * 10.0 == pytest.approx(-200e3)


def test_k0_range_warning():
    mesh = meshgen.rectangle(1.0, 1.0, 1, 1)
    model = sv.Model(mesh, sv.Material(ElasticParams(1e7, 0.3), gamma=1.0), constraints=rollers(mesh))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sv.geostatic_init(model, k0=2.0)
    assert any("K0" in str(w.message) for w in caught)


def test_deactivate_then_reactivate_returns_to_equilibrium():
    mesh = meshgen.rectangle(2.0, 1.0, 4, 2)
    mesh = Mesh(mesh.coords, mesh.connectivity, mesh.node_sets, {"hole": [3]})
    mat = sv.Material(ElasticParams(1e7, 0.3), MohrCoulombParams(1e6, math.radians(30)), gamma=20e3)
    model = sv.Model(mesh, mat, constraints=rollers(mesh))
    st = sv.run_step(model, sv.initial_state(model), sv.Step("g", 1, gravity=1.0)).state
    off = sv.run_step(model, st, sv.Step("off", 1, deactivate=["hole"]))
    assert off.converged
    on = sv.run_step(model, off.state, sv.Step("on", 1, activate=["hole"]))
    assert on.converged
    assert on.increments[-1].residual_history[-1] <= 1e-6
    np.testing.assert_array_equal(on.state.plastic_strain, st.plastic_strain)


def test_unsymmetric_path_for_non_associated_flow():
    mesh = meshgen.rectangle(1.0, 2.0, 2, 4)
    mat = sv.Material(ElasticParams(1e7, 0.3), MohrCoulombParams(1e4, math.radians(30), math.radians(10)))
    model = sv.Model(mesh, mat, constraints=rollers(mesh))
    assert not model.associated
    st = sv.initial_state(model, [-1e5, -1e5, -1e5, 0.0])
    st.P = sv.internal_force(model, st.stress, st.active)
    step = sv.Step("s", 20, pressures=[("right", 1e5)], displacements=[("top", "y", -0.08)])
    res = sv.run_step(model, st, step)
    assert res.converged and res.state.yielded.all()


def test_run_log_records_iterations(tmp_path):
    mesh = unit_square(2)
    model = sv.Model(mesh, ELASTIC, constraints=rollers(mesh))
    log = sv.RunLog()
    sv.run_step(model, sv.initial_state(model), sv.Step("s", 2, pressures=[("top", 1.0)]), runlog=log)
    assert [r["increment"] for r in log.records] == [1, 2]
    log.write(tmp_path / "log.jsonl")
    assert len((tmp_path / "log.jsonl").read_text().splitlines()) == 2


def test_step_needs_an_increment():
    with pytest.raises(ConfigurationError):
        sv.Step("s", 0)
