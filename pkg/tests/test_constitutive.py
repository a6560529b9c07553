import math

import numpy as np
import pytest

from geosmooth import constitutive as cm
from geosmooth.drivers import ultimate_biaxial_stress
from geosmooth.errors import ConfigurationError
from geosmooth.verify import random_plastic_trials, return_map_properties

D30 = math.radians(30.0)


def test_plane_strain_moduli():
    D, row = cm.elastic_tangent(cm.ElasticParams(10000.0, 0.25))
    assert D[0, 0] == pytest.approx(12000.0)
    assert D[0, 1] == pytest.approx(4000.0)
    assert D[2, 2] == pytest.approx(4000.0)
    np.testing.assert_array_equal(D, D.T)
    D0, row0 = cm.elastic_tangent(cm.ElasticParams(5.0, 0.0))
    np.testing.assert_allclose(D0, np.diag([5.0, 5.0, 2.5]))
    np.testing.assert_allclose(row0, 0.0)


def test_out_of_plane_stress_from_elastic_strain():
    el = cm.ElasticParams(2e7, 0.3)
    D4 = cm.elastic_matrix(el)
    sig = D4 @ np.array([1e-3, -4e-4, 0.0, 2e-4])
    assert sig[2] == pytest.approx(el.nu * (sig[0] + sig[1]))


@pytest.mark.parametrize("nu", [0.5, 0.6, -1.0])
def test_bad_poisson_ratio(nu):
    with pytest.raises(ConfigurationError):
        cm.ElasticParams(1.0, nu)


def test_bad_strength_parameters():
    with pytest.raises(ConfigurationError):
        cm.MohrCoulombParams(-1.0, 0.1)
    with pytest.raises(ConfigurationError):
        cm.MohrCoulombParams(1.0, 0.1, 0.2)
    with pytest.raises(ConfigurationError):
        cm.MohrCoulombParams(1.0, math.pi / 2)


def test_invariants():
    inv = cm.invariants([-5.0, -5.0, -5.0, 0.0])
    assert (inv.p, inv.q, inv.theta0) == (pytest.approx(-5.0), pytest.approx(0.0), 0.0)
    assert cm.invariants([3.0, 0.0, 0.0, 0.0]).q == pytest.approx(3.0)
    inv = cm.invariants([0.0, 0.0, 0.0, 2.0])
    assert inv.p == pytest.approx(0.0, abs=1e-15)
    assert inv.q == pytest.approx(2.0 * math.sqrt(3.0))
    rng = np.random.default_rng(0)
    for _ in range(100):
        th = cm.invariants(rng.normal(size=4)).theta0
        assert -math.pi / 6 - 1e-12 <= th <= math.pi / 6 + 1e-12


def test_yield_value_examples():
    mc = cm.MohrCoulombParams(1e4, D30)
    assert cm.yield_value(np.zeros(4), mc) == pytest.approx(-2e4 * math.cos(D30))
    on = np.array([-1e5, -334.64e3, -2e5, 0.0])
    assert abs(cm.yield_value(on, mc)) < 1.0
    s = np.array([-3e4, 1e4, -1e4, 5e3])
    mc2 = cm.MohrCoulombParams(3e4, D30)
    assert cm.yield_value(3 * s, mc2) == pytest.approx(3 * cm.yield_value(s, cm.MohrCoulombParams(1e4, D30)))


def test_invariant_form_is_a_scaled_principal_form():
    rng = np.random.default_rng(1)
    for _ in range(500):
        mc = cm.MohrCoulombParams(10 ** rng.uniform(2, 5), math.radians(rng.uniform(0, 45)))
        s = rng.normal(size=4) * 10 ** rng.uniform(2, 5)
        F = cm.yield_value(s, mc)
        Fi = cm.yield_value_invariant(s, mc)
        assert Fi == pytest.approx(1.5 * F, rel=1e-9, abs=1e-9 * max(abs(s).max(), mc.c))


def test_elastic_trial_is_returned_unchanged():
    el, mc = cm.ElasticParams(1e7, 0.3), cm.MohrCoulombParams(1e4, D30)
    st = cm.MaterialState()
    trial = np.array([-1e3, -2e3, -1e3, 100.0])
    new, dl = cm.return_map(trial, st, el, mc)
    assert dl == 0.0 and not new.yielded
    np.testing.assert_array_equal(new.stress, trial)


def test_return_map_property_suite():
    worst_f, min_dl, worst_sym = return_map_properties(300, seed=9)
    assert worst_f <= 1e-8 and min_dl > 0 and worst_sym <= 1e-10


def test_returned_stress_scaled_residual():
    for trial, el, mc, kappa in random_plastic_trials(300, seed=4):
        new, dl = cm.return_map(trial, cm.MaterialState(kappa=kappa), el, mc)
        p = cm.invariants(new.stress).p
        scale = abs(p) * math.sin(mc.phi) + 2 * (mc.c + new.kappa) * math.cos(mc.phi) + 1.0
        assert abs(cm.yield_value(new.stress, mc, new.kappa)) <= 1e-8 * scale
        assert dl > 0


def test_principal_directions_preserved():
    el, mc = cm.ElasticParams(1e7, 0.3), cm.MohrCoulombParams(1e4, D30)
    trial = np.array([-1e5, -4e5, -2e5, 8e4])
    new, _ = cm.return_map(trial, cm.MaterialState(), el, mc)
    a_tr = 0.5 * math.atan2(2 * trial[3], trial[0] - trial[1])
    a_new = 0.5 * math.atan2(2 * new.stress[3], new.stress[0] - new.stress[1])
    assert a_new == pytest.approx(a_tr, abs=1e-12)


def test_hardening_increments_kappa():
    el = cm.ElasticParams(1e7, 0.3)
    mc = cm.MohrCoulombParams(1e4, D30, H=2e5)
    new, dl = cm.return_map(np.array([-1e5, -6e5, -2e5, 0.0]), cm.MaterialState(), el, mc)
    assert new.kappa == pytest.approx(mc.H * dl)
    assert abs(cm.yield_value(new.stress, mc, new.kappa)) <= 1e-6


def test_apex_return():
    el, mc = cm.ElasticParams(1e7, 0.3), cm.MohrCoulombParams(1e4, D30)
    new, dl = cm.return_map(np.array([1e5, 1e5, 1e5, 0.0]), cm.MaterialState(), el, mc)
    apex = mc.c / math.tan(mc.phi)
    np.testing.assert_allclose(new.stress[:3], apex, rtol=1e-12)
    assert dl > 0


def test_associated_tangent_has_no_stiffness_along_flow():
    el, mc = cm.ElasticParams(1e7, 0.3), cm.MohrCoulombParams(1e4, D30)
    new, _ = cm.return_map(np.array([-1e5, -6e5, -2.5e5, 3e4]), cm.MaterialState(), el, mc)
    D = cm.elastoplastic_tangent(new.stress, mc, el, True)
    np.testing.assert_allclose(D, D.T, atol=1e-10 * np.abs(D).max())
    # the full 4x4 tangent, including the out-of-plane row, annihilates the flow
    sig, slots, c, s = cm.principal(new.stress)
    D4 = cm.tangent_for_region(cm.MAIN, sig, slots, c, s, mc, el)
    a = np.zeros(4)
    for k in range(4):
        e = np.zeros(4)
        e[k] = 1.0
        a[k] = (cm.yield_value(new.stress + e, mc) - cm.yield_value(new.stress - e, mc)) / 2.0
    # the derivative with respect to tau_xy already pairs with engineering shear strain
    a_eps = a
    scale = np.abs(D4).max() * np.abs(a).max()
    assert abs(a @ D4 @ a_eps) <= 1e-8 * scale * np.abs(a).max()
    assert np.abs(D4 @ a_eps).max() <= 1e-8 * scale


def test_unyielded_tangent_is_elastic():
    el, mc = cm.ElasticParams(1e7, 0.3), cm.MohrCoulombParams(1e4, D30)
    np.testing.assert_array_equal(cm.elastoplastic_tangent(np.zeros(4), mc, el, False),
                                  cm.elastic_tangent(el)[0])


def test_non_associated_tangent_is_unsymmetric():
    el = cm.ElasticParams(1e7, 0.3)
    mc = cm.MohrCoulombParams(1e4, D30, math.radians(5.0))
    new, _ = cm.return_map(np.array([-1e5, -6e5, -2.5e5, 3e4]), cm.MaterialState(), el, mc)
    D = cm.elastoplastic_tangent(new.stress, mc, el, True)
    assert np.abs(D - D.T).max() > 1e-6 * np.abs(D).max()


def _update(state, deps3, el, mc):
    deps = np.array([deps3[0], deps3[1], 0.0, deps3[2]])
    trial = state.stress + cm.elastic_matrix(el) @ deps
    return cm.return_map(trial, state, el, mc)[0]


def test_tangent_secant_error_decays_quadratically():
    el, mc = cm.ElasticParams(1e7, 0.3), cm.MohrCoulombParams(1e4, D30)
    state, _ = cm.return_map(np.array([-1e5, -5e5, -2.4e5, 4e4]), cm.MaterialState(), el, mc)
    D = cm.elastoplastic_tangent(state.stress, mc, el, True)
    direction = np.array([2e-4, -1e-3, 3e-4])
    errs = []
    for k in range(4):
        de = direction * 0.5 ** k
        new = _update(state, de, el, mc)
        dsig = new.stress[[0, 1, 3]] - state.stress[[0, 1, 3]]
        errs.append(np.linalg.norm(dsig - D @ de))
    ratios = [errs[k] / errs[k + 1] for k in range(3)]
    assert all(r > 3.5 for r in ratios), ratios


def test_single_point_biaxial_limit():
    rng = np.random.default_rng(12)
    el = cm.ElasticParams(1e7, 0.3)
    for _ in range(5):
        c = rng.uniform(5e3, 5e4)
        phi = math.radians(rng.uniform(10, 40))
        s3 = rng.uniform(2e4, 2e5)
        mc = cm.MohrCoulombParams(c, phi)
        state = cm.MaterialState(stress=np.array([-s3, -s3, -s3, 0.0]))
        for _ in range(400):
            dyy = -1e-4
            dxx = 0.0
            # hold the lateral stress by a local secant iteration on eps_xx
            for _ in range(30):
                new = _update(state, (dxx, dyy, 0.0), el, mc)
                r = new.stress[0] + s3
                if abs(r) < 1e-9 * s3:
                    break
                D = cm.elastoplastic_tangent(new.stress, mc, el, new.yielded)
                k = D[0, 0] if abs(D[0, 0]) > 1e-3 * el.E else cm.elastic_tangent(el)[0][0, 0]
                dxx -= r / k
            state = new
        expected = ultimate_biaxial_stress(c, phi, s3)
        assert -state.stress[1] == pytest.approx(expected, rel=1e-3)


def test_elastic_cycles_leave_plastic_state_untouched():
    el, mc = cm.ElasticParams(1e7, 0.3), cm.MohrCoulombParams(1e5, D30)
    state = cm.MaterialState(stress=np.array([-5e4, -5e4, -5e4, 0.0]))
    ep0, k0 = state.plastic_strain.copy(), state.kappa
    rng = np.random.default_rng(3)
    for _ in range(20):
        de = rng.normal(size=3) * 1e-5
        state = _update(state, de, el, mc)
        state = _update(state, -de, el, mc)
        assert not state.yielded
    np.testing.assert_array_equal(state.plastic_strain, ep0)
    assert state.kappa == k0
