"""Pure-Python implementations of the batch kernels.

Same signatures as the compiled ``_core`` module.  The stress update loops
over points calling the scalar routines of :mod:`geosmooth.constitutive`.
"""
import numpy as np

from . import constitutive as cm
from .errors import ConstitutiveError, TangentError

_INPLANE = [0, 1, 3]


def _materials(table):
    out = []
    for E, nu, c, phi, psi, H, plastic in np.asarray(table, dtype=float):
        el = cm.ElasticParams(E, nu)
        mc = cm.MohrCoulombParams(c, phi, psi, H) if plastic else None
        out.append((el, mc, cm.elastic_matrix(el)))
    return out


def material_update(stress_old, deps, kappa_old, mat_index, table):
    n = len(stress_old)
    mats = _materials(table)
    stress = np.empty((n, 4))
    deps_p = np.zeros((n, 4))
    kappa = np.array(kappa_old, dtype=float)
    region = np.zeros(n, dtype=np.int64)
    dlam = np.zeros(n)
    tangents = np.empty((n, 3, 3))
    for p in range(n):
        el, mc, D4 = mats[mat_index[p]]
        trial = stress_old[p] + D4 @ deps[p]
        D = D4
        stress[p] = trial
        if mc is not None:
            F = cm.yield_value(trial, mc, kappa_old[p])
            if F > cm.yield_tolerance(F, mc, kappa_old[p]):
                sig_tr, slots, c, s = cm.principal(trial)
                try:
                    sig, dl, reg = cm.return_principal(sig_tr, mc, el, kappa_old[p])
                except ConstitutiveError:
                    region[p] = -1
                    continue
                ep = np.linalg.solve(D4[:3, :3], sig_tr - sig)
                stress[p] = cm._to_cartesian(cm._unsort(sig, slots), c, s, 1.0)
                deps_p[p] = cm._to_cartesian(cm._unsort(ep, slots), c, s, 2.0)
                dlam[p] = dl
                kappa[p] = kappa_old[p] + mc.H * dl
                region[p] = reg
                try:
                    D = cm.tangent_for_region(reg, sig, slots, c, s, mc, el)
                except TangentError:
                    region[p] = -2
                    continue
        tangents[p] = D[np.ix_(_INPLANE, _INPLANE)]
    return stress, deps_p, kappa, region, dlam, tangents


def cell_stiffness(B, D, w):
    DB = np.matmul(D, B) * w[..., None, None]
    return np.matmul(np.swapaxes(B, -1, -2), DB).sum(axis=1)
