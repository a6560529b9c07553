"""Plane-strain elasticity and Mohr-Coulomb elastoplasticity.

Stress and strain are carried as 4-vectors ``(xx, yy, zz, xy)``, tension
positive, with engineering shear strain.  The out-of-plane component takes
part in the principal-stress return mapping; only the in-plane 3x3 block of
a tangent is used for stiffness assembly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, ConstitutiveError, TangentError

# region codes returned by the stress update
ELASTIC, MAIN, EDGE_RIGHT, EDGE_LEFT, APEX = 0, 1, 2, 3, 4

# residual tangent stiffness fraction at the apex (true tangent is zero)
APEX_STIFFNESS = 1e-6

MAX_RETURN_ITER = 50
_INPLANE = [0, 1, 3]


@dataclass(frozen=True)
class ElasticParams:
    E: float
    nu: float

    def __post_init__(self):
        if not self.E > 0:
            raise ConfigurationError(f"Young's modulus must be positive, got {self.E}")
        if self.nu == 0.5:
            raise ConfigurationError("nu = 0.5 makes the plane-strain tangent singular")
        if not -1.0 < self.nu < 0.5:
            raise ConfigurationError(f"Poisson's ratio must lie in (-1, 0.5), got {self.nu}")

    @property
    def shear_modulus(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lame(self) -> float:
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    @property
    def bulk_modulus(self) -> float:
        return self.E / (3.0 * (1.0 - 2.0 * self.nu))


@dataclass(frozen=True)
class MohrCoulombParams:
    """Strength parameters; angles in radians.

    ``H`` is the linear hardening modulus of cohesion: the hardening
    variable grows as ``dkappa = H * dlambda`` and the current cohesion is
    ``c + kappa``.
    """

    c: float
    phi: float
    psi: float | None = None
    H: float = 0.0

    def __post_init__(self):
        if self.psi is None:
            object.__setattr__(self, "psi", self.phi)
        if self.c < 0:
            raise ConfigurationError(f"cohesion must be non-negative, got {self.c}")
        if not 0.0 <= self.phi < math.pi / 2:
            raise ConfigurationError(f"friction angle must lie in [0, 90) deg, got {self.phi}")
        if not 0.0 <= self.psi <= self.phi + 1e-14:
            raise ConfigurationError("dilation angle must satisfy 0 <= psi <= phi")
        if self.H < 0:
            raise ConfigurationError("hardening modulus must be non-negative")

    @property
    def associated(self) -> bool:
        return self.psi == self.phi


@dataclass(frozen=True)
class MaterialState:
    stress: np.ndarray = field(default_factory=lambda: np.zeros(4))
    plastic_strain: np.ndarray = field(default_factory=lambda: np.zeros(4))
    kappa: float = 0.0
    yielded: bool = False


@dataclass(frozen=True)
class StressInvariants:
    p: float
    q: float
    theta0: float


def elastic_matrix(params: ElasticParams) -> np.ndarray:
    """Full 4x4 plane-strain elasticity matrix acting on (xx, yy, zz, xy)."""
    lam, G = params.lame, params.shear_modulus
    D = np.full((3, 3), lam) + 2.0 * G * np.eye(3)
    out = np.zeros((4, 4))
    out[:3, :3] = D
    out[3, 3] = G
    return out


def elastic_tangent(params: ElasticParams) -> tuple[np.ndarray, np.ndarray]:
    """Return the in-plane 3x3 tangent and the out-of-plane coupling row.

    The coupling row gives ``dsigma_zz = row @ (deps_xx, deps_yy, dgamma_xy)``.
    """
    D4 = elastic_matrix(params)
    return D4[np.ix_(_INPLANE, _INPLANE)].copy(), D4[2, _INPLANE].copy()


def principal(stress) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Principal decomposition of a plane-strain stress.

    Returns ``(values, slots, c, s)``: ``values`` sorted descending;
    ``slots[i]`` tells where sorted value ``i`` lives (0 = major in-plane,
    1 = minor in-plane, 2 = out-of-plane); ``(c, s)`` is the unit vector of
    the major in-plane direction.
    """
    sxx, syy, szz, txy = stress
    centre = 0.5 * (sxx + syy)
    half = 0.5 * (sxx - syy)
    radius = math.hypot(half, txy)
    if radius > 0.0:
        angle = 0.5 * math.atan2(txy, half)
        c, s = math.cos(angle), math.sin(angle)
    else:
        c, s = 1.0, 0.0
    raw = (centre + radius, centre - radius, szz)
    slots = sorted(range(3), key=lambda k: -raw[k])
    return np.array([raw[k] for k in slots]), np.array(slots), c, s


def _to_cartesian(vals_by_slot, c, s, shear_factor):
    va, vb, vz = vals_by_slot
    return np.array([
        va * c * c + vb * s * s,
        va * s * s + vb * c * c,
        vz,
        shear_factor * (va - vb) * s * c,
    ])


def _unsort(sorted_vals, slots):
    out = np.empty(3)
    out[slots] = sorted_vals
    return out


def invariants(stress) -> StressInvariants:
    """Mean stress, equivalent deviatoric stress and Lode angle.

    The Lode angle satisfies ``sin(3 theta0) = -1.5 sqrt(3) J3 / J2**1.5``
    so that ``sigma_2 = p + 2/sqrt(3) sqrt(J2) sin(theta0)``.
    """
    sig, _, _, _ = principal(stress)
    p = float(sig.sum() / 3.0)
    dev = sig - p
    J2 = 0.5 * float(dev @ dev)
    q = math.sqrt(3.0 * J2)
    if J2 <= 1e-30 * max(1.0, p * p):
        return StressInvariants(p, q, 0.0)
    J3 = float(dev[0] * dev[1] * dev[2])
    arg = -1.5 * math.sqrt(3.0) * J3 / J2 ** 1.5
    theta = math.asin(min(1.0, max(-1.0, arg))) / 3.0
    return StressInvariants(p, q, theta)


def yield_value(stress, params: MohrCoulombParams, kappa: float = 0.0) -> float:
    """Mohr-Coulomb yield function in principal-stress form (Pa)."""
    sig, _, _, _ = principal(stress)
    sphi, cphi = math.sin(params.phi), math.cos(params.phi)
    return float((sig[0] - sig[2]) + (sig[0] + sig[2]) * sphi - 2.0 * (params.c + kappa) * cphi)


def yield_value_invariant(stress, params: MohrCoulombParams, kappa: float = 0.0) -> float:
    """Invariant (p, q, Lode angle) form of the same surface.

    Written with compression-positive mean stress, which is why the
    pressure term reads ``-3 p sin(phi)``; equals 1.5 times
    :func:`yield_value` everywhere.
    """
    inv = invariants(stress)
    sphi, cphi = math.sin(params.phi), math.cos(params.phi)
    p_comp = -inv.p
    return ((math.sqrt(3.0) * math.cos(inv.theta0) - math.sin(inv.theta0) * sphi) * inv.q
            - 3.0 * p_comp * sphi - 3.0 * (params.c + kappa) * cphi)


def yield_tolerance(F_trial: float, mc: MohrCoulombParams, kappa: float = 0.0) -> float:
    ref = max(abs(F_trial), 2.0 * (mc.c + kappa) * math.cos(mc.phi))
    return 1e-8 * ref if ref > 0 else 1e-12


class _Planes:
    """Gradients of the three active Mohr-Coulomb planes in sorted principal space."""

    def __init__(self, mc: MohrCoulombParams):
        sphi, spsi = math.sin(mc.phi), math.sin(mc.psi)
        self.sphi, self.cphi = sphi, math.cos(mc.phi)
        self.a = {
            "A": np.array([1 + sphi, 0.0, -(1 - sphi)]),
            "B": np.array([0.0, 1 + sphi, -(1 - sphi)]),
            "C": np.array([1 + sphi, -(1 - sphi), 0.0]),
        }
        self.b = {
            "A": np.array([1 + spsi, 0.0, -(1 - spsi)]),
            "B": np.array([0.0, 1 + spsi, -(1 - spsi)]),
            "C": np.array([1 + spsi, -(1 - spsi), 0.0]),
        }

    def F(self, key, sig, coh):
        a = self.a[key]
        # plane value: (major - minor) + (major + minor) sin(phi) - 2 c cos(phi)
        return float(a @ sig) - 2.0 * coh * self.cphi


def _solve_planes(keys, sig_tr, coh0, Dp, planes, H):
    """Newton solve of the active-plane consistency equations."""
    n = len(keys)
    dl = np.zeros(n)
    cphi = planes.cphi
    flows = [Dp @ planes.b[k] for k in keys]
    J = np.array([[planes.a[ki] @ flows[j] + 2.0 * cphi * H for j in range(n)] for ki in keys])
    for _ in range(MAX_RETURN_ITER):
        sig = sig_tr - sum(dl[j] * flows[j] for j in range(n))
        coh = coh0 + H * dl.sum()
        r = np.array([planes.F(k, sig, coh) for k in keys])
        scale = max(1.0, abs(coh0), float(np.abs(sig_tr).max()))
        if np.abs(r).max() <= 1e-13 * scale:
            return dl, sig
        dl = dl + np.linalg.solve(J, r)
    raise ConstitutiveError("Mohr-Coulomb return did not converge", trial=sig_tr)


def return_principal(sig_tr, mc: MohrCoulombParams, elastic: ElasticParams, kappa: float = 0.0):
    """Return sorted principal trial stresses to the yield surface.

    Returns ``(sig, dlam, region)`` with ``dlam`` the total plastic
    multiplier.  Assumes the trial state is outside the surface.
    """
    lam, G, K = elastic.lame, elastic.shear_modulus, elastic.bulk_modulus
    Dp = np.full((3, 3), lam) + 2.0 * G * np.eye(3)
    planes = _Planes(mc)
    H = mc.H
    coh0 = mc.c + kappa
    tol = 1e-12 * max(1.0, float(np.abs(sig_tr).max()), coh0)

    dl, sig = _solve_planes(["A"], sig_tr, coh0, Dp, planes, H)
    if sig[0] >= sig[1] - tol and sig[1] >= sig[2] - tol:
        return sig, float(dl[0]), MAIN

    # the violated ordering of the single-plane return selects the corner
    spsi = math.sin(mc.psi)
    right = sig[1] - sig[0] > sig[2] - sig[1]
    key, region = ("B", EDGE_RIGHT) if right else ("C", EDGE_LEFT)
    dl, sig = _solve_planes(["A", key], sig_tr, coh0, Dp, planes, H)
    apex_allowed = mc.phi > 0
    if (dl.min() >= 0 and sig[0] >= sig[1] - tol and sig[1] >= sig[2] - tol
            and sig[0] >= sig[2] - tol):
        p = sig.sum() / 3.0
        coh = coh0 + H * dl.sum()
        if not apex_allowed or p <= coh * planes.cphi / planes.sphi + tol:
            return sig, float(dl.sum()), region

    if not apex_allowed:
        raise ConstitutiveError("no valid Tresca return region", trial=sig_tr)
    cot = planes.cphi / planes.sphi
    p_tr = float(sig_tr.sum() / 3.0)
    denom = 2.0 * K * spsi + H * cot
    if denom > 0:
        dlam = (p_tr - coh0 * cot) / denom
        p = (coh0 + H * dlam) * cot
    else:
        p = coh0 * cot
        dlam = float(np.linalg.norm(np.linalg.solve(Dp, sig_tr - p)))
    return np.full(3, p), float(dlam), APEX


def return_map(trial_stress, state: MaterialState, elastic: ElasticParams, mc: MohrCoulombParams):
    """Elastic-predictor / plastic-corrector stress update.

    ``trial_stress`` is the old stress plus the elastic response to the
    strain increment.  Returns the new state and the plastic multiplier.
    """
    trial = np.asarray(trial_stress, dtype=float)
    F_tr = yield_value(trial, mc, state.kappa)
    if F_tr <= yield_tolerance(F_tr, mc, state.kappa):
        return replace(state, stress=trial.copy(), yielded=False), 0.0
    sig_tr, slots, c, s = principal(trial)
    sig, dlam, _ = return_principal(sig_tr, mc, elastic, state.kappa)

    lam, G = elastic.lame, elastic.shear_modulus
    Dp = np.full((3, 3), lam) + 2.0 * G * np.eye(3)
    deps_sorted = np.linalg.solve(Dp, sig_tr - sig)
    stress = _to_cartesian(_unsort(sig, slots), c, s, 1.0)
    deps_p = _to_cartesian(_unsort(deps_sorted, slots), c, s, 2.0)
    new = MaterialState(
        stress=stress,
        plastic_strain=state.plastic_strain + deps_p,
        kappa=state.kappa + mc.H * dlam,
        yielded=True,
    )
    return new, dlam


def _region_of(sig, mc: MohrCoulombParams, kappa: float) -> int:
    scale = max(1.0, float(np.abs(sig).max()), mc.c + kappa)
    tol = 1e-9 * scale
    gap12, gap23 = sig[0] - sig[1], sig[1] - sig[2]
    if gap12 < tol and gap23 < tol:
        return APEX
    if gap12 < tol:
        return EDGE_RIGHT
    if gap23 < tol:
        return EDGE_LEFT
    return MAIN


def tangent_for_region(region, sig_sorted, slots, c, s, mc: MohrCoulombParams,
                       elastic: ElasticParams) -> np.ndarray:
    """4x4 continuum elastoplastic tangent for a known return region."""
    D4 = elastic_matrix(elastic)
    if region == ELASTIC:
        return D4
    if region == APEX:
        return APEX_STIFFNESS * D4
    planes = _Planes(mc)
    keys = {MAIN: ["A"], EDGE_RIGHT: ["A", "B"], EDGE_LEFT: ["A", "C"]}[region]
    A_mat = np.column_stack([_to_cartesian(_unsort(planes.a[k], slots), c, s, 2.0) for k in keys])
    B_mat = np.column_stack([_to_cartesian(_unsort(planes.b[k], slots), c, s, 2.0) for k in keys])
    hard = 2.0 * planes.cphi * mc.H
    DB = D4 @ B_mat
    M = A_mat.T @ DB + hard
    if len(keys) == 1:
        denom = float(M[0, 0])
        if not denom > 0:
            raise TangentError(f"non-positive plastic denominator {denom}")
        return D4 - np.outer(DB[:, 0], A_mat[:, 0] @ D4) / denom
    if not np.linalg.det(M) > 0:
        raise TangentError("singular corner plastic matrix")
    return D4 - DB @ np.linalg.solve(M, A_mat.T @ D4)


def elastoplastic_tangent(stress, mc: MohrCoulombParams, elastic: ElasticParams,
                          yielded: bool, kappa: float = 0.0) -> np.ndarray:
    """In-plane 3x3 tangent; elastic unless ``yielded``.

    For a yielded stress the active region (plane, corner or apex) is
    detected from coincident principal values.
    """
    if not yielded:
        return elastic_tangent(elastic)[0]
    sig, slots, c, s = principal(np.asarray(stress, dtype=float))
    region = _region_of(sig, mc, kappa)
    D4 = tangent_for_region(region, sig, slots, c, s, mc, elastic)
    return D4[np.ix_(_INPLANE, _INPLANE)]
