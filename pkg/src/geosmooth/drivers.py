"""Analytical reference solutions and the benchmark drivers.

Every driver runs a :class:`~geosmooth.caseio.CaseDefinition` through
:func:`run_analysis` and post-processes the increment history.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import solver as sv
from .caseio import CaseDefinition, MaterialSpec, shipped_case
from .constitutive import MohrCoulombParams
from .errors import ConfigurationError, DomainError, SolverError


# ---------------------------------------------------------------- analytical

@dataclass(frozen=True)
class AnalyticalCylinder:
    """Thick-walled cylinder under internal pressure (plane-stress Lamé form)."""

    R_a: float = 1.0
    R_b: float = 2.0
    P: float = 1000.0
    E: float = 10000.0
    nu: float = 0.25

    def __post_init__(self):
        if not 0 < self.R_a < self.R_b:
            raise DomainError(f"need 0 < R_a < R_b, got {self.R_a}, {self.R_b}")
        if self.P < 0:
            raise DomainError("internal pressure must be non-negative")

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        tol = 1e-9 * self.R_b
        if np.any(r < self.R_a - tol) or np.any(r > self.R_b + tol):
            raise DomainError("radius outside the annulus")
        a2, b2 = self.R_a ** 2, self.R_b ** 2
        return a2 * self.P * r / (self.E * (b2 - a2)) * (1 - self.nu + (b2 / r ** 2) * (1 + self.nu))


def cylinder_analytic_displacement(model: AnalyticalCylinder, r, theta):
    ur = model.radial(r)
    return ur * np.cos(theta), ur * np.sin(theta)


def plane_strain_equivalent(E, nu):
    """Constants for which a plane-strain model reproduces the plane-stress response of (E, nu)."""
    nu_s = nu / (1.0 + nu)
    return E * (1.0 - nu_s ** 2), nu_s


def ultimate_biaxial_stress(c, phi, sigma3):
    """Major principal stress at failure for confining stress ``sigma3`` (compression positive)."""
    s = math.sin(phi)
    return sigma3 * (1 + s) / (1 - s) + 2 * c * math.cos(phi) / (1 - s)


def prandtl_capacity(c, phi):
    """Bearing capacity of a weightless strip footing."""
    if c < 0 or not 0 <= phi < 0.5 * math.pi:
        raise DomainError("need c >= 0 and 0 <= phi < pi/2")
    if phi == 0:
        return (math.pi + 2.0) * c
    s = math.sin(phi)
    Nq = math.exp(math.pi * math.tan(phi)) * (1 + s) / (1 - s)
    return c * (Nq - 1.0) / math.tan(phi)


def reduce_strength(c, phi, F_r):
    """Strength parameters divided by the reduction factor ``F_r``."""
    if not F_r > 0:
        raise DomainError("reduction factor must be positive")
    if math.isinf(F_r):
        return 0.0, 0.0
    return c / F_r, math.atan(math.tan(phi) / F_r)


# ---------------------------------------------------------------- generic run

@dataclass
class IncrementRecord:
    step: str
    increment: int
    load_factor: float
    converged: bool
    iterations: int
    monitor: float | None
    residuals: list


@dataclass
class AnalysisResult:
    case: CaseDefinition
    model: sv.Model
    initial: sv.SolverState
    step_states: list
    records: list
    converged: bool

    @property
    def final_state(self) -> sv.SolverState:
        return self.step_states[-1] if self.step_states else self.initial


def monitor_value(model: sv.Model, case: CaseDefinition, d) -> float | None:
    if case.monitor is None:
        return None
    nodes = model.mesh.node_set(case.monitor.set)
    comp = 0 if case.monitor.component == "x" else 1
    return float(np.mean(np.asarray(d)[2 * nodes + comp]))


def prepare(case: CaseDefinition, kernel=None, materials=None, mesh=None, settings=None,
            runlog=None):
    """Model and initial (equilibrated) state for ``case``."""
    model = case.build_model(mesh, kernel, materials)
    state = sv.initial_state(model, case.initial_stress)
    if case.initial_stress is not None:
        # the prescribed stresses balance the boundary loads of the first step
        state.P = sv.internal_force(model, state.stress, state.active)
    if case.geostatic is not None:
        g = case.geostatic
        state = sv.geostatic_init(model, state, g.gravity, g.k0, g.surface_y, g.mode, g.increments,
                                  settings or case.solver.settings(), runlog)
    return model, state


def run_analysis(case: CaseDefinition, kernel=None, materials=None, mesh=None, runlog=None,
                 on_increment=None, prepared=None) -> AnalysisResult:
    """Initial state plus every load step of ``case``; stops at the first failed step."""
    settings = case.solver.settings()
    if prepared is None:
        model, state = prepare(case, kernel, materials, mesh, settings, runlog)
    else:
        model, state = prepared
    initial = state
    records, states = [], []
    for spec in case.steps:
        def hook(res, name=spec.name):
            if on_increment is not None:
                on_increment(model, name, res)
        res = sv.run_step(model, state, spec.to_step(), settings, runlog, hook)
        for inc in res.increments:
            records.append(IncrementRecord(
                spec.name, len(records) + 1, inc.load_factor, inc.converged, inc.iterations,
                monitor_value(model, case, inc.d) if inc.converged else None, inc.residual_history))
        states.append(res.state)
        state = res.state
        if not res.converged:
            return AnalysisResult(case, model, initial, states, records, False)
    return AnalysisResult(case, model, initial, states, records, True)


def reaction_balance(model: sv.Model, state: sv.SolverState) -> np.ndarray:
    """Net force imbalance (x, y) of reactions plus applied loads, relative to the load scale."""
    R = sv.reaction_vector(model, state)
    dmap = sv.DofMap.build(model, state.prescribed, state.active, state.d)
    free_R = np.zeros(model.ndof)
    free_R[dmap.free] = R[dmap.free]
    totals = np.array([free_R[0::2].sum(), free_R[1::2].sum()])
    scale = max(np.linalg.norm(state.P), np.linalg.norm(R[dmap.constrained]), sv.EPS0)
    return np.abs(totals) / scale


def _case(case, name):
    if case is None:
        return shipped_case(name)
    if isinstance(case, str):
        return shipped_case(case)
    return case


def _with_kernel(case: CaseDefinition, kernel):
    if kernel is None:
        return case
    return replace(case, solver=replace(case.solver, kernel=kernel))


# ---------------------------------------------------------------- cylinder

@dataclass
class CylinderResult:
    sizes: list
    errors: list
    rate: float
    kernel: str
    n_elements: list

    def curve(self):
        return ["h", "n_elements", "relative_l2_error"], list(zip(self.sizes, self.n_elements, self.errors))

    def summary(self):
        return {"kernel": self.kernel, "rate": self.rate, "finest_error": self.errors[-1],
                "monotone": bool(np.all(np.diff(self.errors) < 0))}


def relative_l2_error(u, u_exact) -> float:
    u, u_exact = np.asarray(u, float), np.asarray(u_exact, float)
    return float(np.linalg.norm(u - u_exact) / np.linalg.norm(u_exact))


def convergence_rate(sizes, errors) -> float:
    """Least-squares slope of log(error) against log(h)."""
    return float(np.polyfit(np.log(sizes), np.log(errors), 1)[0])


def cylinder_reference(case: CaseDefinition) -> AnalyticalCylinder:
    args = case.mesh.args
    mat = case.materials[0]
    if not case.steps or not case.steps[0].pressures:
        raise ConfigurationError("cylinder case needs a pressure step")
    return AnalyticalCylinder(args.get("r_inner", 1.0), args.get("r_outer", 2.0),
                              case.steps[0].pressures[0][1], mat.E, mat.nu)


def run_cylinder_convergence(sizes=None, case=None, kernel=None, on_mesh=None) -> CylinderResult:
    """Relative nodal L2 error against the analytical field for each element size."""
    case = _with_kernel(_case(case, "cylinder"), kernel)
    sizes = list(case.options.get("sizes", [0.125, 0.0625, 0.03]) if sizes is None else sizes)
    ref = cylinder_reference(case)
    mat = case.materials[0]
    if case.options.get("reference", "plane_stress") == "plane_stress":
        E, nu = plane_strain_equivalent(mat.E, mat.nu)
        mat = replace(mat, E=E, nu=nu)
    errors, counts = [], []
    for h in sizes:
        c = replace(case, mesh=replace(case.mesh, args={**case.mesh.args, "h": float(h)}),
                    materials=(mat,))
        res = run_analysis(c)
        if not res.converged:
            raise SolverError(f"cylinder solve did not converge at h={h}")
        mesh = res.model.mesh
        x, y = mesh.coords.T
        ux, uy = cylinder_analytic_displacement(ref, np.hypot(x, y), np.arctan2(y, x))
        errors.append(relative_l2_error(res.final_state.d, np.stack([ux, uy], 1).ravel()))
        counts.append(mesh.n_elements)
        if on_mesh is not None:
            on_mesh(h, res)
    rate = convergence_rate(sizes, errors) if len(sizes) > 1 else float("nan")
    return CylinderResult(sizes, errors, rate, case.solver.kernel, counts)


# ---------------------------------------------------------------- biaxial

@dataclass
class BiaxialResult:
    strain: list
    stress_yy: list
    plateau: float
    analytic: float
    kernel: str
    analysis: AnalysisResult = field(repr=False)

    @property
    def relative_error(self):
        return abs(self.plateau - self.analytic) / self.analytic

    def curve(self):
        return ["axial_strain", "axial_stress"], list(zip(self.strain, self.stress_yy))

    def summary(self):
        return {"kernel": self.kernel, "plateau": self.plateau, "analytic": self.analytic,
                "relative_error": self.relative_error}


def _mean_cell_stress(model, state, k):
    w = model.w.ravel() * np.repeat(state.active, model.npe)
    return float(np.sum(w * state.stress[:, k]) / np.sum(w))


def run_biaxial(case=None, kernel=None) -> BiaxialResult:
    """Displacement-controlled compression at constant confinement."""
    case = _with_kernel(_case(case, "biaxial"), kernel)
    if case.monitor is None:
        raise ConfigurationError("biaxial case needs a [monitor] on the loaded edge")
    height = case.mesh.args.get("height", 2.0)
    strain, stress = [0.0], [-case.initial_stress[1]]
    states = []

    def on_inc(model, name, res):
        strain.append(-monitor_value(model, case, res.d) / height)
        stress.append(-_mean_cell_stress(model, res.state, 1))
        states.append(res.state)

    res = run_analysis(case, on_increment=on_inc)
    mat = case.materials[0]
    sigma3 = -case.initial_stress[0]
    analytic = ultimate_biaxial_stress(mat.c, math.radians(mat.phi_deg), sigma3)
    return BiaxialResult(strain, stress, stress[-1], analytic, case.solver.kernel, res)


# ---------------------------------------------------------------- footing

@dataclass
class FootingResult:
    pressure: list
    settlement: list
    limit_load: float | None
    analytic: float
    kernel: str
    analysis: AnalysisResult = field(repr=False)

    @property
    def relative_error(self):
        if self.limit_load is None:
            return float("nan")
        return abs(self.limit_load - self.analytic) / self.analytic

    def curve(self):
        return ["pressure", "settlement"], list(zip(self.pressure, self.settlement))

    def summary(self):
        return {"kernel": self.kernel, "limit_load": self.limit_load, "analytic": self.analytic,
                "relative_error": self.relative_error}


def run_footing(case=None, increments=None, kernel=None) -> FootingResult:
    """Footing pressure applied in equal increments; the limit is the last converged level."""
    case = _with_kernel(_case(case, "footing"), kernel)
    if len(case.steps) != 1 or len(case.steps[0].pressures) != 1:
        raise ConfigurationError("footing case needs exactly one step with one pressure load")
    step = case.steps[0]
    if increments is not None:
        case = replace(case, steps=(replace(step, increments=int(increments)),))
        step = case.steps[0]
    q_full = step.pressures[0][1]
    pressure, settlement = [0.0], [0.0]

    def on_inc(model, name, res):
        pressure.append(res.load_factor * q_full)
        settlement.append(-monitor_value(model, case, res.d))

    res = run_analysis(case, on_increment=on_inc)
    mat = case.materials[0]
    analytic = prandtl_capacity(mat.c, math.radians(mat.phi_deg)) if mat.plastic else float("inf")
    limit = None if res.converged else pressure[-1]
    return FootingResult(pressure, settlement, limit, analytic, case.solver.kernel, res)


# ---------------------------------------------------------------- tunnel

@dataclass
class ExcavationResult:
    stages: list
    crown: list
    kernel: str
    analysis: AnalysisResult = field(repr=False)

    @property
    def monotone(self) -> bool:
        mags = np.abs(self.crown)
        return bool(np.all(np.diff(mags) >= -1e-12 * max(mags.max(), 1e-300)))

    def plateau(self, stage=4, tol=0.1) -> bool:
        """Crown movement after ``stage`` is at most ``tol`` of the final value."""
        final = abs(self.crown[-1])
        return final > 0 and abs(self.crown[-1] - self.crown[stage - 1]) <= tol * final

    def curve(self):
        return ["stage", "crown_uy"], list(zip(range(1, len(self.crown) + 1), self.crown))

    def summary(self):
        return {"kernel": self.kernel, "crown": self.crown, "monotone": self.monotone,
                "plateau_by_stage4": self.plateau() if len(self.crown) >= 4 else None}


def run_excavation(case=None, kernel=None) -> ExcavationResult:
    """In-situ stresses, then one birth-death step per excavation stage."""
    case = _with_kernel(_case(case, "tunnel"), kernel)
    if case.monitor is None:
        raise ConfigurationError("tunnel case needs a [monitor] at the crown")
    res = run_analysis(case)
    if not res.converged:
        raise SolverError(f"excavation stage {len(res.step_states)} did not converge")
    crown = [monitor_value(res.model, case, st.d) for st in res.step_states]
    return ExcavationResult([s.name for s in case.steps], crown, case.solver.kernel, res)


# ---------------------------------------------------------------- slope

@dataclass
class ReductionSweep:
    """Reduction factors to try and the displacement-jump rule.

    ``floor`` bounds the median step displacement from below as a fraction
    of the monitor displacement at the first factor.
    """

    start: float = 0.5
    step: float = 0.01
    max: float = 3.0
    jump_ratio: float = 10.0
    floor: float = 0.1

    def __post_init__(self):
        if not self.start > 0 or not self.step > 0:
            raise ConfigurationError("reduction sweep needs start > 0 and step > 0")

    def factors(self):
        n = int(math.floor((self.max - self.start) / self.step + 1e-9))
        return [round(self.start + k * self.step, 12) for k in range(n + 1)]


@dataclass
class SlopeResult:
    factors: list
    converged: list
    monitor: list
    fos: float | None
    failure_factor: float | None
    reason: str
    inconclusive: bool
    kernel: str
    failure_state: sv.SolverState | None = field(default=None, repr=False)
    model: sv.Model | None = field(default=None, repr=False)

    def curve(self):
        rows = [(f, int(c), m if m is not None else "") for f, c, m in
                zip(self.factors, self.converged, self.monitor)]
        return ["F_r", "converged", "monitor_displacement"], rows

    def summary(self):
        return {"kernel": self.kernel, "fos": self.fos, "failure_factor": self.failure_factor,
                "reason": self.reason, "inconclusive": self.inconclusive}


def reduced_materials(case: CaseDefinition, F_r: float):
    """Material list with c and tan(phi) divided by ``F_r``; dilation capped at the reduced friction."""
    out = []
    for m in sorted(case.materials, key=lambda m: m.id):
        if m.plastic:
            c, phi = reduce_strength(m.c, math.radians(m.phi_deg), F_r)
            psi = math.radians(m.phi_deg if m.psi_deg is None else m.psi_deg)
            spec = m.to_material()
            out.append(replace(spec, mc=MohrCoulombParams(c, phi, min(psi, phi), m.H)))
        else:
            out.append(m.to_material())
    return out


def detect_jump(increments, ratio, floor) -> bool:
    """Last increment larger than ``ratio`` times the median of the earlier ones.

    The median is bounded below by ``floor`` so that a purely elastic start
    with zero increments does not flag the first plastic movement.
    """
    if len(increments) < 2:
        return False
    prior = np.median(np.abs(increments[:-1]))
    return abs(increments[-1]) > ratio * max(prior, floor)


def run_slope_stability(case=None, sweep: ReductionSweep | None = None, kernel=None,
                        on_factor=None) -> SlopeResult:
    """Strength reduction with an independent gravity solve for every factor."""
    case = _with_kernel(_case(case, "slope"), kernel)
    if case.monitor is None:
        raise ConfigurationError("slope case needs a [monitor] node")
    if sweep is None:
        keys = {"fr_start": "start", "fr_step": "step", "fr_max": "max", "jump_ratio": "jump_ratio",
                "jump_floor": "floor"}
        sweep = ReductionSweep(**{keys[k]: v for k, v in case.options.items() if k in keys})
    mesh = case.build_mesh()
    base = case.build_model(mesh)
    factors, conv, mon = [], [], []
    u_ref = None
    fos, reason, fstate = None, "sweep exhausted", None
    for F in sweep.factors():
        model = base.with_materials(reduced_materials(case, F))
        res = run_analysis(case, prepared=(model, sv.initial_state(model, case.initial_stress)))
        u = monitor_value(model, case, res.final_state.d) if res.converged else None
        factors.append(F)
        conv.append(res.converged)
        mon.append(u)
        if on_factor is not None:
            on_factor(F, res.converged, u)
        if not res.converged:
            reason, fstate = "non-convergence", res.final_state
            break
        if u_ref is None:
            u_ref = abs(u)
        incs = np.diff([m for m in mon]) if len(mon) > 1 else []
        if len(mon) > 2 and detect_jump(incs, sweep.jump_ratio, sweep.floor * max(u_ref, 1e-12)):
            reason, fstate = "displacement jump", res.final_state
            break
        fstate = res.final_state
    else:
        return SlopeResult(factors, conv, mon, None, None, reason, True, case.solver.kernel,
                           fstate, base)
    fos = factors[-2] if len(factors) > 1 else None
    return SlopeResult(factors, conv, mon, fos, factors[-1], reason, fos is None,
                       case.solver.kernel, fstate, base)


def yielded_band_connects(model: sv.Model, state: sv.SolverState, start_nodes, end_nodes) -> bool:
    """Whether yielded elements form a connected path between two node groups.

    Elements are neighbours when they share a node, so a band running
    diagonally across the grid as a staircase counts as connected.
    """
    mesh = model.mesh
    yielded = state.yielded.reshape(model.ne, model.npe).any(axis=1) & state.active
    idx = np.flatnonzero(yielded)
    if idx.size == 0:
        return False
    conn = mesh.connectivity
    parent = {int(e): int(e) for e in idx}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a
    node_owner = {}
    for e in idx:
        for n in conn[e].tolist():
            other = node_owner.setdefault(n, int(e))
            ra, rb = find(other), find(int(e))
            if ra != rb:
                parent[ra] = rb
    start_nodes, end_nodes = set(map(int, start_nodes)), set(map(int, end_nodes))
    starts = {find(int(e)) for e in idx if start_nodes & set(conn[e].tolist())}
    ends = {find(int(e)) for e in idx if end_nodes & set(conn[e].tolist())}
    return bool(starts & ends)
