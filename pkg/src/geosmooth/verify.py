"""Self-checks of the discretization and the constitutive update.

Each check returns a :class:`Check`; ``run_all`` is what ``geosmooth verify``
prints.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import constitutive as cm
from . import meshgen
from . import solver as sv
from .errors import GeometryError
from .mesh import Mesh, build_subcells, polygon_area
from .smoothing import cell_average_operator, csfem_points, b_matrix, smoothed_B


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    limit: float
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name}: {self.value:.3e} (limit {self.limit:.1e}, {self.seconds:.2f} s)"


def distorted_grid(n=4, amplitude=0.2, seed=0) -> Mesh:
    """``n x n`` unit-square mesh with interior nodes moved at random."""
    rng = np.random.default_rng(seed)
    mesh = meshgen.rectangle(1.0, 1.0, n, n)
    coords = mesh.coords.copy()
    h = 1.0 / n
    interior = np.flatnonzero((coords > 1e-12).all(axis=1) & (coords < 1 - 1e-12).all(axis=1))
    coords[interior] += rng.uniform(-amplitude * h, amplitude * h, size=(len(interior), 2))
    return Mesh(coords, mesh.connectivity, mesh.node_sets, mesh.element_sets)


def random_quad(rng, reflex=False) -> np.ndarray:
    """Counterclockwise quadrilateral of unit order size.

    Convex by default; with ``reflex`` one vertex is pushed across the
    diagonal of its neighbours, giving one interior angle above 180 degrees.
    """
    while True:
        base = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        pts = base + rng.uniform(-0.3, 0.3, size=(4, 2))
        A = rng.normal(size=(2, 2)) * 0.3 + np.eye(2)
        pts = pts @ A.T * rng.uniform(0.5, 2.0) + rng.normal(size=2)
        if reflex:
            k = rng.integers(4)
            mid = 0.5 * (pts[k - 1] + pts[(k + 1) % 4])
            pts[k] = mid + rng.uniform(0.05, 0.25) * (pts[(k + 2) % 4] - mid)
        e = np.roll(pts, -1, axis=0) - pts
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if polygon_area(pts) <= 0:
            continue
        if reflex or np.all(cross > 1e-3 * np.abs(cross).max()):
            return pts


def patch_test(n_sc=4, seed=0) -> float:
    """Largest deviation of subcell strains from an imposed constant strain."""
    rng = np.random.default_rng(seed)
    mesh = distorted_grid(4, 0.2, seed)
    grad = rng.normal(size=(2, 2))
    u = mesh.coords @ grad.T + rng.normal(size=2)
    exact = np.array([grad[0, 0], grad[1, 1], grad[0, 1] + grad[1, 0]])
    d = u.ravel()
    # vectorized operators used by the solver
    _, bx, by, _, _ = csfem_points(mesh.element_coords(), n_sc)
    B = b_matrix(bx, by)
    edofs = np.stack([2 * mesh.connectivity, 2 * mesh.connectivity + 1], axis=-1).reshape(-1, 8)
    eps = np.einsum("epij,ej->epi", B, d[edofs])
    err = np.abs(eps - exact).max()
    # per-cell boundary-integral route
    for e in range(mesh.n_elements):
        for cell in build_subcells(e, mesh.element_coords(e), n_sc):
            eps_c = smoothed_B(cell).entries @ d[edofs[e]]
            err = max(err, float(np.abs(eps_c - exact).max()))
    return float(err)


def operator_oracle(n_quads=100, seed=1) -> float:
    """Largest entrywise gap between smoothed_B and the quadrature-averaged compatible operator.

    A third of the quads have a reflex corner; those whose smoothing cells
    would fold are redrawn.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < n_quads:
        pts = random_quad(rng, reflex=done % 3 == 2)
        try:
            cells = {n_sc: build_subcells(0, pts, n_sc) for n_sc in (1, 2, 4)}
        except GeometryError:
            continue
        for n_sc, group in cells.items():
            for cell in group:
                Bs = smoothed_B(cell).entries
                Bq = cell_average_operator(pts, cell.vertex_shape_values)
                worst = max(worst, float(np.abs(Bs - Bq).max()))
        done += 1
    return worst


def random_plastic_trials(n, seed=2, associated_only=False):
    """Yield ``(trial, elastic, mc, kappa)`` for trial stresses outside the yield surface."""
    rng = np.random.default_rng(seed)
    count = 0
    while count < n:
        el = cm.ElasticParams(10 ** rng.uniform(6, 9), rng.uniform(0.05, 0.45))
        phi = math.radians(rng.uniform(0, 45))
        psi = phi if associated_only or rng.random() < 0.5 else phi * rng.random()
        H = 0.0 if rng.random() < 0.5 else 10 ** rng.uniform(3, 6)
        mc = cm.MohrCoulombParams(10 ** rng.uniform(3, 5), phi, psi, H)
        kappa = 0.0 if rng.random() < 0.5 else mc.c * rng.uniform(0, 0.5)
        trial = rng.normal(size=4) * mc.c * rng.uniform(1, 20)
        trial[:3] -= rng.uniform(-0.5, 3) * mc.c
        F = cm.yield_value(trial, mc, kappa)
        if F <= cm.yield_tolerance(F, mc, kappa):
            continue
        count += 1
        yield trial, el, mc, kappa


def return_map_properties(n=1000, seed=2):
    """(max scaled |F|, min dlam, max tangent asymmetry) over random plastic trials."""
    worst_f, min_dl, worst_sym = 0.0, math.inf, 0.0
    for trial, el, mc, kappa in random_plastic_trials(n, seed):
        st = cm.MaterialState(np.zeros(4), np.zeros(4), kappa, False)
        new, dl = cm.return_map(trial, st, el, mc)
        p = cm.invariants(new.stress).p
        scale = abs(p) * math.sin(mc.phi) + 2 * (mc.c + new.kappa) * math.cos(mc.phi) + 1.0
        worst_f = max(worst_f, abs(cm.yield_value(new.stress, mc, new.kappa)) / scale)
        min_dl = min(min_dl, dl)
        if mc.associated:
            D = cm.elastoplastic_tangent(new.stress, mc, el, True, new.kappa)
            worst_sym = max(worst_sym, float(np.abs(D - D.T).max() / np.abs(D).max()))
    return worst_f, min_dl, worst_sym


def elastic_versus_direct(kernel="csfem") -> float:
    """Relative gap between the Newton path and the direct solve on an elastic patch."""
    mesh = distorted_grid(6, 0.25, 3)
    cons = {}
    for n in mesh.node_set("left"):
        cons[2 * int(n)] = 0.0
    for n in mesh.node_set("bottom"):
        cons[2 * int(n) + 1] = 0.0
    model = sv.Model(mesh, sv.Material(cm.ElasticParams(2e7, 0.3), gamma=18e3), kernel, 4, cons)
    loads = sv.LoadSet(gravity=1.0, pressures=(("right", 5e4),), tractions=(("top", 1e4, -2e4),))
    state = sv.initial_state(model)
    step = sv.Step("load", 1, gravity=1.0, pressures=[("right", 5e4)], tractions=[("top", 1e4, -2e4)])
    res = sv.run_step(model, state, step)
    direct = sv.solve_linear(model, loads)
    return float(np.abs(res.state.d - direct).max() / np.abs(direct).max())


def elastic_case_gap(case, kernel=None) -> float:
    """Newton against direct solve for the first load step of ``case`` with plasticity removed.

    The step is applied in one increment from a stress-free state; element
    birth-death entries are ignored.
    """
    mats = [sv.Material(m.elastic, None, m.gamma) for m in case.material_list()]
    model = case.build_model(kernel=kernel, materials=mats)
    spec = case.steps[0]
    step = sv.Step(spec.name, 1, spec.gravity, list(spec.pressures), list(spec.tractions),
                   list(spec.nodal), list(spec.displacements))
    res = sv.run_step(model, sv.initial_state(model), step)
    if not res.converged:
        return float("inf")
    cons = dict(model.constraints)
    for name, comp, value in spec.displacements:
        for n in model.mesh.node_set(name):
            cons[model.dof(n, comp)] = float(value)
    loads = sv.LoadSet(spec.gravity or 0.0, tuple(spec.pressures), tuple(spec.tractions),
                       tuple(spec.nodal))
    direct = sv.solve_linear(model, loads, cons)
    return float(np.abs(res.state.d - direct).max() / max(np.abs(direct).max(), 1e-300))


def run_all(quick=False) -> list[Check]:
    out = []

    def timed(name, fn, limit, cmp=lambda v, lim: v <= lim):
        t = time.perf_counter()
        v = fn()
        out.append(Check(name, bool(cmp(v, limit)), float(v), limit, time.perf_counter() - t))

    timed("patch test, n_sc=4", lambda: patch_test(4), 1e-12)
    timed("patch test, n_sc=2", lambda: patch_test(2), 1e-12)
    timed("patch test, n_sc=1", lambda: patch_test(1), 1e-12)
    timed("smoothed operator vs quadrature average", lambda: operator_oracle(20 if quick else 100), 1e-12)
    n = 200 if quick else 1000
    rm = {}

    def props():
        rm["v"] = return_map_properties(n)
        return rm["v"][0]
    timed("return map: scaled |F| after return", props, 1e-8)
    out.append(Check("return map: plastic multiplier > 0", rm["v"][1] > 0, rm["v"][1], 0.0, 0.0))
    out.append(Check("return map: associated tangent symmetry", rm["v"][2] <= 1e-10, rm["v"][2], 1e-10, 0.0))
    timed("elastic Newton vs direct solve (csfem)", lambda: elastic_versus_direct("csfem"), 1e-12)
    timed("elastic Newton vs direct solve (fem)", lambda: elastic_versus_direct("fem"), 1e-12)
    return out
