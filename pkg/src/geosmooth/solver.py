"""Global assembly, boundary conditions and the incremental Newton solver."""
from __future__ import annotations

import json
import logging
import sys
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import kernels
from .constitutive import ElasticParams, MohrCoulombParams, elastic_tangent
from .errors import ConfigurationError, ConstitutiveError, SolverError
from .mesh import Mesh
from .smoothing import b_matrix, csfem_points, gauss_points

log = logging.getLogger(__name__)

EPS0 = 1.0  # N, guards the residual denominator


@dataclass(frozen=True)
class Material:
    elastic: ElasticParams
    mc: MohrCoulombParams | None = None
    gamma: float = 0.0

    def table_row(self):
        if self.mc is None:
            return [self.elastic.E, self.elastic.nu, 0.0, 0.0, 0.0, 0.0, 0.0]
        return [self.elastic.E, self.elastic.nu, self.mc.c, self.mc.phi, self.mc.psi, self.mc.H, 1.0]


@dataclass
class SolverSettings:
    tol_r: float = 1e-6
    max_iter: int = 50
    max_bisections: int = 4


class Model:
    """Mesh, materials and precomputed integration-point operators.

    For the ``csfem`` kernel every smoothing cell is an integration point;
    ``fem`` uses the 2x2 Gauss points of the compatible element.
    """

    def __init__(self, mesh: Mesh, materials, kernel: str = "csfem", n_sc: int = 4,
                 constraints=None):
        if kernel not in ("csfem", "fem"):
            raise ConfigurationError(f"unknown kernel {kernel!r}")
        self.mesh = mesh
        self.kernel = kernel
        self.n_sc = n_sc
        if isinstance(materials, Material):
            materials = [materials]
        self.materials = list(materials.values()) if isinstance(materials, dict) else list(materials)
        if isinstance(materials, dict) and sorted(materials) != list(range(len(materials))):
            raise ConfigurationError("material ids must be contiguous from 0")
        if mesh.material_ids.max(initial=0) >= len(self.materials):
            raise ConfigurationError("element references an undefined material")

        ec = mesh.element_coords()
        if kernel == "csfem":
            w, bx, by, N, xy = csfem_points(ec, n_sc)
        else:
            w, bx, by, N, xy = gauss_points(ec)
        self.w = np.ascontiguousarray(w)
        self.B = np.ascontiguousarray(b_matrix(bx, by))
        self.N = N
        self.xy = xy
        self.ne, self.npe = self.w.shape
        self.ndof = 2 * mesh.n_nodes
        self.edofs = np.empty((self.ne, 8), dtype=np.int64)
        self.edofs[:, 0::2] = 2 * mesh.connectivity
        self.edofs[:, 1::2] = 2 * mesh.connectivity + 1
        self._rows = np.repeat(self.edofs, 8, axis=1)
        self._cols = np.tile(self.edofs, (1, 8))

        self.table = np.array([m.table_row() for m in self.materials], dtype=float)
        self.point_material = np.repeat(mesh.material_ids, self.npe).astype(np.int64)
        self.constraints = {} if constraints is None else dict(constraints)
        self.associated = all(m.mc is None or m.mc.associated for m in self.materials)

    @property
    def n_points(self) -> int:
        return self.ne * self.npe

    def dof(self, node, comp) -> int:
        return 2 * int(node) + {"x": 0, "y": 1, 0: 0, 1: 1}[comp]

    def elastic_tangents(self) -> np.ndarray:
        D = np.array([elastic_tangent(m.elastic)[0] for m in self.materials])
        return D[self.point_material]

    def with_materials(self, materials) -> "Model":
        """Shallow copy sharing geometry with a new material list."""
        other = object.__new__(Model)
        other.__dict__.update(self.__dict__)
        other.materials = list(materials)
        other.table = np.array([m.table_row() for m in other.materials], dtype=float)
        other.associated = all(m.mc is None or m.mc.associated for m in other.materials)
        return other


@dataclass
class SolverState:
    d: np.ndarray
    stress: np.ndarray          # (npts, 4)
    plastic_strain: np.ndarray  # (npts, 4)
    kappa: np.ndarray
    region: np.ndarray          # 0 elastic, >0 plastic return region
    tangent: np.ndarray         # (npts, 3, 3), in-plane
    active: np.ndarray          # (ne,) element activity
    P: np.ndarray               # external force level of the converged state
    loads: "LoadSet"
    prescribed: dict = field(default_factory=dict)

    @property
    def yielded(self) -> np.ndarray:
        return self.region > 0

    def copy(self) -> "SolverState":
        return SolverState(self.d.copy(), self.stress.copy(), self.plastic_strain.copy(),
                           self.kappa.copy(), self.region.copy(), self.tangent.copy(),
                           self.active.copy(), self.P.copy(), self.loads, dict(self.prescribed))


def initial_state(model: Model, stress=None) -> SolverState:
    n = model.n_points
    s = np.zeros((n, 4))
    if stress is not None:
        s[:] = np.asarray(stress, dtype=float)
    return SolverState(
        d=np.zeros(model.ndof), stress=s, plastic_strain=np.zeros((n, 4)), kappa=np.zeros(n),
        region=np.zeros(n, dtype=np.int64), tangent=model.elastic_tangents(),
        active=model.mesh.initially_active.copy(), P=np.zeros(model.ndof), loads=LoadSet(),
        prescribed=dict(model.constraints),
    )


@dataclass(frozen=True)
class LoadSet:
    """Applied loads at full level.

    ``pressures``: (node set, p) with p > 0 pushing into the body;
    ``tractions``: (node set, tx, ty); ``nodal``: (node set, fx, fy) per node.
    """

    gravity: float = 0.0
    pressures: tuple = ()
    tractions: tuple = ()
    nodal: tuple = ()

    def merged(self, gravity=None, pressures=(), tractions=(), nodal=()) -> "LoadSet":
        def merge(old, new):
            table = {entry[0]: entry for entry in old}
            for entry in new:
                table[entry[0]] = tuple(entry)
            return tuple(table[k] for k in sorted(table))
        return LoadSet(self.gravity if gravity is None else gravity,
                       merge(self.pressures, pressures), merge(self.tractions, tractions),
                       merge(self.nodal, nodal))


@dataclass
class Step:
    name: str = "step"
    increments: int = 1
    gravity: float | None = None
    pressures: list = field(default_factory=list)
    tractions: list = field(default_factory=list)
    nodal: list = field(default_factory=list)
    displacements: list = field(default_factory=list)  # (node set, component, value)
    deactivate: list = field(default_factory=list)
    activate: list = field(default_factory=list)

    def __post_init__(self):
        if self.increments < 1:
            raise ConfigurationError(f"step {self.name!r}: increment count must be >= 1")


@dataclass
class IncrementResult:
    d: np.ndarray
    residual_history: list
    state: SolverState | None
    reactions: dict
    converged: bool
    iterations: int
    load_factor: float = 1.0
    note: str = ""


@dataclass
class DofMap:
    ndof: int
    constrained: np.ndarray
    free: np.ndarray
    values: np.ndarray   # prescribed values at constrained dofs

    @classmethod
    def build(cls, model: Model, prescribed: dict, active, d=None) -> "DofMap":
        attached = np.zeros(model.ndof, dtype=bool)
        attached[model.edofs[active].ravel()] = True
        cmask = ~attached
        # dofs with no active element stay where they are
        vals = np.zeros(model.ndof) if d is None else np.where(attached, 0.0, d)
        for dof, v in prescribed.items():
            cmask[dof] = True
            vals[dof] = v
        return cls(model.ndof, np.flatnonzero(cmask), np.flatnonzero(~cmask), vals)


class RunLog:
    """Per-iteration convergence records, echoed as text and kept for a JSON-lines file."""

    def __init__(self, stream=None):
        self.stream = stream
        self.records = []

    def record(self, **entry):
        self.records.append(entry)
        if self.stream is not None:
            fields = " ".join(f"{k}={v:.3e}" if isinstance(v, float) else f"{k}={v}"
                              for k, v in entry.items())
            print(fields, file=self.stream)

    def write(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")


# ---------------------------------------------------------------- assembly

def assemble_global(model: Model, tangents, active=None) -> sp.csr_matrix:
    """Global stiffness from per-point tangents over the active elements."""
    active = model.mesh.initially_active if active is None else np.asarray(active, dtype=bool)
    D = np.asarray(tangents).reshape(model.ne, model.npe, 3, 3)
    idx = np.flatnonzero(active)
    Ke = kernels.cell_stiffness(model.B[idx], np.ascontiguousarray(D[idx]),
                                np.ascontiguousarray(model.w[idx]))
    K = sp.coo_matrix((Ke.reshape(len(idx), 64).ravel(),
                       (model._rows[idx].ravel(), model._cols[idx].ravel())),
                      shape=(model.ndof, model.ndof))
    return K.tocsr()


def internal_force(model: Model, stress, active=None) -> np.ndarray:
    active = model.mesh.initially_active if active is None else np.asarray(active, dtype=bool)
    s = np.asarray(stress).reshape(model.ne, model.npe, 4)[..., [0, 1, 3]]
    fe = np.einsum("epji,epj,ep->ei", model.B, s, model.w)
    fe[~active] = 0.0
    return np.bincount(model.edofs.ravel(), weights=fe.ravel(), minlength=model.ndof)


def point_strains(model: Model, du) -> np.ndarray:
    """In-plane strain increments of every point as 4-vectors (zz = 0)."""
    de = np.asarray(du)[model.edofs]
    e3 = np.einsum("epij,ej->epi", model.B, de).reshape(-1, 3)
    out = np.zeros((len(e3), 4))
    out[:, [0, 1, 3]] = e3
    return out


_GL = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def external_force(model: Model, loads: LoadSet, active=None, scale: float = 1.0) -> np.ndarray:
    """Consistent nodal forces of body force, edge loads and point loads."""
    mesh = model.mesh
    active = mesh.initially_active if active is None else np.asarray(active, dtype=bool)
    P = np.zeros(model.ndof)
    if scale == 0.0:
        return P
    if loads.gravity:
        gam = np.array([m.gamma for m in model.materials])[mesh.material_ids]
        wN = np.einsum("ep,epk->ek", model.w, model.N) * gam[:, None] * loads.gravity
        wN[~active] = 0.0
        P += np.bincount(2 * mesh.connectivity.ravel() + 1, weights=-wN.ravel(), minlength=model.ndof)
    edge_loads = [(name, "p", (p,)) for name, p in loads.pressures]
    edge_loads += [(name, "t", (tx, ty)) for name, tx, ty in loads.tractions]
    for name, kind, vals in edge_loads:
        nodes = mesh.node_set(name)
        edges = mesh.boundary_edges(nodes, active)
        if nodes.size and not edges:
            inactive_edges = mesh.boundary_edges(nodes, np.ones(mesh.n_elements, dtype=bool))
            if inactive_edges:
                raise ConfigurationError(f"edge load on set {name!r} acts on inactive elements")
        for e, ka, kb in edges:
            a, b = mesh.connectivity[e, ka], mesh.connectivity[e, kb]
            xa, xb = mesh.coords[a], mesh.coords[b]
            dx = xb - xa
            length = float(np.hypot(*dx))
            if kind == "p":
                # element is counterclockwise so (dy, -dx) points outward
                t = -vals[0] * np.array([dx[1], -dx[0]]) / length
            else:
                t = np.array(vals, dtype=float)
            # two-point Gauss rule along the edge
            for g in _GL:
                Na, Nb = 0.5 * (1 - g), 0.5 * (1 + g)
                P[2 * a:2 * a + 2] += Na * t * length * 0.5
                P[2 * b:2 * b + 2] += Nb * t * length * 0.5
    for name, fx, fy in loads.nodal:
        nodes = mesh.node_set(name)
        P[2 * nodes] += fx
        P[2 * nodes + 1] += fy
    return P * scale


# ---------------------------------------------------------------- linear solve

def _factorize(K, symmetric):
    K = K.tocsc()
    try:
        if symmetric:
            lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        else:
            lu = spla.splu(K)
    except RuntimeError:
        return None
    piv = np.abs(lu.U.diagonal())
    if piv.size == 0 or not np.all(np.isfinite(piv)) or piv.min() <= PIVOT_RATIO * piv.max():
        return None
    return lu


PIVOT_RATIO = 1e-13


class FreeSystem:
    """Assembly and solution of the free-dof block for a fixed active set.

    Element matrices are scattered straight into LAPACK lower band storage
    under a reverse Cuthill-McKee ordering and factorized by banded
    Cholesky.  Unsymmetric or indefinite matrices go through sparse LU.
    """

    def __init__(self, model: Model, active, free):
        self.ndof = model.ndof
        self.free = free
        self.idx = np.flatnonzero(active)
        n = len(free)
        self.n = n
        loc = np.full(model.ndof, -1, dtype=np.int64)
        loc[free] = np.arange(n)
        r = loc[model._rows[self.idx]]
        c = loc[model._cols[self.idx]]
        both = (r >= 0) & (c >= 0)
        self.both = both
        self.r, self.c = r[both], c[both]
        pattern = sp.csr_matrix((np.ones(len(self.r)), (self.r, self.c)), shape=(n, n))
        perm = reverse_cuthill_mckee(pattern, symmetric_mode=True)
        self.perm = perm
        pos = np.empty(n, dtype=np.int64)
        pos[perm] = np.arange(n)
        rr, cc = pos[self.r], pos[self.c]
        lower = rr >= cc
        self.bw = int((rr - cc)[lower].max(initial=0))
        self.lower = lower
        self.band_index = (rr - cc)[lower] * n + cc[lower]
        self.edofs = model.edofs[self.idx]

    def matvec(self, Ke, u):
        """Global product of the active element matrices with ``u``."""
        fe = np.einsum("eij,ej->ei", Ke, u[self.edofs])
        return np.bincount(self.edofs.ravel(), weights=fe.ravel(), minlength=self.ndof)

    def solve(self, Ke, rhs, symmetric):
        """Solution of the free block, or None if it is singular."""
        vals = Ke.reshape(len(self.idx), 64)[self.both]
        if symmetric:
            ab = np.bincount(self.band_index, weights=vals[self.lower],
                             minlength=(self.bw + 1) * self.n).reshape(self.bw + 1, self.n)
            L, info = lapack.dpbtrf(ab, lower=1)
            if info == 0:
                piv = L[0] ** 2
                if not np.all(np.isfinite(piv)) or piv.min() <= PIVOT_RATIO * piv.max():
                    return None
                x, info = lapack.dpbtrs(L, rhs[self.perm], lower=1)
                out = np.empty(self.n)
                out[self.perm] = x
                return out
        K = sp.csc_matrix((vals, (self.r, self.c)), shape=(self.n, self.n))
        lu = _factorize(K, False)
        return None if lu is None else lu.solve(rhs)

    def sparse(self, Ke):
        vals = Ke.reshape(len(self.idx), 64)[self.both]
        return sp.csr_matrix((vals, (self.r, self.c)), shape=(self.n, self.n))


def free_system(model: Model, active, free) -> FreeSystem:
    """Cached :class:`FreeSystem` for the current active and free sets."""
    key = (np.asarray(active, dtype=bool).tobytes(), np.asarray(free).tobytes())
    cached = model.__dict__.get("_free_system")
    if cached is not None and cached[0] == key:
        return cached[1]
    system = FreeSystem(model, active, free)
    model._free_system = (key, system)
    return system


def element_stiffness(model: Model, tangents, idx) -> np.ndarray:
    D = np.asarray(tangents).reshape(model.ne, model.npe, 3, 3)
    return kernels.cell_stiffness(model.B[idx], np.ascontiguousarray(D[idx]),
                                  np.ascontiguousarray(model.w[idx]))


def _zero_energy_dofs(K, free):
    diag = K.diagonal()
    zero = free[np.flatnonzero(np.abs(diag) <= 1e-14 * max(np.abs(diag).max(), 1e-300))]
    if zero.size:
        return zero
    if len(free) <= 3000:
        A = K.toarray()
        A = 0.5 * (A + A.T)
        vals, vecs = np.linalg.eigh(A)
        tol = 1e-10 * abs(vals).max()
        null = vecs[:, np.abs(vals) <= tol]
        if null.size:
            weight = np.abs(null).max(axis=1)
            return free[np.flatnonzero(weight > 0.1 * weight.max())]
    return free


# ---------------------------------------------------------------- Newton

def evaluate(model: Model, state: SolverState, d) -> tuple:
    """Stress update of every active point from the converged ``state``."""
    du = d - state.d
    deps = point_strains(model, du)
    act_pts = np.repeat(state.active, model.npe)
    idx = np.flatnonzero(act_pts)
    stress = state.stress.copy()
    plastic = state.plastic_strain.copy()
    kappa = state.kappa.copy()
    region = state.region.copy()
    tangent = state.tangent.copy()
    s, dep, k, reg, _, tan = kernels.material_update(
        np.ascontiguousarray(state.stress[idx]), np.ascontiguousarray(deps[idx]),
        np.ascontiguousarray(state.kappa[idx]), model.point_material[idx], model.table)
    if np.any(reg < 0):
        bad = idx[np.flatnonzero(reg < 0)[0]]
        raise ConstitutiveError(f"stress update failed at point {bad}")
    stress[idx], kappa[idx], region[idx], tangent[idx] = s, k, reg, tan
    plastic[idx] += dep
    return stress, plastic, kappa, region, tangent


def newton_increment(model: Model, state: SolverState, P_target, targets=None,
                     settings: SolverSettings | None = None, runlog: RunLog | None = None,
                     tag=None) -> IncrementResult:
    """Advance ``state`` to the load ``P_target`` and prescribed ``targets``.

    Full Newton with the continuum tangent.  Every iteration re-evaluates
    all points from the last converged state.  A non-converged result is
    returned, not raised; the caller decides what failure means.
    """
    settings = settings or SolverSettings()
    prescribed = dict(state.prescribed)
    if targets:
        prescribed.update(targets)
    dmap = DofMap.build(model, prescribed, state.active, state.d)
    if not state.active.any():
        raise SolverError("no active elements to assemble")
    free, cons = dmap.free, dmap.constrained
    system = free_system(model, state.active, free)
    d = state.d.copy()
    dd = np.zeros(model.ndof)
    dd[cons] = dmap.values[cons] - d[cons]
    f_int = internal_force(model, state.stress, state.active)
    r = P_target - f_int
    tangent = state.tangent
    history = []
    trial = None
    for it in range(1, settings.max_iter + 1):
        Ke = element_stiffness(model, tangent, system.idx)
        rhs = r[free].copy()
        if it == 1 and np.any(dd):
            rhs -= system.matvec(Ke, dd)[free]
        delta = system.solve(Ke, rhs, model.associated)
        if delta is None:
            if state.region.any() or (trial is not None and trial[3].any()):
                return _failed(state, history, it, "singular tangent")
            dofs = _zero_energy_dofs(system.sparse(Ke), free)
            raise SolverError(f"singular stiffness; zero-energy dofs {dofs[:20].tolist()}", dofs)
        if not np.all(np.isfinite(delta)):
            return _failed(state, history, it, "non-finite update")
        if it == 1:
            d[cons] = dmap.values[cons]
        d[free] += delta
        try:
            trial = evaluate(model, state, d)
        except ConstitutiveError as exc:
            return _failed(state, history, it, str(exc))
        tangent = trial[4]
        f_int = internal_force(model, trial[0], state.active)
        r = P_target - f_int
        reac = -r[cons]
        denom = max(np.linalg.norm(P_target[free]), np.linalg.norm(reac), EPS0)
        rel = float(np.linalg.norm(r[free]) / denom)
        history.append(rel)
        if runlog is not None:
            runlog.record(**(tag or {}), iteration=it, residual=rel)
        if not np.isfinite(rel) or rel > 1e8:
            return _failed(state, history, it, "diverged")
        if rel <= settings.tol_r:
            stress, plastic, kappa, region, tangent = trial
            new = SolverState(d, stress, plastic, kappa, region, tangent, state.active.copy(),
                              np.asarray(P_target, dtype=float).copy(), state.loads, prescribed)
            reactions = {int(k): float(v) for k, v in zip(cons, reac)}
            return IncrementResult(d, history, new, reactions, True, it)
    return _failed(state, history, settings.max_iter, "max iterations")


def _failed(state, history, it, note):
    return IncrementResult(state.d.copy(), history, None, {}, False, it, note=note)


def reaction_vector(model: Model, state: SolverState) -> np.ndarray:
    """Internal minus external force; nonzero only at constrained dofs at equilibrium."""
    return internal_force(model, state.stress, state.active) - state.P


# ---------------------------------------------------------------- steps

def set_element_activity(model: Model, state: SolverState, elements, active: bool):
    """Switch elements on or off.

    Returns ``(new_state, released)``.  The new state's load level is
    replaced on free dofs by the internal force of the remaining elements so
    it is in equilibrium; ``released`` is the force that the next increments
    must take away.  Stresses of removed elements are frozen.
    """
    elements = np.asarray(elements, dtype=np.int64)
    new = state.copy()
    if elements.size == 0:
        return new, np.zeros(model.ndof)
    new.active[elements] = bool(active)
    if active:
        pts = (elements[:, None] * model.npe + np.arange(model.npe)).ravel()
        # reborn elements start stress free at the current configuration
        new.stress[pts] = 0.0
        new.plastic_strain[pts] = 0.0
        new.kappa[pts] = 0.0
        new.region[pts] = 0
        new.tangent[pts] = model.elastic_tangents()[pts]
    f_int = internal_force(model, new.stress, new.active)
    dmap = DofMap.build(model, new.prescribed, new.active)
    released = np.zeros(model.ndof)
    released[dmap.free] = state.P[dmap.free] - f_int[dmap.free]
    new.P[dmap.free] = f_int[dmap.free]
    return new, released


def _targets_for(model: Model, step: Step):
    out = {}
    for name, comp, value in step.displacements:
        for n in model.mesh.node_set(name):
            out[model.dof(n, comp)] = float(value)
    return out


@dataclass
class StepResult:
    name: str
    state: SolverState
    increments: list
    converged: bool


def run_step(model: Model, state: SolverState, step: Step, settings: SolverSettings | None = None,
             runlog: RunLog | None = None, on_increment=None) -> StepResult:
    """Apply one load step with uniform increments and bisection on failure."""
    settings = settings or SolverSettings()
    if step.deactivate or step.activate:
        for name in step.deactivate:
            state, _ = set_element_activity(model, state, model.mesh.element_set(name), False)
        for name in step.activate:
            state, _ = set_element_activity(model, state, model.mesh.element_set(name), True)
    loads = state.loads.merged(step.gravity, step.pressures, step.tractions, step.nodal)
    P_end = external_force(model, loads, state.active)
    P_start = state.P.copy()
    dmap0 = DofMap.build(model, state.prescribed, state.active)
    # genuine loads at constrained dofs keep reactions meaningful
    P_start[dmap0.constrained] = P_end[dmap0.constrained]
    end_targets = _targets_for(model, step)
    start_vals = {dof: state.d[dof] if dof not in state.prescribed else state.prescribed[dof]
                  for dof in end_targets}
    state = replace(state.copy(), loads=loads)
    results = []

    def at(alpha):
        P = P_start + alpha * (P_end - P_start)
        tg = {dof: start_vals[dof] + alpha * (end_targets[dof] - start_vals[dof]) for dof in end_targets}
        return P, tg

    def advance(st, a0, a1, depth, inc_no):
        P, tg = at(a1)
        res = newton_increment(model, st, P, tg, settings, runlog,
                               tag={"step": step.name, "increment": inc_no, "load_factor": a1})
        res.load_factor = a1
        if res.converged:
            results.append(res)
            if on_increment is not None:
                on_increment(res)
            return res.state, True
        log.info("step %s: increment to %.6g failed (%s)", step.name, a1, res.note)
        if depth >= settings.max_bisections:
            results.append(res)
            return st, False
        mid = 0.5 * (a0 + a1)
        st, ok = advance(st, a0, mid, depth + 1, inc_no)
        if not ok:
            return st, False
        return advance(st, mid, a1, depth + 1, inc_no)

    n = step.increments
    for k in range(1, n + 1):
        state, ok = advance(state, (k - 1) / n, k / n, 0, k)
        if not ok:
            return StepResult(step.name, state, results, False)
    return StepResult(step.name, state, results, True)


def run_schedule(model: Model, state: SolverState, steps, settings=None, runlog=None,
                 on_increment=None) -> list[StepResult]:
    out = []
    for step in steps:
        res = run_step(model, state, step, settings, runlog, on_increment)
        out.append(res)
        state = res.state
        if not res.converged:
            break
    return out


def geostatic_init(model: Model, state: SolverState | None = None, gravity: float = 1.0,
                   k0=None, surface_y=None, mode: str = "k0", increments: int = 1,
                   settings: SolverSettings | None = None, runlog: RunLog | None = None) -> SolverState:
    """In-situ stress state.

    ``mode="k0"`` prescribes ``sigma_yy = -gamma * depth`` and
    ``sigma_xx = sigma_zz = K0 sigma_yy`` (``K0 = nu / (1 - nu)`` unless
    given), runs one equilibrium increment under gravity and resets the
    displacements.  ``mode="gravity"`` ramps gravity on from zero stress.
    """
    state = initial_state(model) if state is None else state.copy()
    if mode == "gravity":
        res = run_step(model, state, Step("geostatic", increments, gravity=gravity), settings, runlog)
        if not res.converged:
            raise SolverError("gravity loading did not converge")
        return res.state
    if mode != "k0":
        raise ConfigurationError(f"unknown geostatic mode {mode!r}")
    mesh = model.mesh
    ysurf = mesh.coords[:, 1].max() if surface_y is None else float(surface_y)
    y = model.xy[..., 1].reshape(-1)
    mats = [model.materials[m] for m in model.point_material]
    gam = np.array([m.gamma for m in model.materials])[model.point_material] * gravity
    if k0 is None:
        nu = np.array([m.elastic.nu for m in mats])
        k0v = nu / (1.0 - nu)
    else:
        k0v = np.full(len(y), float(k0))
        if not 0.0 < float(k0) < 1.5:
            warnings.warn(f"K0 = {k0} outside the usual range (0, 1.5)", stacklevel=2)
    syy = -gam * np.maximum(ysurf - y, 0.0)
    state.stress[:, 0] = k0v * syy
    state.stress[:, 1] = syy
    state.stress[:, 2] = k0v * syy
    state.stress[:, 3] = 0.0
    state.P = internal_force(model, state.stress, state.active)
    res = run_step(model, state, Step("geostatic", 1, gravity=gravity), settings, runlog)
    if not res.converged:
        raise SolverError("geostatic equilibrium increment did not converge")
    out = res.state
    out.d = np.zeros_like(out.d)
    return out


def solve_linear(model: Model, loads: LoadSet, constraints=None) -> np.ndarray:
    """Direct elastic solve, independent of the Newton machinery."""
    constraints = model.constraints if constraints is None else constraints
    active = model.mesh.initially_active
    K = assemble_global(model, model.elastic_tangents(), active)
    P = external_force(model, loads, active)
    dmap = DofMap.build(model, constraints, active)
    d = np.zeros(model.ndof)
    d[dmap.constrained] = dmap.values[dmap.constrained]
    rhs = P[dmap.free] - K[dmap.free][:, dmap.constrained] @ d[dmap.constrained]
    d[dmap.free] = spla.spsolve(K[dmap.free][:, dmap.free].tocsc(), rhs)
    return d
