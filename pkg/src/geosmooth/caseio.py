"""Case files, model construction from cases, and field export.

A case is one TOML document; the grammar is described in ``docs/case_format.md``.
"""
from __future__ import annotations

import csv
import inspect
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from . import meshgen
from .constitutive import ElasticParams, MohrCoulombParams
from .errors import ConfigurationError
from .mesh import Mesh, read_mesh
from .solver import Material, Model, SolverSettings, Step

DRIVERS = ("generic", "cylinder", "biaxial", "footing", "tunnel", "slope")
KERNELS = ("csfem", "fem")

GENERATORS = {
    "quarter_annulus": meshgen.quarter_annulus,
    "rectangle": meshgen.rectangle,
    "footing": meshgen.footing,
    "slope": meshgen.slope,
    "tunnel": meshgen.tunnel,
}


@dataclass(frozen=True)
class MeshSpec:
    generator: str | None = None
    args: dict = field(default_factory=dict)
    file: str | None = None

    def build(self, base_dir=None) -> Mesh:
        if self.file is not None:
            path = Path(self.file)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            return read_mesh(path)
        return GENERATORS[self.generator](**self.args)


@dataclass(frozen=True)
class MaterialSpec:
    """Material block; angles are kept in degrees as written."""

    id: int
    E: float
    nu: float
    c: float | None = None
    phi_deg: float = 0.0
    psi_deg: float | None = None
    H: float = 0.0
    gamma: float = 0.0

    @property
    def plastic(self) -> bool:
        return self.c is not None

    def to_material(self) -> Material:
        el = ElasticParams(self.E, self.nu)
        mc = None
        if self.plastic:
            psi = self.phi_deg if self.psi_deg is None else self.psi_deg
            mc = MohrCoulombParams(self.c, math.radians(self.phi_deg), math.radians(psi), self.H)
        return Material(el, mc, self.gamma)


@dataclass(frozen=True)
class BoundarySpec:
    set: str
    x: float | None = None
    y: float | None = None


@dataclass(frozen=True)
class StepSpec:
    name: str = "step"
    increments: int = 1
    gravity: float | None = None
    pressures: tuple = ()      # (set, value)
    tractions: tuple = ()      # (set, tx, ty)
    nodal: tuple = ()          # (set, fx, fy)
    displacements: tuple = ()  # (set, component, value)
    deactivate: tuple = ()
    activate: tuple = ()

    def to_step(self) -> Step:
        return Step(self.name, self.increments, self.gravity, list(self.pressures),
                    list(self.tractions), list(self.nodal), list(self.displacements),
                    list(self.deactivate), list(self.activate))


@dataclass(frozen=True)
class SolverSpec:
    kernel: str = "csfem"
    n_sc: int = 4
    tol_r: float = 1e-6
    max_iter: int = 50
    max_bisections: int = 4

    def settings(self) -> SolverSettings:
        return SolverSettings(self.tol_r, self.max_iter, self.max_bisections)


@dataclass(frozen=True)
class GeostaticSpec:
    mode: str = "k0"
    gravity: float = 1.0
    k0: float | None = None
    surface_y: float | None = None
    increments: int = 1


@dataclass(frozen=True)
class MonitorSpec:
    set: str
    component: str = "y"


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "results"
    formats: tuple = ("csv",)
    every_increment: bool = False
    log: str | None = "convergence.jsonl"


@dataclass(frozen=True)
class CaseDefinition:
    driver: str
    mesh: MeshSpec
    materials: tuple
    boundary: tuple = ()
    steps: tuple = ()
    solver: SolverSpec = SolverSpec()
    geostatic: GeostaticSpec | None = None
    initial_stress: tuple | None = None
    monitor: MonitorSpec | None = None
    output: OutputSpec = OutputSpec()
    options: dict = field(default_factory=dict)
    title: str = ""
    base_dir: str | None = field(default=None, compare=False)

    def build_mesh(self) -> Mesh:
        mesh = self.mesh.build(self.base_dir)
        self._check_sets(mesh)
        return mesh

    def _check_sets(self, mesh: Mesh):
        names = [("boundary", b.set) for b in self.boundary]
        for s in self.steps:
            names += [(f"step {s.name!r}", e[0]) for e in
                      (*s.pressures, *s.tractions, *s.nodal, *s.displacements)]
        if self.monitor is not None:
            names.append(("monitor", self.monitor.set))
        for where, name in names:
            if name not in mesh.node_sets:
                raise ConfigurationError(f"{where}: unknown node set {name!r}")
        for s in self.steps:
            for name in (*s.deactivate, *s.activate):
                if name not in mesh.element_sets:
                    raise ConfigurationError(f"step {s.name!r}: unknown element set {name!r}")

    def constraints(self, mesh: Mesh) -> dict:
        out = {}
        for b in self.boundary:
            nodes = mesh.node_set(b.set)
            if b.x is not None:
                out.update({2 * int(n): float(b.x) for n in nodes})
            if b.y is not None:
                out.update({2 * int(n) + 1: float(b.y) for n in nodes})
        return out

    def material_list(self):
        return [m.to_material() for m in sorted(self.materials, key=lambda m: m.id)]

    def build_model(self, mesh: Mesh | None = None, kernel: str | None = None, materials=None) -> Model:
        mesh = self.build_mesh() if mesh is None else mesh
        mats = self.material_list() if materials is None else materials
        return Model(mesh, mats, kernel or self.solver.kernel, self.solver.n_sc, self.constraints(mesh))


# ---------------------------------------------------------------- parsing

def _pop(table, key, where, kind=None, default=..., required=False):
    if key not in table:
        if required:
            raise ConfigurationError(f"[{where}]: missing required key {key!r}")
        return default
    v = table.pop(key)
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if kind is not None and not isinstance(v, kind) or (kind in (int, float) and isinstance(v, bool)):
        raise ConfigurationError(f"[{where}]: key {key!r} must be {kind.__name__}, got {v!r}")
    return v


def _no_extra(table, where):
    if table:
        raise ConfigurationError(f"[{where}]: unknown key(s) {', '.join(sorted(table))}")


def _table(doc, key, where):
    v = doc.pop(key, None)
    if v is None:
        return None
    if not isinstance(v, dict):
        raise ConfigurationError(f"[{where}]: {key!r} must be a table")
    return dict(v)


def _array(doc, key, where):
    v = doc.pop(key, [])
    if not isinstance(v, list) or not all(isinstance(x, dict) for x in v):
        raise ConfigurationError(f"[{where}]: {key!r} must be an array of tables")
    return [dict(x) for x in v]


def _parse_mesh(t):
    if t is None:
        raise ConfigurationError("[mesh]: block is required")
    gen = _pop(t, "generator", "mesh", str, None)
    path = _pop(t, "file", "mesh", str, None)
    args = _pop(t, "args", "mesh", dict, {})
    _no_extra(t, "mesh")
    if (gen is None) == (path is None):
        raise ConfigurationError("[mesh]: give exactly one of 'generator' or 'file'")
    if gen is not None:
        if gen not in GENERATORS:
            raise ConfigurationError(f"[mesh]: unknown generator {gen!r}; known: {', '.join(GENERATORS)}")
        params = inspect.signature(GENERATORS[gen]).parameters
        unknown = set(args) - set(params)
        if unknown:
            raise ConfigurationError(f"[mesh.args]: unknown argument(s) {', '.join(sorted(unknown))}")
        args = {k: float(v) if isinstance(v, int) and isinstance(params[k].default, float) else v
                for k, v in args.items()}
    return MeshSpec(gen, dict(args), path)


def _parse_material(t, k):
    where = f"material #{k + 1}"
    mid = _pop(t, "id", where, int, k)
    spec = MaterialSpec(
        mid,
        _pop(t, "E", where, float, required=True),
        _pop(t, "nu", where, float, required=True),
        _pop(t, "c", where, float, None),
        _pop(t, "phi_deg", where, float, 0.0),
        _pop(t, "psi_deg", where, float, None),
        _pop(t, "H", where, float, 0.0),
        _pop(t, "gamma", where, float, 0.0),
    )
    _no_extra(t, where)
    try:
        spec.to_material()
    except ValueError as exc:
        raise ConfigurationError(f"[{where}]: {exc}") from None
    return spec


def _parse_boundary(t, k):
    where = f"boundary #{k + 1}"
    spec = BoundarySpec(_pop(t, "set", where, str, required=True),
                        _pop(t, "x", where, float, None), _pop(t, "y", where, float, None))
    _no_extra(t, where)
    if spec.x is None and spec.y is None:
        raise ConfigurationError(f"[{where}]: constrain at least one of 'x', 'y'")
    return spec


def _entries(t, key, where, names):
    out = []
    for k, e in enumerate(_array(t, key, where)):
        w = f"{where}.{key} #{k + 1}"
        row = [_pop(e, "set", w, str, required=True)]
        for n in names:
            if n == "component":
                comp = _pop(e, n, w, str, required=True)
                if comp not in ("x", "y"):
                    raise ConfigurationError(f"[{w}]: component must be 'x' or 'y'")
                row.append(comp)
            else:
                row.append(_pop(e, n, w, float, 0.0 if n != "value" else ..., required=n == "value"))
        _no_extra(e, w)
        out.append(tuple(row))
    return tuple(out)


def _parse_step(t, k):
    name = _pop(t, "name", f"step #{k + 1}", str, f"step{k + 1}")
    where = f"step {name!r}"
    inc = _pop(t, "increments", where, int, 1)
    if inc < 1:
        raise ConfigurationError(f"[{where}]: increments must be >= 1")
    spec = StepSpec(
        name, inc, _pop(t, "gravity", where, float, None),
        _entries(t, "pressure", where, ["value"]),
        _entries(t, "traction", where, ["tx", "ty"]),
        _entries(t, "nodal", where, ["fx", "fy"]),
        _entries(t, "displacement", where, ["component", "value"]),
        tuple(_pop(t, "deactivate", where, list, [])),
        tuple(_pop(t, "activate", where, list, [])),
    )
    _no_extra(t, where)
    return spec


def _parse_solver(t):
    t = {} if t is None else t
    spec = SolverSpec(
        _pop(t, "kernel", "solver", str, "csfem"),
        _pop(t, "n_sc", "solver", int, 4),
        _pop(t, "tol_r", "solver", float, 1e-6),
        _pop(t, "max_iter", "solver", int, 50),
        _pop(t, "max_bisections", "solver", int, 4),
    )
    _no_extra(t, "solver")
    if spec.kernel not in KERNELS:
        raise ConfigurationError(f"[solver]: kernel must be one of {KERNELS}")
    if spec.n_sc not in (1, 2, 4):
        raise ConfigurationError("[solver]: n_sc must be 1, 2 or 4")
    if not spec.tol_r > 0 or spec.max_iter < 1 or spec.max_bisections < 0:
        raise ConfigurationError("[solver]: tol_r > 0, max_iter >= 1 and max_bisections >= 0 required")
    return spec


def _parse_geostatic(t):
    if t is None:
        return None
    spec = GeostaticSpec(
        _pop(t, "mode", "geostatic", str, "k0"),
        _pop(t, "gravity", "geostatic", float, 1.0),
        _pop(t, "k0", "geostatic", float, None),
        _pop(t, "surface_y", "geostatic", float, None),
        _pop(t, "increments", "geostatic", int, 1),
    )
    _no_extra(t, "geostatic")
    if spec.mode not in ("k0", "gravity"):
        raise ConfigurationError("[geostatic]: mode must be 'k0' or 'gravity'")
    return spec


def _parse_initial_stress(t):
    if t is None:
        return None
    out = tuple(_pop(t, k, "initial_stress", float, 0.0) for k in ("xx", "yy", "zz", "xy"))
    _no_extra(t, "initial_stress")
    return out


def _parse_monitor(t):
    if t is None:
        return None
    spec = MonitorSpec(_pop(t, "set", "monitor", str, required=True),
                       _pop(t, "component", "monitor", str, "y"))
    _no_extra(t, "monitor")
    if spec.component not in ("x", "y"):
        raise ConfigurationError("[monitor]: component must be 'x' or 'y'")
    return spec


def _parse_output(t):
    t = {} if t is None else t
    spec = OutputSpec(
        _pop(t, "directory", "output", str, "results"),
        tuple(_pop(t, "formats", "output", list, ["csv"])),
        _pop(t, "every_increment", "output", bool, False),
        _pop(t, "log", "output", str, "convergence.jsonl"),
    )
    _no_extra(t, "output")
    bad = set(spec.formats) - {"csv", "vtk"}
    if bad:
        raise ConfigurationError(f"[output]: unknown format(s) {', '.join(sorted(bad))}")
    return spec


def case_from_dict(doc: dict, base_dir=None) -> CaseDefinition:
    doc = dict(doc)
    driver = _pop(doc, "driver", "case", str, "generic")
    if driver not in DRIVERS:
        raise ConfigurationError(f"[case]: unknown driver {driver!r}; known: {', '.join(DRIVERS)}")
    title = _pop(doc, "title", "case", str, "")
    mesh = _parse_mesh(_table(doc, "mesh", "case"))
    materials = tuple(_parse_material(t, k) for k, t in enumerate(_array(doc, "material", "case")))
    if not materials:
        raise ConfigurationError("[material]: at least one material block is required")
    ids = sorted(m.id for m in materials)
    if ids != list(range(len(ids))):
        raise ConfigurationError(f"[material]: ids must be 0..{len(ids) - 1}, got {ids}")
    boundary = tuple(_parse_boundary(t, k) for k, t in enumerate(_array(doc, "boundary", "case")))
    steps = tuple(_parse_step(t, k) for k, t in enumerate(_array(doc, "step", "case")))
    solver = _parse_solver(_table(doc, "solver", "case"))
    geostatic = _parse_geostatic(_table(doc, "geostatic", "case"))
    initial = _parse_initial_stress(_table(doc, "initial_stress", "case"))
    monitor = _parse_monitor(_table(doc, "monitor", "case"))
    output = _parse_output(_table(doc, "output", "case"))
    options = _table(doc, "options", "case") or {}
    _no_extra(doc, "case")
    return CaseDefinition(driver, mesh, materials, boundary, steps, solver, geostatic, initial,
                          monitor, output, options, title,
                          None if base_dir is None else str(base_dir))


def parse_case(path) -> CaseDefinition:
    """Read and validate a case file; syntax errors report the line number."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: {exc.strerror}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: syntax error: {exc}") from None
    try:
        return case_from_dict(doc, path.parent)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def case_to_dict(case: CaseDefinition) -> dict:
    def clean(d):
        return {k: v for k, v in d.items() if v is not None}

    doc = {"driver": case.driver}
    if case.title:
        doc["title"] = case.title
    m = case.mesh
    doc["mesh"] = clean({"generator": m.generator, "file": m.file})
    if m.generator is not None and m.args:
        doc["mesh"]["args"] = dict(m.args)
    doc["material"] = [clean({f.name: getattr(s, f.name) for f in fields(s)}) for s in case.materials]
    if case.boundary:
        doc["boundary"] = [clean({"set": b.set, "x": b.x, "y": b.y}) for b in case.boundary]
    doc["solver"] = {f.name: getattr(case.solver, f.name) for f in fields(case.solver)}
    if case.geostatic is not None:
        doc["geostatic"] = clean({f.name: getattr(case.geostatic, f.name) for f in fields(case.geostatic)})
    if case.initial_stress is not None:
        doc["initial_stress"] = dict(zip(("xx", "yy", "zz", "xy"), case.initial_stress))
    if case.monitor is not None:
        doc["monitor"] = {"set": case.monitor.set, "component": case.monitor.component}
    o = case.output
    doc["output"] = clean({"directory": o.directory, "formats": list(o.formats),
                           "every_increment": o.every_increment, "log": o.log})
    if case.options:
        doc["options"] = dict(case.options)
    steps = []
    for s in case.steps:
        t = {"name": s.name, "increments": s.increments}
        if s.gravity is not None:
            t["gravity"] = s.gravity
        if s.pressures:
            t["pressure"] = [{"set": a, "value": v} for a, v in s.pressures]
        if s.tractions:
            t["traction"] = [{"set": a, "tx": x, "ty": y} for a, x, y in s.tractions]
        if s.nodal:
            t["nodal"] = [{"set": a, "fx": x, "fy": y} for a, x, y in s.nodal]
        if s.displacements:
            t["displacement"] = [{"set": a, "component": c, "value": v} for a, c, v in s.displacements]
        if s.deactivate:
            t["deactivate"] = list(s.deactivate)
        if s.activate:
            t["activate"] = list(s.activate)
        steps.append(t)
    if steps:
        doc["step"] = steps
    return doc


def write_case(case: CaseDefinition, path) -> None:
    Path(path).write_text(tomli_w.dumps(case_to_dict(case)))


def shipped_case_path(name: str) -> Path:
    path = Path(__file__).parent / "cases" / f"{name}.toml"
    if not path.exists():
        known = sorted(p.stem for p in path.parent.glob("*.toml"))
        raise ConfigurationError(f"no shipped case {name!r}; known: {', '.join(known)}")
    return path


def shipped_case(name: str) -> CaseDefinition:
    return parse_case(shipped_case_path(name))


# ---------------------------------------------------------------- export

def cell_fields(model: Model, state) -> dict:
    """Per-element averages over integration points, weighted by point area."""
    w = model.w
    ws = w / w.sum(axis=1, keepdims=True)
    stress = np.einsum("ep,epk->ek", ws, state.stress.reshape(model.ne, model.npe, 4))
    ep = state.plastic_strain.reshape(model.ne, model.npe, 4)
    # equivalent plastic strain from the deviatoric part, shear stored as engineering strain
    e = ep[..., :3] - ep[..., :3].mean(axis=-1, keepdims=True)
    eq = np.sqrt(2.0 / 3.0 * (np.sum(e * e, axis=-1) + 0.5 * ep[..., 3] ** 2))
    eq_cell = np.einsum("ep,ep->e", ws, eq)
    yielded = state.yielded.reshape(model.ne, model.npe).any(axis=1)
    return {"stress": stress, "plastic_strain": eq_cell, "yielded": yielded.astype(int),
            "active": state.active.astype(int)}


def _fmt(x) -> str:
    return repr(float(x))


def export_fields(model: Model, state, path, fmt: str = "vtk") -> list[Path]:
    """Write nodal displacements and cell fields.

    ``fmt="vtk"`` writes a legacy ASCII unstructured grid to ``path``;
    ``fmt="csv"`` writes ``<stem>_nodes.csv`` and ``<stem>_cells.csv``.
    """
    mesh = model.mesh
    path = Path(path)
    cf = cell_fields(model, state)
    u = state.d.reshape(-1, 2)
    if fmt in ("vtk", "vtk_legacy_ascii"):
        lines = ["# vtk DataFile Version 4.2", "geosmooth result", "ASCII", "DATASET UNSTRUCTURED_GRID",
                 f"POINTS {mesh.n_nodes} double"]
        lines += [f"{_fmt(x)} {_fmt(y)} 0.0" for x, y in mesh.coords]
        lines.append(f"CELLS {mesh.n_elements} {5 * mesh.n_elements}")
        lines += ["4 " + " ".join(str(int(n)) for n in conn) for conn in mesh.connectivity]
        lines.append(f"CELL_TYPES {mesh.n_elements}")
        lines += ["9"] * mesh.n_elements
        lines += [f"POINT_DATA {mesh.n_nodes}", "VECTORS displacement double"]
        lines += [f"{_fmt(a)} {_fmt(b)} 0.0" for a, b in u]
        lines.append(f"CELL_DATA {mesh.n_elements}")
        for k, name in enumerate(("stress_xx", "stress_yy", "stress_zz", "stress_xy")):
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [_fmt(v) for v in cf["stress"][:, k]]
        lines += ["SCALARS plastic_strain double 1", "LOOKUP_TABLE default"]
        lines += [_fmt(v) for v in cf["plastic_strain"]]
        for name in ("yielded", "active"):
            lines += [f"SCALARS {name} int 1", "LOOKUP_TABLE default"]
            lines += [str(int(v)) for v in cf[name]]
        try:
            path.write_text("\n".join(lines) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from exc
        return [path]
    if fmt == "csv":
        nodes = path.with_name(path.stem + "_nodes.csv")
        cells = path.with_name(path.stem + "_cells.csv")
        with open(nodes, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["node", "x", "y", "ux", "uy"])
            for i, ((x, y), (a, b)) in enumerate(zip(mesh.coords, u)):
                w.writerow([i, _fmt(x), _fmt(y), _fmt(a), _fmt(b)])
        with open(cells, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["cell", "stress_xx", "stress_yy", "stress_zz", "stress_xy",
                        "plastic_strain", "yielded", "active"])
            for e in range(mesh.n_elements):
                s = cf["stress"][e]
                w.writerow([e, *map(_fmt, s), _fmt(cf["plastic_strain"][e]),
                            int(cf["yielded"][e]), int(cf["active"][e])])
        return [nodes, cells]
    raise ConfigurationError(f"unknown export format {fmt!r}")


def write_curve(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in r])
    return path


def read_vtk(path) -> dict:
    """Minimal reader for the legacy ASCII files written here.

    Returns points, cells, cell types and the point/cell data arrays; raises
    :class:`ConfigurationError` on any structural inconsistency.
    """
    tokens = Path(path).read_text().split("\n")
    if not tokens[0].startswith("# vtk DataFile Version"):
        raise ConfigurationError("missing VTK header")
    if tokens[2].strip() != "ASCII" or tokens[3].strip() != "DATASET UNSTRUCTURED_GRID":
        raise ConfigurationError("only ASCII unstructured grids are supported")
    words = " ".join(tokens[4:]).split()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(words):
            raise ConfigurationError("unexpected end of file")
        out = words[pos:pos + n]
        pos += n
        return out

    out = {"point_data": {}, "cell_data": {}}
    section = None
    while pos < len(words):
        key = take(1)[0]
        if key == "POINTS":
            n, _ = int(take(1)[0]), take(1)
            out["points"] = np.array(take(3 * n), dtype=float).reshape(n, 3)
        elif key == "CELLS":
            n, size = int(take(1)[0]), int(take(1)[0])
            raw = np.array(take(size), dtype=np.int64)
            cells, k = [], 0
            while k < size:
                m = raw[k]
                cells.append(raw[k + 1:k + 1 + m])
                k += m + 1
            if len(cells) != n:
                raise ConfigurationError("cell count mismatch")
            out["cells"] = np.array(cells)
        elif key == "CELL_TYPES":
            n = int(take(1)[0])
            out["cell_types"] = np.array(take(n), dtype=int)
        elif key in ("POINT_DATA", "CELL_DATA"):
            section = ("point_data" if key == "POINT_DATA" else "cell_data", int(take(1)[0]))
        elif key == "VECTORS":
            name, _ = take(2)
            out[section[0]][name] = np.array(take(3 * section[1]), dtype=float).reshape(-1, 3)
        elif key == "SCALARS":
            name, dtype, ncomp = take(3)
            if take(2) != ["LOOKUP_TABLE", "default"]:
                raise ConfigurationError(f"scalar {name}: expected default lookup table")
            arr = np.array(take(int(ncomp) * section[1]), dtype=float)
            out[section[0]][name] = arr.astype(int) if dtype == "int" else arr
        else:
            raise ConfigurationError(f"unexpected keyword {key!r}")
    npts = len(out.get("points", []))
    if "cells" in out and out["cells"].size and out["cells"].max() >= npts:
        raise ConfigurationError("cell references a missing point")
    return out
