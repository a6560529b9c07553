"""Quadrilateral meshes and cell-based smoothing domains."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, GeometryError

SUBCELL_COUNTS = (1, 2, 4)


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Quad4Element:
    id: int
    node_ids: tuple
    active: bool = True
    material_id: int = 0

    def __post_init__(self):
        if len(self.node_ids) != 4 or len(set(self.node_ids)) != 4:
            raise GeometryError(f"element {self.id}: needs 4 distinct nodes, got {self.node_ids}")


@dataclass(frozen=True)
class SmoothingCell:
    parent_element: int
    vertices: np.ndarray              # (nv, 2), counterclockwise
    vertex_shape_values: np.ndarray   # (nv, 4)
    edges: tuple                      # (start, end, normal, length) per edge
    area: float
    boundary_shape_values: np.ndarray  # (nv, 4), at edge midpoints


class Mesh:
    """Nodes, quad connectivity and named node/element sets."""

    def __init__(self, coords, connectivity, node_sets=None, element_sets=None,
                 material_ids=None, active=None):
        self.coords = np.ascontiguousarray(coords, dtype=float)
        self.connectivity = np.ascontiguousarray(connectivity, dtype=np.int64)
        ne = len(self.connectivity)
        self.material_ids = (np.zeros(ne, dtype=np.int64) if material_ids is None
                             else np.asarray(material_ids, dtype=np.int64))
        self.initially_active = (np.ones(ne, dtype=bool) if active is None
                                 else np.asarray(active, dtype=bool))
        self.node_sets = {k: np.asarray(sorted(set(map(int, v))), dtype=np.int64)
                          for k, v in (node_sets or {}).items()}
        self.element_sets = {k: np.asarray(sorted(set(map(int, v))), dtype=np.int64)
                             for k, v in (element_sets or {}).items()}
        self._validate()

    def _validate(self):
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise GeometryError("coordinates must be an (n, 2) array")
        if not np.all(np.isfinite(self.coords)):
            raise GeometryError("non-finite nodal coordinates")
        nn = len(self.coords)
        if self.connectivity.size and (self.connectivity.min() < 0 or self.connectivity.max() >= nn):
            raise GeometryError("element references a missing node")
        for name, members in self.node_sets.items():
            if members.size and (members.min() < 0 or members.max() >= nn):
                raise GeometryError(f"node set {name!r} has out-of-range members")
        for name, members in self.element_sets.items():
            if members.size and (members.min() < 0 or members.max() >= self.n_elements):
                raise GeometryError(f"element set {name!r} has out-of-range members")

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def n_elements(self) -> int:
        return len(self.connectivity)

    @property
    def nodes(self) -> list[Node]:
        return [Node(i, float(x), float(y)) for i, (x, y) in enumerate(self.coords)]

    @property
    def elements(self) -> list[Quad4Element]:
        return [Quad4Element(i, tuple(int(n) for n in conn), bool(self.initially_active[i]),
                             int(self.material_ids[i]))
                for i, conn in enumerate(self.connectivity)]

    def element_coords(self, e=None) -> np.ndarray:
        if e is None:
            return self.coords[self.connectivity]
        return self.coords[self.connectivity[e]]

    def element_areas(self) -> np.ndarray:
        return polygon_area(self.element_coords())

    def node_set(self, name) -> np.ndarray:
        try:
            return self.node_sets[name]
        except KeyError:
            raise ConfigurationError(f"unknown node set {name!r}") from None

    def element_set(self, name) -> np.ndarray:
        try:
            return self.element_sets[name]
        except KeyError:
            raise ConfigurationError(f"unknown element set {name!r}") from None

    def boundary_edges(self, node_ids, active=None) -> list[tuple[int, int, int]]:
        """Element edges lying on the mesh boundary with both ends in ``node_ids``.

        Returns ``(element, local_start, local_end)`` triples.  Only edges of
        active elements are considered, and an edge shared by two active
        elements is interior.
        """
        members = set(int(n) for n in node_ids)
        active = self.initially_active if active is None else active
        count = {}
        for e in np.flatnonzero(active):
            conn = self.connectivity[e]
            for k in range(4):
                a, b = int(conn[k]), int(conn[(k + 1) % 4])
                key = (min(a, b), max(a, b))
                count[key] = count.get(key, 0) + 1
        out = []
        for e in np.flatnonzero(active):
            conn = self.connectivity[e]
            for k in range(4):
                a, b = int(conn[k]), int(conn[(k + 1) % 4])
                if a in members and b in members and count[(min(a, b), max(a, b))] == 1:
                    out.append((int(e), k, (k + 1) % 4))
        return out


def polygon_area(pts) -> np.ndarray:
    """Signed shoelace area of polygons stored along the second-to-last axis."""
    x, y = pts[..., 0], pts[..., 1]
    return 0.5 * np.sum(x * np.roll(y, -1, axis=-1) - np.roll(x, -1, axis=-1) * y, axis=-1)


def element_centroid_and_midpoints(coords):
    """Arithmetic centroid and the midpoints of edges 1-2, 2-3, 3-4, 4-1."""
    pts = np.asarray(coords, dtype=float)
    centroid = pts.mean(axis=0)
    mids = 0.5 * (pts + np.roll(pts, -1, axis=0))
    return centroid, mids


_E = np.eye(4)
_MID = [0.5 * (_E[k] + _E[(k + 1) % 4]) for k in range(4)]   # sites 5-8
_CENTRE = np.full(4, 0.25)                                    # site 9


def _templates():
    # vertex shape values per subcell; every vertex is an isoparametric site
    # so its position is the shape-weighted sum of the element corners
    return {
        1: np.array([[_E[0], _E[1], _E[2], _E[3]]]),
        2: np.array([
            [_E[0], _E[1], _MID[1], _MID[3]],
            [_MID[3], _MID[1], _E[2], _E[3]],
        ]),
        4: np.array([
            [_E[0], _MID[0], _CENTRE, _MID[3]],
            [_MID[0], _E[1], _MID[1], _CENTRE],
            [_CENTRE, _MID[1], _E[2], _MID[2]],
            [_MID[3], _CENTRE, _MID[2], _E[3]],
        ]),
    }


SUBCELL_TEMPLATES = _templates()


def _check_count(n_sc):
    if n_sc not in SUBCELL_TEMPLATES:
        raise ConfigurationError(f"subcell count must be one of {SUBCELL_COUNTS}, got {n_sc}")


def build_subcells(element: Quad4Element | int, coords, n_sc: int = 4) -> list[SmoothingCell]:
    _check_count(n_sc)
    pts = np.asarray(coords, dtype=float)
    eid = element.id if isinstance(element, Quad4Element) else int(element)
    if polygon_area(pts) <= 0:
        raise GeometryError(f"element {eid} has non-positive area")
    cells = []
    for vals in SUBCELL_TEMPLATES[n_sc]:
        verts = vals @ pts
        area = float(polygon_area(verts))
        if area <= 0:
            raise GeometryError(f"element {eid} produces a degenerate smoothing cell")
        mid_vals = 0.5 * (vals + np.roll(vals, -1, axis=0))
        edges = []
        for k in range(len(verts)):
            a, b = verts[k], verts[(k + 1) % len(verts)]
            d = b - a
            length = float(np.hypot(d[0], d[1]))
            normal = np.array([d[1], -d[0]]) / length
            edges.append((a.copy(), b.copy(), normal, length))
        cells.append(SmoothingCell(eid, verts, vals.copy(), tuple(edges), area, mid_vals))
    return cells


def subcell_geometry(elem_coords, n_sc: int = 4):
    """Vectorised subcell data for many elements.

    Returns ``(areas, bx, by, centres, centre_shape)`` with shapes
    ``(ne, n_sc)``, ``(ne, n_sc, 4)``, ``(ne, n_sc, 4)``, ``(ne, n_sc, 2)``
    and ``(ne, n_sc, 4)``; ``bx``/``by`` are the smoothed shape-function
    derivatives of the four nodes.
    """
    _check_count(n_sc)
    T = SUBCELL_TEMPLATES[n_sc]                          # (nsc, nv, 4)
    verts = np.einsum("svk,ekd->esvd", T, elem_coords)    # (ne, nsc, nv, 2)
    areas = polygon_area(verts)
    if np.any(areas <= 0):
        bad = np.flatnonzero(np.any(areas <= 0, axis=1))
        raise GeometryError(f"degenerate smoothing cells in elements {bad[:10].tolist()}")
    mid = 0.5 * (T + np.roll(T, -1, axis=1))              # (nsc, nv, 4)
    d = np.roll(verts, -1, axis=2) - verts               # edge vectors
    # outward normal times length is (dy, -dx) for counterclockwise cells
    bx = np.einsum("esv,svk->esk", d[..., 1], mid) / areas[..., None]
    by = -np.einsum("esv,svk->esk", d[..., 0], mid) / areas[..., None]
    x, y = verts[..., 0], verts[..., 1]
    cross = x * np.roll(y, -1, axis=-1) - np.roll(x, -1, axis=-1) * y
    cx = np.sum((x + np.roll(x, -1, axis=-1)) * cross, axis=-1) / (6 * areas)
    cy = np.sum((y + np.roll(y, -1, axis=-1)) * cross, axis=-1) / (6 * areas)
    centre_shape = np.broadcast_to(T.mean(axis=1), areas.shape + (4,)).copy()
    return areas, bx, by, np.stack([cx, cy], axis=-1), centre_shape


# ---------------------------------------------------------------- mesh files

def read_mesh(path) -> Mesh:
    """Parse the plain-text mesh format (NODES / ELEMENTS / NSET / ELSET blocks)."""
    nodes, elems, mats = {}, {}, {}
    nsets, esets = {}, {}
    block, target = None, None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        head = parts[0].upper()
        if head in ("NODES", "ELEMENTS"):
            block, target = head, None
            continue
        if head in ("NSET", "ELSET"):
            if len(parts) != 2:
                raise ConfigurationError(f"{path}:{lineno}: {head} needs exactly one name")
            block = head
            target = (nsets if head == "NSET" else esets).setdefault(parts[1], [])
            continue
        try:
            if block == "NODES":
                nodes[int(parts[0])] = (float(parts[1]), float(parts[2]))
            elif block == "ELEMENTS":
                if len(parts) not in (5, 6):
                    raise ValueError("expected 'id n1 n2 n3 n4 [material]'")
                eid = int(parts[0])
                elems[eid] = tuple(int(p) for p in parts[1:5])
                mats[eid] = int(parts[5]) if len(parts) == 6 else 0
            elif block in ("NSET", "ELSET"):
                target.extend(int(p) for p in parts)
            else:
                raise ValueError("data outside of a block")
        except (ValueError, IndexError) as exc:
            raise ConfigurationError(f"{path}:{lineno}: {exc}") from None
    for label, table in (("node", nodes), ("element", elems)):
        if sorted(table) != list(range(len(table))):
            raise ConfigurationError(f"{path}: {label} ids must be contiguous from 0")
    coords = np.array([nodes[i] for i in range(len(nodes))]).reshape(-1, 2)
    conn = np.array([elems[i] for i in range(len(elems))], dtype=np.int64).reshape(-1, 4)
    return Mesh(coords, conn, nsets, esets, [mats[i] for i in range(len(elems))])


def write_mesh(mesh: Mesh, path) -> None:
    lines = ["NODES"]
    lines += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(mesh.coords.tolist())]
    lines.append("ELEMENTS")
    for i, conn in enumerate(mesh.connectivity.tolist()):
        lines.append(f"{i} {conn[0]} {conn[1]} {conn[2]} {conn[3]} {int(mesh.material_ids[i])}")
    for kind, sets in (("NSET", mesh.node_sets), ("ELSET", mesh.element_sets)):
        for name in sorted(sets):
            lines.append(f"{kind} {name}")
            members = sets[name].tolist()
            for k in range(0, len(members), 12):
                lines.append(" ".join(str(m) for m in members[k:k + 12]))
    Path(path).write_text("\n".join(lines) + "\n")
