"""Structured quadrilateral mesh generators for the benchmark geometries.

Meshes are assembled from transfinite (Coons) blocks; coincident nodes of
neighbouring blocks are merged.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError
from .mesh import Mesh


def graded(a, b, n, ratio=1.0):
    """``n + 1`` points from ``a`` to ``b``; consecutive spacings grow by ``ratio``."""
    if n < 1:
        raise ConfigurationError("need at least one division")
    if abs(ratio - 1.0) < 1e-12:
        w = np.arange(n + 1) / n
    else:
        steps = ratio ** np.arange(n)
        w = np.concatenate([[0.0], np.cumsum(steps)]) / steps.sum()
    return a + (b - a) * w


def line(p, q):
    p, q = np.asarray(p, float), np.asarray(q, float)
    return lambda t: p[None] + np.asarray(t)[:, None] * (q - p)[None]


def arc(centre, radius, a0, a1):
    centre = np.asarray(centre, float)

    def f(t):
        ang = a0 + np.asarray(t) * (a1 - a0)
        return centre[None] + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return f


def block(bottom, right, top, left, u, v):
    """Coons patch nodes, shape (len(v), len(u), 2).

    ``bottom``/``top`` run in the u direction, ``left``/``right`` in v; all
    curves map [0, 1] to points and must meet at the corners.
    """
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    B, T = bottom(u), top(u)
    L, R = left(v), right(v)
    P00, P10, P01, P11 = B[0], B[-1], T[0], T[-1]
    U = u[None, :, None]
    V = v[:, None, None]
    X = ((1 - V) * B[None] + V * T[None] + (1 - U) * L[:, None] + U * R[:, None]
         - ((1 - U) * (1 - V) * P00 + U * (1 - V) * P10 + (1 - U) * V * P01 + U * V * P11))
    return X


def _grid_connectivity(ny, nx, offset):
    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    n0 = offset + j * (nx + 1) + i
    return np.stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1], axis=-1).reshape(-1, 4)


def merge_blocks(grids, tol=1e-9):
    """Stack node grids into one mesh, merging coincident nodes."""
    coords, conn, offset = [], [], 0
    for X in grids:
        ny, nx = X.shape[0] - 1, X.shape[1] - 1
        coords.append(X.reshape(-1, 2))
        conn.append(_grid_connectivity(ny, nx, offset))
        offset += (ny + 1) * (nx + 1)
    return _merge_coincident(np.concatenate(coords), np.concatenate(conn), tol)


def _merge_coincident(coords, conn, tol=1e-9):
    """Renumber so coincident nodes share the lowest id; drop unused nodes."""
    scale = max(1.0, float(np.abs(coords).max()))
    rep = np.arange(len(coords))

    def root(k):
        while rep[k] != k:
            k = rep[k]
        return k
    for i, j in cKDTree(coords).query_pairs(tol * scale):
        a, b = root(i), root(j)
        if a != b:
            rep[max(a, b)] = min(a, b)
    rep = np.array([root(k) for k in range(len(rep))])
    return _compact(coords, rep[conn])


def _sets_by(coords, **predicates):
    return {name: np.flatnonzero(pred(coords[:, 0], coords[:, 1])) for name, pred in predicates.items()}


def _orient(coords, conn):
    x, y = coords[conn, 0], coords[conn, 1]
    area = 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)
    conn = conn.copy()
    flip = area < 0
    conn[flip] = conn[flip][:, ::-1]
    return conn


def quarter_annulus(r_inner=1.0, r_outer=2.0, h=0.125) -> Mesh:
    """Polar-grid quarter annulus in the first quadrant with element size ``h``."""
    nr = max(1, int(round((r_outer - r_inner) / h)))
    nt = max(1, int(round(0.5 * math.pi * 0.5 * (r_inner + r_outer) / h)))
    r = np.linspace(r_inner, r_outer, nr + 1)
    t = np.linspace(0.0, 0.5 * math.pi, nt + 1)
    T, R = np.meshgrid(t, r, indexing="ij")
    X = np.stack([R * np.cos(T), R * np.sin(T)], axis=-1)
    # exact endpoints on the symmetry axes
    X[-1, :, 0] = 0.0
    X[0, :, 1] = 0.0
    coords = X.reshape(-1, 2)
    conn = _orient(coords, _grid_connectivity(nt, nr, 0))
    tol = 1e-9 * r_outer
    rad = np.hypot(coords[:, 0], coords[:, 1])
    nsets = {
        "inner": np.flatnonzero(np.abs(rad - r_inner) < tol),
        "outer": np.flatnonzero(np.abs(rad - r_outer) < tol),
        "xaxis": np.flatnonzero(np.abs(coords[:, 1]) < tol),
        "yaxis": np.flatnonzero(np.abs(coords[:, 0]) < tol),
    }
    return Mesh(coords, conn, nsets, {"all": np.arange(len(conn))})


def rectangle_grid(xs, ys, extra_sets=None) -> Mesh:
    """Tensor-product mesh on node coordinates ``xs`` times ``ys``."""
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    Y, X = np.meshgrid(ys, xs, indexing="ij")
    coords = np.stack([X, Y], axis=-1).reshape(-1, 2)
    conn = _grid_connectivity(len(ys) - 1, len(xs) - 1, 0)
    tol = 1e-9 * max(1.0, np.abs(coords).max())
    x0, x1, y0, y1 = xs[0], xs[-1], ys[0], ys[-1]
    nsets = _sets_by(
        coords,
        left=lambda x, y: np.abs(x - x0) < tol,
        right=lambda x, y: np.abs(x - x1) < tol,
        bottom=lambda x, y: np.abs(y - y0) < tol,
        top=lambda x, y: np.abs(y - y1) < tol,
    )
    nsets["corner_top_left"] = np.intersect1d(nsets["top"], nsets["left"])
    nsets["corner_top_right"] = np.intersect1d(nsets["top"], nsets["right"])
    if extra_sets:
        nsets.update(_sets_by(coords, **extra_sets))
    return Mesh(coords, conn, nsets, {"all": np.arange(len(conn))})


def rectangle(width=1.0, height=2.0, nx=2, ny=4, x0=0.0, y0=0.0) -> Mesh:
    return rectangle_grid(np.linspace(x0, x0 + width, nx + 1), np.linspace(y0, y0 + height, ny + 1))


def footing(half_width=1.0, width=10.0, depth=10.0, n_footing=10, nx_far=20, ny=24,
            ratio=1.12) -> Mesh:
    """Half-space under a strip footing, symmetry line at x = 0, surface at y = 0.

    The footing half-width is meshed uniformly; spacing grows geometrically
    away from the footing edge and with depth.
    """
    xs_far = graded(half_width, width, nx_far, ratio)
    xs = np.concatenate([np.linspace(0.0, half_width, n_footing + 1), xs_far[1:]])
    ys = -graded(0.0, depth, ny, ratio)[::-1]
    tol = 1e-9 * width
    mesh = rectangle_grid(xs, ys, {
        "footing": lambda x, y: (np.abs(y) < tol) & (x <= half_width + tol),
    })
    mesh.node_sets["footing_edge"] = np.flatnonzero(
        (np.abs(mesh.coords[:, 1]) < tol) & (np.abs(mesh.coords[:, 0] - half_width) < tol))
    mesh.node_sets["centre"] = np.flatnonzero(
        (np.abs(mesh.coords[:, 1]) < tol) & (np.abs(mesh.coords[:, 0]) < tol))
    return mesh


def slope(height=10.0, angle_deg=45.0, foundation=5.0, toe_distance=15.0, crest_distance=20.0,
          h=1.0) -> Mesh:
    """Homogeneous slope on a foundation layer.

    The base lies at y = 0, the toe at ``(toe_distance, foundation)`` and the
    crest at ``(toe_distance + height / tan(angle), foundation + height)``.
    The soil above the foundation is one trapezoidal block whose left edge
    is the slope face.
    """
    run = height / math.tan(math.radians(angle_deg))
    x_toe, x_crest = toe_distance, toe_distance + run
    x_end = x_crest + crest_distance
    yf, yt = foundation, foundation + height
    n_toe = max(1, round(toe_distance / h))
    n_right = max(1, round((x_end - x_toe) / h))
    n_f = max(1, round(foundation / h))
    n_h = max(1, round(math.hypot(run, height) / h))
    u_toe = np.linspace(0.0, 1.0, n_toe + 1)
    u_right = np.linspace(0.0, 1.0, n_right + 1)
    v_f = np.linspace(0.0, 1.0, n_f + 1)
    blocks = [
        block(line((0, 0), (x_toe, 0)), line((x_toe, 0), (x_toe, yf)),
              line((0, yf), (x_toe, yf)), line((0, 0), (0, yf)), u_toe, v_f),
        block(line((x_toe, 0), (x_end, 0)), line((x_end, 0), (x_end, yf)),
              line((x_toe, yf), (x_end, yf)), line((x_toe, 0), (x_toe, yf)), u_right, v_f),
        block(line((x_toe, yf), (x_end, yf)), line((x_end, yf), (x_end, yt)),
              line((x_crest, yt), (x_end, yt)), line((x_toe, yf), (x_crest, yt)),
              u_right, np.linspace(0.0, 1.0, n_h + 1)),
    ]
    coords, conn = merge_blocks(blocks)
    conn = _orient(coords, conn)
    tol = 1e-6 * h
    x, y = coords[:, 0], coords[:, 1]
    on_face = np.abs((y - yf) * run - (x - x_toe) * height) < tol * max(run, height)
    nsets = {
        "base": np.flatnonzero(np.abs(y) < tol),
        "left": np.flatnonzero(np.abs(x) < tol),
        "right": np.flatnonzero(np.abs(x - x_end) < tol),
        "crest": np.flatnonzero((np.abs(x - x_crest) < tol) & (np.abs(y - yt) < tol)),
        "toe": np.flatnonzero((np.abs(x - x_toe) < tol) & (np.abs(y - yf) < tol)),
        "face": np.flatnonzero(on_face & (y >= yf - tol) & (y <= yt + tol)),
    }
    return Mesh(coords, conn, nsets, {"all": np.arange(len(conn))})


def _compact(coords, conn):
    used = np.unique(conn)
    new_id = np.full(len(coords), -1)
    new_id[used] = np.arange(len(used))
    return coords[used], new_id[conn]


def tunnel(radius=1.0, half_width=10.0, top=6.0, bottom=-10.0, n_inner=8, n_ring=6,
           n_out=10, n_far=8, inner_half=0.5, box=3.0, ratio=1.15, slices=5) -> Mesh:
    """Circular tunnel of ``radius`` centred at the origin inside a rectangular box.

    O-grid: a square core and four ring blocks fill the tunnel, four blocks
    connect the circle to a square of half-size ``box``, and a tensor grid
    covers the rest of ``[-half_width, half_width] x [bottom, top]``.
    Element sets ``stage1`` .. ``stage<slices>`` split the tunnel into
    horizontal slices of equal thickness from the crown down.
    """
    if not inner_half < radius / math.sqrt(2) < box:
        raise ConfigurationError("tunnel O-grid proportions are inconsistent")
    s, L = inner_half, box
    uni = np.linspace(0.0, 1.0, n_inner + 1)
    grids = [block(line((-s, -s), (s, -s)), line((s, -s), (s, s)), line((-s, s), (s, s)),
                   line((-s, -s), (-s, s)), uni, uni)]
    ring_v = np.linspace(0.0, 1.0, n_ring + 1)
    out_v = graded(0.0, 1.0, n_out, ratio)
    q = math.pi / 4
    sides = [  # (square side from, to) counterclockwise, arc start angle
        ((s, -s), (s, s), (L, -L), (L, L), -q),
        ((s, s), (-s, s), (L, L), (-L, L), q),
        ((-s, s), (-s, -s), (-L, L), (-L, -L), 3 * q),
        ((-s, -s), (s, -s), (-L, -L), (L, -L), 5 * q),
    ]
    for a, b, A, Bq, ang in sides:
        circ = arc((0, 0), radius, ang, ang + 2 * q)
        ca, cb = circ(np.array([0.0]))[0], circ(np.array([1.0]))[0]
        # u runs along the side, v outward
        grids.append(block(line(a, b), line(b, cb), circ, line(a, ca), uni, ring_v))
        grids.append(block(circ, line(cb, Bq), line(A, Bq), line(ca, A), uni, out_v))
    xs = np.concatenate([-graded(L, half_width, n_far, ratio)[::-1], np.linspace(-L, L, n_inner + 1)[1:-1],
                         graded(L, half_width, n_far, ratio)])
    ys_low = -graded(L, -bottom, n_far, ratio)[::-1]
    ys_high = graded(L, top, n_far, ratio) if top > L + 1e-9 else np.array([L])
    ys = np.concatenate([ys_low, np.linspace(-L, L, n_inner + 1)[1:-1], ys_high])
    Yg, Xg = np.meshgrid(ys, xs, indexing="ij")
    frame = np.stack([Xg, Yg], axis=-1)
    coords_b, conn_b = merge_blocks(grids)
    fc = frame.reshape(-1, 2)
    fconn = _grid_connectivity(len(ys) - 1, len(xs) - 1, 0)
    centre = fc[fconn].mean(axis=1)
    outside = (np.abs(centre[:, 0]) > L) | (np.abs(centre[:, 1]) > L)
    coords_all = np.concatenate([coords_b, fc])
    conn_all = np.concatenate([conn_b, fconn[outside] + len(coords_b)])
    coords, conn = _merge_coincident(coords_all, conn_all)
    conn = _orient(coords, conn)

    tol = 1e-9 * half_width
    x, y = coords[:, 0], coords[:, 1]
    elem_c = coords[conn].mean(axis=1)
    inside = np.hypot(elem_c[:, 0], elem_c[:, 1]) < radius
    thick = 2.0 * radius / slices
    esets = {"tunnel": np.flatnonzero(inside), "all": np.arange(len(conn))}
    for k in range(slices):
        hi = radius - k * thick
        lo = hi - thick
        band = (elem_c[:, 1] <= hi + 1e-12) & (elem_c[:, 1] > lo + 1e-12)
        if k == slices - 1:
            band = elem_c[:, 1] <= hi + 1e-12
        esets[f"stage{k + 1}"] = np.flatnonzero(inside & band)
    nsets = {
        "left": np.flatnonzero(np.abs(x + half_width) < tol),
        "right": np.flatnonzero(np.abs(x - half_width) < tol),
        "bottom": np.flatnonzero(np.abs(y - bottom) < tol),
        "top": np.flatnonzero(np.abs(y - top) < tol),
        "crown": np.flatnonzero((np.abs(x) < tol) & (np.abs(y - radius) < 1e-9)),
        "invert": np.flatnonzero((np.abs(x) < tol) & (np.abs(y + radius) < 1e-9)),
    }
    return Mesh(coords, conn, nsets, esets)
