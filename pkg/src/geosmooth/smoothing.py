"""Smoothed strain-displacement operators and stiffness contributions.

A smoothed operator maps the 8 element displacements ``(u1, v1, ..., u4, v4)``
to the cell-averaged strain ``(eps_xx, eps_yy, gamma_xy)``.  The compatible
2x2 Gauss quadrilateral used by the ``fem`` kernel lives here as well.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, GeometryError, NumericError
from .mesh import SmoothingCell, subcell_geometry


@dataclass(frozen=True)
class SmoothedBOperator:
    subcell_id: int
    entries: np.ndarray   # (3, 8)


@dataclass(frozen=True)
class SubcellStiffness:
    subcell_id: int
    entries: np.ndarray   # (8, 8)
    area: float


def b_matrix(bx, by) -> np.ndarray:
    """Assemble (..., 3, 8) strain operators from nodal derivative arrays (..., 4)."""
    bx = np.asarray(bx)
    by = np.asarray(by)
    B = np.zeros(bx.shape[:-1] + (3, 8))
    B[..., 0, 0::2] = bx
    B[..., 1, 1::2] = by
    B[..., 2, 0::2] = by
    B[..., 2, 1::2] = bx
    return B


def smoothed_B(subcell: SmoothingCell, subcell_id: int = 0) -> SmoothedBOperator:
    if not subcell.area > 0:
        raise GeometryError("smoothing cell has zero area")
    bx = np.zeros(4)
    by = np.zeros(4)
    for (_, _, normal, length), N in zip(subcell.edges, subcell.boundary_shape_values):
        bx += normal[0] * N * length
        by += normal[1] * N * length
    return SmoothedBOperator(subcell_id, b_matrix(bx / subcell.area, by / subcell.area))


def smoothed_strain(b_op: SmoothedBOperator, d) -> np.ndarray:
    return b_op.entries @ np.asarray(d, dtype=float)


def subcell_stiffness(b_op: SmoothedBOperator, tangent, area: float) -> SubcellStiffness:
    D = np.asarray(tangent, dtype=float)
    if not np.all(np.isfinite(D)):
        raise NumericError("non-finite constitutive tangent")
    B = b_op.entries
    return SubcellStiffness(b_op.subcell_id, B.T @ D @ B * area, area)


def element_internal_force(subcells, b_ops, stresses, areas) -> np.ndarray:
    if not (len(subcells) == len(b_ops) == len(stresses) == len(areas)):
        raise ConfigurationError("need one stress and area per smoothing cell")
    f = np.zeros(8)
    for b_op, sig, area in zip(b_ops, stresses, areas):
        f += b_op.entries.T @ np.asarray(sig, dtype=float)[:3] * area
    return f


# ----------------------------------------------------- compatible quadrilateral

_G = 1.0 / np.sqrt(3.0)
GAUSS_2X2 = np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]])
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


def shape_functions(xi, eta):
    xi = np.asarray(xi, dtype=float)[..., None]
    eta = np.asarray(eta, dtype=float)[..., None]
    N = 0.25 * (1 + _XI * xi) * (1 + _ETA * eta)
    dN_dxi = 0.25 * _XI * (1 + _ETA * eta)
    dN_deta = 0.25 * _ETA * (1 + _XI * xi)
    return N, dN_dxi, dN_deta


def compatible_derivatives(elem_coords, xi, eta):
    """Physical shape derivatives and Jacobian determinants.

    ``elem_coords`` is (ne, 4, 2); ``xi``/``eta`` are (npt,) parametric
    points.  Returns ``(N, bx, by, detJ)`` with shapes (npt, 4),
    (ne, npt, 4), (ne, npt, 4), (ne, npt).
    """
    N, dxi, deta = shape_functions(xi, eta)
    x, y = elem_coords[..., 0], elem_coords[..., 1]
    J11 = np.einsum("pk,ek->ep", dxi, x)
    J12 = np.einsum("pk,ek->ep", dxi, y)
    J21 = np.einsum("pk,ek->ep", deta, x)
    J22 = np.einsum("pk,ek->ep", deta, y)
    det = J11 * J22 - J12 * J21
    bx = (J22[..., None] * dxi - J12[..., None] * deta) / det[..., None]
    by = (-J21[..., None] * dxi + J11[..., None] * deta) / det[..., None]
    return N, bx, by, det


def gauss_points(elem_coords):
    """2x2 Gauss data of the compatible element: (weights, bx, by, N, xy)."""
    N, bx, by, det = compatible_derivatives(elem_coords, GAUSS_2X2[:, 0], GAUSS_2X2[:, 1])
    if np.any(det <= 0):
        bad = np.flatnonzero(np.any(det <= 0, axis=1))
        raise GeometryError(f"non-positive Jacobian in elements {bad[:10].tolist()}")
    xy = np.einsum("pk,ekd->epd", N, elem_coords)
    return det, bx, by, np.broadcast_to(N, bx.shape).copy(), xy


def compatible_stiffness(coords, tangent) -> np.ndarray:
    """8x8 stiffness of the standard bilinear element by 2x2 Gauss quadrature."""
    w, bx, by, _, _ = gauss_points(np.asarray(coords, dtype=float)[None])
    B = b_matrix(bx[0], by[0])
    D = np.asarray(tangent, dtype=float)
    return np.einsum("pji,jk,pkl,p->il", B, D, B, w[0])


def cell_average_operator(coords, vertex_shape_values, order: int = 4) -> np.ndarray:
    """(1/A) * integral of the compatible operator over one smoothing cell.

    The cell is the image of a parametric quadrilateral whose corners are
    the parametric coordinates of the cell vertices; integration uses an
    ``order`` x ``order`` Gauss rule on that sub-square.
    """
    coords = np.asarray(coords, dtype=float)
    vals = np.asarray(vertex_shape_values, dtype=float)
    # parametric location of each vertex from its bilinear shape values
    xi_v = vals @ _XI
    eta_v = vals @ _ETA
    g, gw = np.polynomial.legendre.leggauss(order)
    s, t = np.meshgrid(g, g, indexing="ij")
    s, t = s.ravel(), t.ravel()
    wts = np.outer(gw, gw).ravel()
    Nsub, dsub_s, dsub_t = shape_functions(s, t)
    xi = Nsub @ xi_v
    eta = Nsub @ eta_v
    dxi_ds, dxi_dt = dsub_s @ xi_v, dsub_t @ xi_v
    deta_ds, deta_dt = dsub_s @ eta_v, dsub_t @ eta_v
    sub_det = dxi_ds * deta_dt - dxi_dt * deta_ds
    _, bx, by, det = compatible_derivatives(coords[None], xi, eta)
    w = wts * sub_det * det[0]
    area = w.sum()
    B = b_matrix(bx[0], by[0])
    return np.einsum("pij,p->ij", B, w) / area


def csfem_points(elem_coords, n_sc: int = 4):
    """Smoothing-cell integration data for many elements: (weights, bx, by, N, xy)."""
    areas, bx, by, centres, centre_shape = subcell_geometry(elem_coords, n_sc)
    return areas, bx, by, centre_shape, centres
