# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-point kernels: Mohr-Coulomb stress update and cell stiffness.

Mirrors the reference implementation in ``geosmooth._reference`` point for
point; the two are cross-checked in the test suite.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, atan2, fabs, hypot

cnp.import_array()

cdef int MAX_ITER = 50
cdef double APEX_STIFFNESS = 1e-6

cdef int ELASTIC = 0, MAIN = 1, EDGE_RIGHT = 2, EDGE_LEFT = 3, APEX = 4


cdef struct Mat:
    double lam, G, K, c, sphi, cphi, spsi, H
    int plastic


cdef inline void plane_grad(int key, double sp, double* out) nogil:
    # key 0: (1, 3) plane; 1: (2, 3) plane; 2: (1, 2) plane
    out[0] = 0.0; out[1] = 0.0; out[2] = 0.0
    if key == 0:
        out[0] = 1.0 + sp; out[2] = -(1.0 - sp)
    elif key == 1:
        out[1] = 1.0 + sp; out[2] = -(1.0 - sp)
    else:
        out[0] = 1.0 + sp; out[1] = -(1.0 - sp)


cdef inline void dp_mul(Mat* m, double* x, double* out) nogil:
    cdef double tr = x[0] + x[1] + x[2]
    cdef int i
    for i in range(3):
        out[i] = m.lam * tr + 2.0 * m.G * x[i]


cdef inline void dp_solve(Mat* m, double* x, double* out) nogil:
    cdef double tr = x[0] + x[1] + x[2]
    cdef double f = m.lam / (2.0 * m.G + 3.0 * m.lam)
    cdef int i
    for i in range(3):
        out[i] = (x[i] - f * tr) / (2.0 * m.G)


cdef int solve_planes(Mat* m, int nk, int* keys, double* sig_tr, double coh0,
                      double* dl, double* sig) nogil:
    cdef double a[2][3]
    cdef double flow[2][3]
    cdef double btmp[3]
    cdef double J[2][2]
    cdef double r[2]
    cdef double scale, coh, det, d0, d1, amax
    cdef int i, j, k, it
    for i in range(nk):
        plane_grad(keys[i], m.sphi, a[i])
        plane_grad(keys[i], m.spsi, btmp)
        dp_mul(m, btmp, flow[i])
        dl[i] = 0.0
    for i in range(nk):
        for j in range(nk):
            J[i][j] = (a[i][0] * flow[j][0] + a[i][1] * flow[j][1] + a[i][2] * flow[j][2]
                       + 2.0 * m.cphi * m.H)
    amax = fabs(sig_tr[0])
    for k in range(1, 3):
        if fabs(sig_tr[k]) > amax:
            amax = fabs(sig_tr[k])
    scale = 1.0
    if fabs(coh0) > scale:
        scale = fabs(coh0)
    if amax > scale:
        scale = amax
    for it in range(MAX_ITER):
        for k in range(3):
            sig[k] = sig_tr[k]
            for j in range(nk):
                sig[k] -= dl[j] * flow[j][k]
        coh = coh0
        for j in range(nk):
            coh += m.H * dl[j]
        amax = 0.0
        for i in range(nk):
            r[i] = a[i][0] * sig[0] + a[i][1] * sig[1] + a[i][2] * sig[2] - 2.0 * coh * m.cphi
            if fabs(r[i]) > amax:
                amax = fabs(r[i])
        if amax <= 1e-13 * scale:
            return 0
        if nk == 1:
            dl[0] += r[0] / J[0][0]
        else:
            det = J[0][0] * J[1][1] - J[0][1] * J[1][0]
            d0 = (r[0] * J[1][1] - J[0][1] * r[1]) / det
            d1 = (J[0][0] * r[1] - J[1][0] * r[0]) / det
            dl[0] += d0
            dl[1] += d1
    return -1


cdef int return_principal(Mat* m, double* sig_tr, double kappa, double* sig, double* dlam) nogil:
    cdef double coh0 = m.c + kappa
    cdef double dl[2]
    cdef int keys[2]
    cdef double tol, amax, p, coh, cot, p_tr, denom, nrm
    cdef double tmp[3]
    cdef double out3[3]
    cdef int k, region
    amax = 1.0
    for k in range(3):
        if fabs(sig_tr[k]) > amax:
            amax = fabs(sig_tr[k])
    if coh0 > amax:
        amax = coh0
    tol = 1e-12 * amax

    keys[0] = 0
    if solve_planes(m, 1, keys, sig_tr, coh0, dl, sig) != 0:
        return -1
    if sig[0] >= sig[1] - tol and sig[1] >= sig[2] - tol:
        dlam[0] = dl[0]
        return MAIN

    if sig[1] - sig[0] > sig[2] - sig[1]:
        keys[1] = 1
        region = EDGE_RIGHT
    else:
        keys[1] = 2
        region = EDGE_LEFT
    if solve_planes(m, 2, keys, sig_tr, coh0, dl, sig) != 0:
        return -1
    if (dl[0] >= 0 and dl[1] >= 0 and sig[0] >= sig[1] - tol and sig[1] >= sig[2] - tol
            and sig[0] >= sig[2] - tol):
        p = (sig[0] + sig[1] + sig[2]) / 3.0
        coh = coh0 + m.H * (dl[0] + dl[1])
        if m.sphi <= 0.0 or p <= coh * m.cphi / m.sphi + tol:
            dlam[0] = dl[0] + dl[1]
            return region

    if m.sphi <= 0.0:
        return -1
    cot = m.cphi / m.sphi
    p_tr = (sig_tr[0] + sig_tr[1] + sig_tr[2]) / 3.0
    denom = 2.0 * m.K * m.spsi + m.H * cot
    if denom > 0:
        dlam[0] = (p_tr - coh0 * cot) / denom
        p = (coh0 + m.H * dlam[0]) * cot
    else:
        p = coh0 * cot
        for k in range(3):
            tmp[k] = sig_tr[k] - p
        dp_solve(m, tmp, out3)
        nrm = sqrt(out3[0] * out3[0] + out3[1] * out3[1] + out3[2] * out3[2])
        dlam[0] = nrm
    for k in range(3):
        sig[k] = p
    return APEX


cdef inline void to_cart(double* by_slot, double c, double s, double shear, double* out) nogil:
    out[0] = by_slot[0] * c * c + by_slot[1] * s * s
    out[1] = by_slot[0] * s * s + by_slot[1] * c * c
    out[2] = by_slot[2]
    out[3] = shear * (by_slot[0] - by_slot[1]) * s * c


cdef inline void elastic4(Mat* m, double D[4][4]) nogil:
    cdef int i, j
    for i in range(4):
        for j in range(4):
            D[i][j] = 0.0
    for i in range(3):
        for j in range(3):
            D[i][j] = m.lam
        D[i][i] = m.lam + 2.0 * m.G
    D[3][3] = m.G


cdef int tangent(Mat* m, int region, int* slots, double c, double s, double D[4][4]) nogil:
    cdef double A[2][4]
    cdef double Bv[2][4]
    cdef double DB[2][4]
    cdef double AD[2][4]
    cdef double M[2][2]
    cdef double Minv[2][2]
    cdef double g[3]
    cdef double by_slot[3]
    cdef double det, hard
    cdef int nk, i, j, k, l
    cdef int keys[2]
    elastic4(m, D)
    if region == ELASTIC:
        return 0
    if region == APEX:
        for i in range(4):
            for j in range(4):
                D[i][j] *= APEX_STIFFNESS
        return 0
    keys[0] = 0
    nk = 1
    if region == EDGE_RIGHT:
        keys[1] = 1
        nk = 2
    elif region == EDGE_LEFT:
        keys[1] = 2
        nk = 2
    for k in range(nk):
        plane_grad(keys[k], m.sphi, g)
        for i in range(3):
            by_slot[slots[i]] = g[i]
        to_cart(by_slot, c, s, 2.0, A[k])
        plane_grad(keys[k], m.spsi, g)
        for i in range(3):
            by_slot[slots[i]] = g[i]
        to_cart(by_slot, c, s, 2.0, Bv[k])
        for i in range(4):
            DB[k][i] = 0.0
            AD[k][i] = 0.0
            for j in range(4):
                DB[k][i] += D[i][j] * Bv[k][j]
                AD[k][i] += A[k][j] * D[j][i]
    hard = 2.0 * m.cphi * m.H
    for k in range(nk):
        for l in range(nk):
            M[k][l] = hard
            for i in range(4):
                M[k][l] += A[k][i] * DB[l][i]
    if nk == 1:
        if not M[0][0] > 0:
            return -2
        for i in range(4):
            for j in range(4):
                D[i][j] -= DB[0][i] * AD[0][j] / M[0][0]
        return 0
    det = M[0][0] * M[1][1] - M[0][1] * M[1][0]
    if not det > 0:
        return -2
    Minv[0][0] = M[1][1] / det
    Minv[1][1] = M[0][0] / det
    Minv[0][1] = -M[0][1] / det
    Minv[1][0] = -M[1][0] / det
    for i in range(4):
        for j in range(4):
            for k in range(2):
                for l in range(2):
                    D[i][j] -= DB[k][i] * Minv[k][l] * AD[l][j]
    return 0


def material_update(double[:, ::1] stress_old, double[:, ::1] deps, double[::1] kappa_old,
                    long[::1] mat_index, double[:, ::1] table):
    """Batch stress update.

    ``table`` rows are ``(E, nu, c, phi, psi, H, plastic)``.  Returns
    ``(stress, deps_p, kappa, region, dlam, tangent3)``; a negative region
    flags a failed return at that point.
    """
    cdef Py_ssize_t n = stress_old.shape[0]
    cdef Py_ssize_t nm = table.shape[0]
    stress_np = np.empty((n, 4))
    depsp_np = np.zeros((n, 4))
    kappa_np = np.empty(n)
    region_np = np.zeros(n, dtype=np.int64)
    dlam_np = np.zeros(n)
    tan_np = np.empty((n, 3, 3))
    cdef double[:, ::1] s_new = stress_np
    cdef double[:, ::1] dep = depsp_np
    cdef double[::1] kap = kappa_np
    cdef long[::1] reg = region_np
    cdef double[::1] dlm = dlam_np
    cdef double[:, :, ::1] tan = tan_np

    cdef Mat* mats
    cdef Mat mbuf[64]
    if nm > 64:
        raise ValueError("at most 64 materials")
    cdef Py_ssize_t im
    cdef double E, nu
    for im in range(nm):
        E = table[im, 0]
        nu = table[im, 1]
        mbuf[im].lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        mbuf[im].G = E / (2.0 * (1.0 + nu))
        mbuf[im].K = E / (3.0 * (1.0 - 2.0 * nu))
        mbuf[im].c = table[im, 2]
        mbuf[im].sphi = sin(table[im, 3])
        mbuf[im].cphi = cos(table[im, 3])
        mbuf[im].spsi = sin(table[im, 4])
        mbuf[im].H = table[im, 5]
        mbuf[im].plastic = 1 if table[im, 6] != 0 else 0
    mats = mbuf

    cdef Py_ssize_t p
    cdef int i, j, region, status, a, b, t, k
    cdef double tr[4]
    cdef double D[4][4]
    cdef double sig_tr[3]
    cdef double sig[3]
    cdef double raw[3]
    cdef int slots[3]
    cdef double dlam, centre, half, radius, ang, c, s, F, tol, ref, coh
    cdef double diff[3]
    cdef double ep[3]
    cdef double by_slot[3]
    cdef double out4[4]
    cdef Mat* m
    cdef int inpl[3]
    inpl[0] = 0; inpl[1] = 1; inpl[2] = 3

    with nogil:
        for p in range(n):
            m = &mats[mat_index[p]]
            elastic4(m, D)
            for i in range(4):
                tr[i] = stress_old[p, i]
                for j in range(4):
                    tr[i] += D[i][j] * deps[p, j]
            kap[p] = kappa_old[p]
            region = ELASTIC
            if m.plastic:
                centre = 0.5 * (tr[0] + tr[1])
                half = 0.5 * (tr[0] - tr[1])
                radius = hypot(half, tr[3])
                if radius > 0.0:
                    ang = 0.5 * atan2(tr[3], half)
                    c = cos(ang)
                    s = sin(ang)
                else:
                    c = 1.0
                    s = 0.0
                raw[0] = centre + radius
                raw[1] = centre - radius
                raw[2] = tr[2]
                # stable descending sort of the three slots
                slots[0] = 0; slots[1] = 1; slots[2] = 2
                for a in range(1, 3):
                    b = a
                    while b > 0 and raw[slots[b - 1]] < raw[slots[b]]:
                        t = slots[b - 1]; slots[b - 1] = slots[b]; slots[b] = t
                        b -= 1
                for k in range(3):
                    sig_tr[k] = raw[slots[k]]
                coh = m.c + kappa_old[p]
                F = (sig_tr[0] - sig_tr[2]) + (sig_tr[0] + sig_tr[2]) * m.sphi - 2.0 * coh * m.cphi
                ref = fabs(F)
                if 2.0 * coh * m.cphi > ref:
                    ref = 2.0 * coh * m.cphi
                tol = 1e-8 * ref if ref > 0 else 1e-12
                if F > tol:
                    region = return_principal(m, sig_tr, kappa_old[p], sig, &dlam)
                    if region < 0:
                        reg[p] = -1
                        continue
                    for k in range(3):
                        diff[k] = sig_tr[k] - sig[k]
                    dp_solve(m, diff, ep)
                    for k in range(3):
                        by_slot[slots[k]] = sig[k]
                    to_cart(by_slot, c, s, 1.0, out4)
                    for i in range(4):
                        tr[i] = out4[i]
                    for k in range(3):
                        by_slot[slots[k]] = ep[k]
                    to_cart(by_slot, c, s, 2.0, out4)
                    for i in range(4):
                        dep[p, i] = out4[i]
                    dlm[p] = dlam
                    kap[p] = kappa_old[p] + m.H * dlam
                    status = tangent(m, region, slots, c, s, D)
                    if status != 0:
                        reg[p] = -2
                        continue
            for i in range(4):
                s_new[p, i] = tr[i]
            reg[p] = region
            for i in range(3):
                for j in range(3):
                    tan[p, i, j] = D[inpl[i]][inpl[j]]
    return stress_np, depsp_np, kappa_np, region_np, dlam_np, tan_np


def cell_stiffness(double[:, :, :, ::1] B, double[:, :, :, ::1] D, double[:, ::1] w):
    """Element matrices ``sum_p w B^T D B`` for (ne, np, 3, 8) operators."""
    cdef Py_ssize_t ne = B.shape[0], npt = B.shape[1]
    out_np = np.zeros((ne, 8, 8))
    cdef double[:, :, ::1] out = out_np
    cdef double DB[3][8]
    cdef Py_ssize_t e, p, i, j, k
    cdef double acc, wp
    with nogil:
        for e in range(ne):
            for p in range(npt):
                wp = w[e, p]
                for i in range(3):
                    for j in range(8):
                        acc = 0.0
                        for k in range(3):
                            acc = acc + D[e, p, i, k] * B[e, p, k, j]
                        DB[i][j] = acc * wp
                for i in range(8):
                    for j in range(8):
                        acc = 0.0
                        for k in range(3):
                            acc = acc + B[e, p, k, i] * DB[k][j]
                        out[e, i, j] += acc
    return out_np
