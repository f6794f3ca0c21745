# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled gather/scatter core for factorized-grid sampling.

Hot path of training: per query point, lerp one factor vector and bilerp one
factor matrix for every rank of every mode, producing per-rank products and
(backward) scattering gradients into the factors and the query coordinates.
Loops are serial so gradient accumulation is deterministic.
"""

import numpy as np

cimport numpy as cnp

ctypedef cnp.int64_t i64
ctypedef cnp.float64_t f64


def vm_forward(double[:, ::1] vx, double[:, ::1] vy, double[:, ::1] vz,
               double[:, :, ::1] myz, double[:, :, ::1] mxz, double[:, :, ::1] mxy,
               i64[::1] ix, i64[::1] iy, i64[::1] iz,
               double[::1] fx, double[::1] fy, double[::1] fz):
    """Per-rank products at P points; returns [P, R1+R2+R3]."""
    cdef Py_ssize_t P = ix.shape[0]
    cdef Py_ssize_t R1 = vx.shape[0], R2 = vy.shape[0], R3 = vz.shape[0]
    out_arr = np.empty((P, R1 + R2 + R3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t p, r, a, b, c
    cdef double gx, gy, gz, hx, hy, hz, lv, bm
    for p in range(P):
        a = ix[p]; b = iy[p]; c = iz[p]
        gx = fx[p]; gy = fy[p]; gz = fz[p]
        hx = 1.0 - gx; hy = 1.0 - gy; hz = 1.0 - gz
        for r in range(R1):
            lv = vx[r, a] * hx + vx[r, a + 1] * gx
            bm = (myz[r, b, c] * hy * hz + myz[r, b, c + 1] * hy * gz
                  + myz[r, b + 1, c] * gy * hz + myz[r, b + 1, c + 1] * gy * gz)
            out[p, r] = lv * bm
        for r in range(R2):
            lv = vy[r, b] * hy + vy[r, b + 1] * gy
            bm = (mxz[r, a, c] * hx * hz + mxz[r, a, c + 1] * hx * gz
                  + mxz[r, a + 1, c] * gx * hz + mxz[r, a + 1, c + 1] * gx * gz)
            out[p, R1 + r] = lv * bm
        for r in range(R3):
            lv = vz[r, c] * hz + vz[r, c + 1] * gz
            bm = (mxy[r, a, b] * hx * hy + mxy[r, a, b + 1] * hx * gy
                  + mxy[r, a + 1, b] * gx * hy + mxy[r, a + 1, b + 1] * gx * gy)
            out[p, R1 + R2 + r] = lv * bm
    return out_arr


def vm_backward(double[:, ::1] vx, double[:, ::1] vy, double[:, ::1] vz,
                double[:, :, ::1] myz, double[:, :, ::1] mxz, double[:, :, ::1] mxy,
                i64[::1] ix, i64[::1] iy, i64[::1] iz,
                double[::1] fx, double[::1] fy, double[::1] fz,
                double[:, ::1] gout):
    """Gradients of the per-rank products w.r.t. factors and coordinates.

    Returns (gvx, gvy, gvz, gmyz, gmxz, gmxy, gcoord[P,3]); gcoord is the
    derivative in grid units (the caller applies clamp masks and world scale).
    """
    cdef Py_ssize_t P = ix.shape[0]
    cdef Py_ssize_t R1 = vx.shape[0], R2 = vy.shape[0], R3 = vz.shape[0]
    gvx_arr = np.zeros((R1, vx.shape[1]), dtype=np.float64)
    gvy_arr = np.zeros((R2, vy.shape[1]), dtype=np.float64)
    gvz_arr = np.zeros((R3, vz.shape[1]), dtype=np.float64)
    gmyz_arr = np.zeros((R1, myz.shape[1], myz.shape[2]), dtype=np.float64)
    gmxz_arr = np.zeros((R2, mxz.shape[1], mxz.shape[2]), dtype=np.float64)
    gmxy_arr = np.zeros((R3, mxy.shape[1], mxy.shape[2]), dtype=np.float64)
    gf_arr = np.zeros((P, 3), dtype=np.float64)
    cdef double[:, ::1] gvx = gvx_arr, gvy = gvy_arr, gvz = gvz_arr
    cdef double[:, :, ::1] gmyz = gmyz_arr, gmxz = gmxz_arr, gmxy = gmxy_arr
    cdef double[:, ::1] gf = gf_arr
    cdef Py_ssize_t p, r, a, b, c
    cdef double gx, gy, gz, hx, hy, hz, lv, bm, go, t
    cdef double m00, m01, m10, m11
    for p in range(P):
        a = ix[p]; b = iy[p]; c = iz[p]
        gx = fx[p]; gy = fy[p]; gz = fz[p]
        hx = 1.0 - gx; hy = 1.0 - gy; hz = 1.0 - gz
        for r in range(R1):
            go = gout[p, r]
            m00 = myz[r, b, c]; m01 = myz[r, b, c + 1]
            m10 = myz[r, b + 1, c]; m11 = myz[r, b + 1, c + 1]
            lv = vx[r, a] * hx + vx[r, a + 1] * gx
            bm = m00 * hy * hz + m01 * hy * gz + m10 * gy * hz + m11 * gy * gz
            gvx[r, a] += go * bm * hx
            gvx[r, a + 1] += go * bm * gx
            t = go * lv
            gmyz[r, b, c] += t * hy * hz
            gmyz[r, b, c + 1] += t * hy * gz
            gmyz[r, b + 1, c] += t * gy * hz
            gmyz[r, b + 1, c + 1] += t * gy * gz
            gf[p, 0] += go * (vx[r, a + 1] - vx[r, a]) * bm
            gf[p, 1] += t * ((m10 - m00) * hz + (m11 - m01) * gz)
            gf[p, 2] += t * ((m01 - m00) * hy + (m11 - m10) * gy)
        for r in range(R2):
            go = gout[p, R1 + r]
            m00 = mxz[r, a, c]; m01 = mxz[r, a, c + 1]
            m10 = mxz[r, a + 1, c]; m11 = mxz[r, a + 1, c + 1]
            lv = vy[r, b] * hy + vy[r, b + 1] * gy
            bm = m00 * hx * hz + m01 * hx * gz + m10 * gx * hz + m11 * gx * gz
            gvy[r, b] += go * bm * hy
            gvy[r, b + 1] += go * bm * gy
            t = go * lv
            gmxz[r, a, c] += t * hx * hz
            gmxz[r, a, c + 1] += t * hx * gz
            gmxz[r, a + 1, c] += t * gx * hz
            gmxz[r, a + 1, c + 1] += t * gx * gz
            gf[p, 1] += go * (vy[r, b + 1] - vy[r, b]) * bm
            gf[p, 0] += t * ((m10 - m00) * hz + (m11 - m01) * gz)
            gf[p, 2] += t * ((m01 - m00) * hx + (m11 - m10) * gx)
        for r in range(R3):
            go = gout[p, R1 + R2 + r]
            m00 = mxy[r, a, b]; m01 = mxy[r, a, b + 1]
            m10 = mxy[r, a + 1, b]; m11 = mxy[r, a + 1, b + 1]
            lv = vz[r, c] * hz + vz[r, c + 1] * gz
            bm = m00 * hx * hy + m01 * hx * gy + m10 * gx * hy + m11 * gx * gy
            gvz[r, c] += go * bm * hz
            gvz[r, c + 1] += go * bm * gz
            t = go * lv
            gmxy[r, a, b] += t * hx * hy
            gmxy[r, a, b + 1] += t * hx * gy
            gmxy[r, a + 1, b] += t * gx * hy
            gmxy[r, a + 1, b + 1] += t * gx * gy
            gf[p, 2] += go * (vz[r, c + 1] - vz[r, c]) * bm
            gf[p, 0] += t * ((m10 - m00) * hy + (m11 - m01) * gy)
            gf[p, 1] += t * ((m01 - m00) * hx + (m11 - m10) * gx)
    return gvx_arr, gvy_arr, gvz_arr, gmyz_arr, gmxz_arr, gmxy_arr, gf_arr
