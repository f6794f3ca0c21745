"""Pure-numpy fallback for the factorized-grid sampling core.

Mirrors _gridcore exactly; gradient scatter uses bincount on flattened
indices, which is deterministic and much faster than np.add.at.
"""

import numpy as np


def _bilerp(m, i0, j0, fi, fj):
    hi, hj = 1.0 - fi, 1.0 - fj
    return (m[:, i0, j0] * hi * hj + m[:, i0, j0 + 1] * hi * fj
            + m[:, i0 + 1, j0] * fi * hj + m[:, i0 + 1, j0 + 1] * fi * fj)


def vm_forward(vx, vy, vz, myz, mxz, mxy, ix, iy, iz, fx, fy, fz):
    P = ix.shape[0]
    R1, R2, R3 = vx.shape[0], vy.shape[0], vz.shape[0]
    out = np.empty((P, R1 + R2 + R3), dtype=np.float64)
    lvx = vx[:, ix] * (1.0 - fx) + vx[:, ix + 1] * fx
    out[:, :R1] = (lvx * _bilerp(myz, iy, iz, fy, fz)).T
    lvy = vy[:, iy] * (1.0 - fy) + vy[:, iy + 1] * fy
    out[:, R1:R1 + R2] = (lvy * _bilerp(mxz, ix, iz, fx, fz)).T
    lvz = vz[:, iz] * (1.0 - fz) + vz[:, iz + 1] * fz
    out[:, R1 + R2:] = (lvz * _bilerp(mxy, ix, iy, fx, fy)).T
    return out


def _scatter_vec(shape, r_idx, col, w):
    R, L = shape
    lin = (r_idx[:, None] * L + col[None, :]).ravel()
    return np.bincount(lin, weights=w.ravel(), minlength=R * L).reshape(R, L)


def _scatter_mat(shape, r_idx, i0, j0, w00, w01, w10, w11):
    R, H, W = shape
    g = np.zeros(R * H * W)
    base = r_idx[:, None] * (H * W)
    for di, dj, w in ((0, 0, w00), (0, 1, w01), (1, 0, w10), (1, 1, w11)):
        lin = (base + (i0 + di)[None, :] * W + (j0 + dj)[None, :]).ravel()
        g += np.bincount(lin, weights=w.ravel(), minlength=R * H * W)
    return g.reshape(R, H, W)


def _mode_backward(v, m, i0, j0, k0, fi, fj, fk, go):
    """One mode: vector along axis i, matrix over (j, k). go is [R, P].

    Returns (gv, gm, gfi, gfj, gfk) with coordinate grads per point [P].
    """
    hi, hj, hk = 1.0 - fi, 1.0 - fj, 1.0 - fk
    lv = v[:, i0] * hi + v[:, i0 + 1] * fi
    m00 = m[:, j0, k0]
    m01 = m[:, j0, k0 + 1]
    m10 = m[:, j0 + 1, k0]
    m11 = m[:, j0 + 1, k0 + 1]
    bm = m00 * hj * hk + m01 * hj * fk + m10 * fj * hk + m11 * fj * fk
    R = v.shape[0]
    r_idx = np.arange(R)
    gobm = go * bm
    gv = _scatter_vec(v.shape, r_idx, i0, gobm * hi)
    gv += _scatter_vec(v.shape, r_idx, i0 + 1, gobm * fi)
    t = go * lv
    gm = _scatter_mat(m.shape, r_idx, j0, k0,
                      t * hj * hk, t * hj * fk, t * fj * hk, t * fj * fk)
    gfi = (go * (v[:, i0 + 1] - v[:, i0]) * bm).sum(axis=0)
    gfj = (t * ((m10 - m00) * hk + (m11 - m01) * fk)).sum(axis=0)
    gfk = (t * ((m01 - m00) * hj + (m11 - m10) * fj)).sum(axis=0)
    return gv, gm, gfi, gfj, gfk


def vm_backward(vx, vy, vz, myz, mxz, mxy, ix, iy, iz, fx, fy, fz, gout):
    P = ix.shape[0]
    R1, R2 = vx.shape[0], vy.shape[0]
    gf = np.zeros((P, 3))
    gvx, gmyz, dx, dy, dz = _mode_backward(
        vx, myz, ix, iy, iz, fx, fy, fz, gout[:, :R1].T)
    gf[:, 0] += dx; gf[:, 1] += dy; gf[:, 2] += dz
    gvy, gmxz, dy, dx, dz = _mode_backward(
        vy, mxz, iy, ix, iz, fy, fx, fz, gout[:, R1:R1 + R2].T)
    gf[:, 0] += dx; gf[:, 1] += dy; gf[:, 2] += dz
    gvz, gmxy, dz, dx, dy = _mode_backward(
        vz, mxy, iz, ix, iy, fz, fx, fy, gout[:, R1 + R2:].T)
    gf[:, 0] += dx; gf[:, 1] += dy; gf[:, 2] += dz
    return gvx, gvy, gvz, gmyz, gmxz, gmxy, gf
