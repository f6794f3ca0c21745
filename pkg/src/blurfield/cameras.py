"""Pinhole camera model, look-at poses, and pixel/ray conversions.

Conventions: integer pixel coordinates address pixel centers, x right, y down,
z forward in camera space; world is z-up right-handed. Poses are (R, origin)
with R the camera-to-world rotation.
"""

import numpy as np

from . import autodiff as ad


class Intrinsics:
    def __init__(self, focal, width, height, cx=None, cy=None):
        self.focal = float(focal)
        self.width = int(width)
        self.height = int(height)
        self.cx = float((width - 1) / 2.0 if cx is None else cx)
        self.cy = float((height - 1) / 2.0 if cy is None else cy)

    def to_dict(self):
        return {"focal": self.focal, "width": self.width, "height": self.height,
                "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d):
        return cls(d["focal"], d["width"], d["height"], d["cx"], d["cy"])


def look_at_rotation(position, target, up=(0.0, 0.0, 1.0)):
    """Camera-to-world rotation looking from position toward target."""
    position = np.asarray(position, float)
    f = np.asarray(target, float) - position
    nf = np.linalg.norm(f)
    if nf < 1e-12:
        raise ValueError("look_at: position and target coincide")
    f = f / nf
    up = np.asarray(up, float)
    r = np.cross(f, up)
    nr = np.linalg.norm(r)
    if nr < 1e-9:
        raise ValueError("look_at: view direction parallel to up vector")
    r = r / nr
    d = np.cross(f, r)  # camera down (y axis)
    return np.stack([r, d, f], axis=1)


def pixel_dirs_cam(intr, p):
    """Unnormalized camera-space directions for pixel coords p [...,2]."""
    p = np.asarray(p, float)
    x = (p[..., 0] - intr.cx) / intr.focal
    y = (p[..., 1] - intr.cy) / intr.focal
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def pixel_to_world_dir(intr, R, p):
    """Unit world direction(s) through pixel(s) p for one pose R."""
    d = pixel_dirs_cam(intr, p) @ R.T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def pixel_to_world_dir_diff(intr, rots, p):
    """Differentiable pixel -> unit world direction with per-ray rotations.

    p: Tensor [B,2]; rots: constant ndarray [B,3,3]. The warp path needs
    d(direction)/d(pixel), so this runs on autodiff ops.
    """
    B = p.data.shape[0]
    inv_f = 1.0 / intr.focal
    x = ad.mul(ad.sub(p[:, 0:1], ad.Tensor(intr.cx)), ad.Tensor(inv_f))
    y = ad.mul(ad.sub(p[:, 1:2], ad.Tensor(intr.cy)), ad.Tensor(inv_f))
    ones = ad.Tensor(np.ones((B, 1)))
    dcam = ad.concat([x, y, ones], axis=1)
    # world_i = sum_j R[b,i,j] * dcam[b,j]
    d = ad.sum_(ad.mul(ad.Tensor(rots), ad.reshape(dcam, (B, 1, 3))), axis=2)
    n = ad.sqrt(ad.sum_(ad.mul(d, d), axis=1, keepdims=True))
    return ad.div(d, n)


def project(intr, R, origin, points):
    """World points [...,3] -> (pixel coords [...,2], camera depth [...])."""
    pc = (np.asarray(points, float) - origin) @ R  # camera frame
    z = pc[..., 2]
    px = pc[..., 0] / z * intr.focal + intr.cx
    py = pc[..., 1] / z * intr.focal + intr.cy
    return np.stack([px, py], axis=-1), z


def view_pixel_grid(intr):
    """All integer pixel centers of a view, row-major, as [H*W, 2] (x, y)."""
    xs = np.arange(intr.width, dtype=np.float64)
    ys = np.arange(intr.height, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=-1)


def view_rays(intr, R, origin):
    """Origins [H*W,3] and unit directions [H*W,3] for every pixel center."""
    pix = view_pixel_grid(intr)
    dirs = pixel_to_world_dir(intr, R, pix)
    origins = np.broadcast_to(np.asarray(origin, float), dirs.shape).copy()
    return origins, dirs, pix
